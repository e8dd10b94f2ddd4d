from loguru import logger
from pathlib import Path

from app.utils.error import ManifestError


def safe_join(base: Path, *paths) -> Path:
    """
    Safely join paths so dataset files cannot point outside their root.

    Args:
        base (Path): The dataset root (usually the manifest's directory).
        *paths (str): Path components to join.

    Returns:
        Path: The resolved absolute path.

    Raises:
        ManifestError: If the path tries to escape the base directory.
    """
    base = Path(base).resolve()
    full_path = (base / Path(*paths)).resolve()
    if not full_path.is_relative_to(base):
        logger.error(f"Invalid Path: {full_path}")
        raise ManifestError(f"Path {Path(*paths)} escapes dataset root {base}")

    return full_path
