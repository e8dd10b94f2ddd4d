from pathlib import Path
from typing import Sequence
import os

import dask
import numpy as np
from loguru import logger
from PIL import Image, UnidentifiedImageError

from app.utils.error import InvalidInputError

# Worker cap for image decoding, scoring and fold execution
THREADS = max(1, int(os.getenv("GRUAUNET_THREADS", str(os.cpu_count() or 1))))


def load_image(path: Path | str, size: int) -> np.ndarray:
    """Decode to 8-bit RGB, resize bilinearly to size x size, scale to [0, 1], return [3, H, W]."""
    try:
        with Image.open(path) as image:
            rgb = image.convert("RGB")
            if rgb.size != (size, size):
                rgb = rgb.resize((size, size), Image.Resampling.BILINEAR)
            pixels = np.asarray(rgb, dtype=np.float32) / 255.0
    except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
        logger.error(f"Cannot read image {path}: {e}")
        raise InvalidInputError(f"Cannot read image {path}: {e}") from e
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def load_images(paths: Sequence[Path | str], size: int, threads: int = THREADS) -> np.ndarray:
    """Decode many images in parallel; the result keeps the order of `paths`."""
    if not paths:
        return np.zeros((0, 3, size, size), dtype=np.float32)
    tasks = [dask.delayed(load_image)(path, size) for path in paths]
    images = dask.compute(*tasks, scheduler="threads", num_workers=threads)
    logger.debug(f"Decoded {len(images)} images at {size}x{size} with {threads} threads")
    return np.stack(images)
