from pathlib import Path
from typing import List, Sequence

import pandas as pd
from loguru import logger
from pydantic import ValidationError

from app.models.manifest import MANIFEST_COLUMNS, REQUIRED_COLUMNS, ManifestEntry
from app.utils.error import ManifestError, writing
from app.utils.path import safe_join

MANIFEST_VERSION = 1
VERSION_PREFIX = "# manifest-version:"


def _read_version(path: Path) -> tuple[int, int]:
    """Returns (format version, number of leading comment lines)."""
    with open(path, "r", encoding="utf-8") as file:
        first = file.readline().strip()
    if not first.startswith("#"):
        return MANIFEST_VERSION, 0
    if not first.startswith(VERSION_PREFIX):
        raise ManifestError(f"Unrecognised manifest comment line in {path}: {first!r}")
    try:
        version = int(first[len(VERSION_PREFIX):].strip())
    except ValueError:
        raise ManifestError(f"Unreadable manifest version in {path}: {first!r}")
    if version != MANIFEST_VERSION:
        raise ManifestError(f"Manifest {path} has version {version}, expected {MANIFEST_VERSION}")
    return version, 1


def load_manifest(path: Path, check_files: bool = True) -> List[ManifestEntry]:
    """
    Load a CSV manifest with columns path,label,pai_type,dataset_id[,subject_id].

    Image paths are resolved relative to the manifest's directory. Every bad
    row is reported with its line number in a single ManifestError.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifest not found: {path}")
    _, skip = _read_version(path)
    try:
        # blank lines stay in the frame so row positions map onto file lines
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skiprows=skip, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ManifestError(f"Manifest {path} has no header row")

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"Manifest {path} is missing columns: {', '.join(missing)}")
    unknown = [c for c in frame.columns if c not in MANIFEST_COLUMNS]
    if unknown:
        raise ManifestError(f"Manifest {path} has unknown columns: {', '.join(unknown)}")

    root = path.parent
    offenders: List[str] = []
    entries: List[ManifestEntry] = []
    seen: dict[str, int] = {}
    header_line = skip + 1
    for i, row in enumerate(frame.to_dict(orient="records")):
        line = header_line + 1 + i
        if all(pd.isna(value) or value == "" for value in row.values()):
            offenders.append(f"line {line}: blank row")
            continue
        try:
            entry = ManifestEntry(**row)
            resolved = safe_join(root, entry.path)
        except ValidationError as e:
            errors = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'row'}: {err['msg']}" for err in e.errors())
            offenders.append(f"line {line}: {errors}")
            continue
        except ManifestError as e:
            offenders.append(f"line {line}: {e}")
            continue
        key = str(resolved)
        if key in seen:
            offenders.append(f"line {line}: duplicate path {entry.path} (first seen on line {seen[key]})")
            continue
        seen[key] = line
        if check_files and not resolved.is_file():
            offenders.append(f"line {line}: image not found {entry.path}")
            continue
        entries.append(entry.model_copy(update={"path": key}))

    if offenders:
        logger.error(f"Manifest {path} rejected with {len(offenders)} bad rows")
        raise ManifestError(f"Invalid manifest {path}", offenders)
    if not entries:
        logger.warning(f"Manifest {path} contains no entries")
    else:
        logger.info(f"Loaded {len(entries)} entries from {path}")
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path: Path, root: Path | None = None) -> Path:
    """Write entries as CSV; paths under `root` are stored relative to it."""
    path = Path(path)
    rows = []
    for entry in entries:
        row = entry.model_dump()
        if root is not None and Path(entry.path).is_absolute():
            row["path"] = str(Path(entry.path).relative_to(Path(root).resolve()))
        row["subject_id"] = row["subject_id"] or ""
        rows.append(row)
    frame = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    with writing(path), open(path, "w", encoding="utf-8", newline="") as file:
        file.write(f"{VERSION_PREFIX} {MANIFEST_VERSION}\n")
        frame.to_csv(file, index=False)
    return path
