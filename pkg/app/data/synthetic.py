"""
Seeded procedural fingerprint stand-ins.

Bonafide images are smooth oriented ridge sinusoids. Attack images carry the
same ridges plus a brightness lift and a high-frequency noise overlay whose
grain depends on the PAI tag. A dataset-level tint and ridge-frequency range
make two datasets look different while sharing that cue.
"""

from pathlib import Path
from typing import List, Tuple
import zlib

import numpy as np
from loguru import logger
from PIL import Image

from app.data.manifest import write_manifest
from app.models.manifest import ManifestEntry, SyntheticSpec
from app.utils.error import writing


def _pai_grain(tag: str) -> int:
    # stable per-tag noise block size in pixels (1 or 2)
    return 1 + zlib.crc32(tag.encode("utf-8")) % 2


def render_sample(spec: SyntheticSpec, index: int, pai_type: str | None) -> np.ndarray:
    """[H, W, 3] float image in [0, 1] for sample `index` (seeded by spec.seed and index)."""
    rng = np.random.default_rng([spec.seed, index])
    size = spec.image_size
    coords = np.arange(size) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cycles = rng.uniform(*spec.ridge_cycles)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ridges = 0.5 + 0.35 * np.sin(2.0 * np.pi * cycles * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)

    if pai_type is not None:
        grain = _pai_grain(pai_type)
        cells = -(-size // grain)
        noise = rng.standard_normal((cells, cells)).repeat(grain, axis=0).repeat(grain, axis=1)
        ridges = ridges + spec.attack_brightness + spec.noise_amplitude * noise[:size, :size]

    tint = np.asarray(spec.tint)
    return np.clip(ridges[:, :, None] * tint[None, None, :], 0.0, 1.0)


def _plan(spec: SyntheticSpec) -> List[Tuple[str, str | None]]:
    plan: List[Tuple[str, str | None]] = [("bonafide", None)] * spec.bonafide_count
    for tag, count in spec.attack_counts.items():
        plan += [("attack", tag)] * count
    return plan


def generate_synthetic(spec: SyntheticSpec, out_dir: Path) -> Tuple[Path, List[ManifestEntry]]:
    """Write PNG images and a manifest under `out_dir`; returns (manifest path, entries)."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    with writing(image_dir):
        image_dir.mkdir(parents=True, exist_ok=True)

    entries: List[ManifestEntry] = []
    for index, (label, pai_type) in enumerate(_plan(spec)):
        pixels = render_sample(spec, index, pai_type)
        name = f"{spec.dataset_id}_{index:04d}_{pai_type or 'bonafide'}.png"
        with writing(image_dir / name):
            Image.fromarray(np.round(pixels * 255.0).astype(np.uint8)).save(image_dir / name)
        entries.append(
            ManifestEntry(
                path=f"images/{name}",
                label=label,
                pai_type=pai_type or "",
                dataset_id=spec.dataset_id,
                subject_id=f"{spec.dataset_id}-{index:04d}",
            )
        )
    manifest = write_manifest(entries, out_dir / "manifest.csv")
    logger.info(
        f"Generated {len(entries)} synthetic images for {spec.dataset_id} "
        f"({spec.bonafide_count} bonafide, {spec.total - spec.bonafide_count} attack) in {out_dir}"
    )
    return manifest, entries
