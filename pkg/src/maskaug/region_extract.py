"""Ground-truth mask regions from full-face / rule-based image pairs."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import image_core

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractConfig:
    """Thresholds for the pixel-wise comparison.

    ``threshold`` is a per-channel absolute difference in storage units
    (0..255 scale); a pixel joins the region when any channel differs by
    strictly more than it.
    """

    threshold: float = 8.0
    dilation_radius: int = 2

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.dilation_radius < 0 or int(self.dilation_radius) != self.dilation_radius:
            raise ValueError("dilation_radius must be a non-negative integer")


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a (2r+1) x (2r+1) square, zero outside the border."""
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((2 * radius + 1,) * 2, dtype=bool))


def changed_pixels(full: np.ndarray, warped: np.ndarray, threshold: float) -> np.ndarray:
    full = np.asarray(full, dtype=np.float64)
    warped = np.asarray(warped, dtype=np.float64)
    if full.shape != warped.shape:
        raise ValueError(f"dimension mismatch: {full.shape} vs {warped.shape}")
    diff = np.abs(full - warped) * 127.5
    return (diff > threshold).any(axis=-1)


def extract_region(
    full: np.ndarray, warped: np.ndarray, cfg: ExtractConfig = ExtractConfig()
) -> np.ndarray:
    return dilate(changed_pixels(full, warped, cfg.threshold), cfg.dilation_radius)


def _pairs(dataset_dir: Path) -> tuple[list[tuple[Path, Path]], list[Path]]:
    warped, full = {}, {}
    for p in dataset_dir.iterdir():
        name = p.name
        if name.endswith(image_core.REGION_SUFFIX) or not name.endswith(".png"):
            continue
        if name.endswith(image_core.FULL_SUFFIX):
            full[image_core.image_stem(p)] = p
        else:
            warped[p.stem] = p
    pairs = [(warped[s], full[s]) for s in sorted(warped.keys() & full.keys())]
    orphans = sorted(warped[s] for s in warped.keys() - full.keys())
    orphans += sorted(full[s] for s in full.keys() - warped.keys())
    return pairs, orphans


def _up_to_date(sidecar: Path, *sources: Path) -> bool:
    if not sidecar.exists():
        return False
    mtime = sidecar.stat().st_mtime_ns
    return all(src.stat().st_mtime_ns <= mtime for src in sources)


def _extract_one(warped_path: Path, full_path: Path, cfg: ExtractConfig) -> Path:
    warped = image_core.load_image(warped_path, target_size=None)
    full = image_core.load_image(full_path, target_size=None)
    return image_core.save_region_mask(extract_region(full, warped, cfg), warped_path)


def batch_extract(
    dataset_dir: str | Path,
    cfg: ExtractConfig = ExtractConfig(),
    workers: int = 1,
    force: bool = False,
) -> int:
    """Write a region-mask sidecar for every ``<stem>.png`` / ``<stem>.full.png`` pair.

    Pairs whose sidecar is newer than both images are skipped; unpaired
    files are logged as a warning. Returns the number of sidecars written.
    """
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise NotADirectoryError(f"not a directory: {dataset_dir}")
    pairs, orphans = _pairs(dataset_dir)
    if orphans:
        log.warning("unpaired files skipped: %s", ", ".join(p.name for p in orphans))
    todo = [
        (w, f)
        for w, f in pairs
        if force or not _up_to_date(image_core.region_path_for(w), w, f)
    ]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(lambda wf: _extract_one(*wf, cfg), todo))
    else:
        for w, f in todo:
            _extract_one(w, f, cfg)
    return len(todo)
