"""Non-mask preservation, in-mask colour diversity, and side-by-side sample grids.

Images are model-domain H x W x 3 arrays; regions are H x W booleans.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from . import image_core


def _check(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def non_mask_change(inp: np.ndarray, out: np.ndarray, region: np.ndarray) -> float:
    """Mean absolute change outside the region, in storage units (0..255 scale).

    Returns 0 when the region covers the whole image.
    """
    inp = np.asarray(inp, dtype=np.float64)
    out = np.asarray(out, dtype=np.float64)
    _check(inp, out)
    keep = ~np.asarray(region, dtype=bool)
    if keep.shape != inp.shape[:2]:
        raise ValueError(f"region shape {keep.shape} does not match image {inp.shape[:2]}")
    if not keep.any():
        return 0.0
    return float(np.abs(out - inp)[keep].mean() * 127.5)


def region_mean_color(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty mask region")
    return np.asarray(image, dtype=np.float64)[region].mean(axis=0)


def mask_color_diversity(outputs: Sequence[np.ndarray], regions: Sequence[np.ndarray]) -> float:
    """Trace of the (population) covariance of per-image mean in-region RGB."""
    if len(outputs) == 0 or len(outputs) != len(regions):
        raise ValueError("outputs and regions must be aligned and non-empty")
    means = np.stack([region_mean_color(o, r) for o, r in zip(outputs, regions)])
    # shifting by one row keeps identical outputs at exactly zero
    return float((means - means[0]).var(axis=0).sum())


def grid_image(pairs: Sequence[tuple[np.ndarray, np.ndarray]], pairs_per_row: int = 1) -> np.ndarray:
    """Tile (input, output) pairs side by side, row-major; uint8 result.

    Unused cells in the last row are black.
    """
    if not pairs:
        raise ValueError("need at least one pair")
    if pairs_per_row < 1:
        raise ValueError("pairs_per_row must be >= 1")
    tiles = [
        np.asarray(t) if np.asarray(t).dtype == np.uint8 else image_core.to_storage(t)
        for pair in pairs
        for t in pair
    ]
    h, w = tiles[0].shape[:2]
    if any(t.shape[:2] != (h, w) for t in tiles):
        raise ValueError("all images in a grid must share one size")
    cols = 2 * min(pairs_per_row, len(pairs))
    rows = -(-len(tiles) // cols)
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for k, t in enumerate(tiles):
        r, c = divmod(k, cols)
        canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = t
    return canvas


def emit_grid(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    path: str | os.PathLike,
    pairs_per_row: int = 1,
) -> Path:
    return image_core.save_image(grid_image(pairs, pairs_per_row), path)
