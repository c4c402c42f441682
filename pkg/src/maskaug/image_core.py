"""Image and region-mask I/O shared by every stage of the pipeline.

Images live in two domains: *storage* (uint8, 0..255) on disk and *model*
(float, -1..1) in memory. Arrays are H x W x 3, RGB channel order.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

REGION_SUFFIX = ".regionmask.png"
FULL_SUFFIX = ".full.png"
LANDMARK_SUFFIX = ".landmarks.json"


class CorruptSidecarError(ValueError):
    pass


def to_model(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 storage values to [-1, 1] via ``p / 127.5 - 1``."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def to_storage(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.rint((v + 1.0) * 127.5).astype(np.uint8)


def _open_rgb(path: str | os.PathLike) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc
    if img.width == 0 or img.height == 0:
        raise ValueError(f"zero-dimension image: {path}")
    return img.convert("RGB")


def load_image(path: str | os.PathLike, target_size: int | None = 256) -> np.ndarray:
    """Read an RGB raster, bilinear-resize it to a square (no crop) and normalize.

    ``target_size=None`` keeps the native resolution.
    """
    img = _open_rgb(path)
    if target_size is not None:
        if target_size <= 0:
            raise ValueError("target_size must be positive")
        if img.size != (target_size, target_size):
            img = img.resize((target_size, target_size), Image.BILINEAR)
    return to_model(np.asarray(img, dtype=np.uint8))


def load_storage(path: str | os.PathLike) -> np.ndarray:
    """Read an RGB raster as uint8 without resizing."""
    return np.asarray(_open_rgb(path), dtype=np.uint8).copy()


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a model-domain image to ``(height, width)``."""
    h, w = size
    if image.shape[:2] == (h, w):
        return np.array(image, dtype=np.float64)
    chans = [
        np.asarray(
            Image.fromarray(np.asarray(image[..., c], dtype=np.float32), mode="F").resize(
                (w, h), Image.BILINEAR
            )
        )
        for c in range(image.shape[2])
    ]
    return np.clip(np.stack(chans, axis=-1).astype(np.float64), -1.0, 1.0)


def _atomic_write_png(img: Image.Image, dest: Path) -> None:
    dest.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dest.parent, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        img.save(tmp, format="PNG")
        os.replace(tmp, dest)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_image(image: np.ndarray, path: str | os.PathLike) -> Path:
    """Write a model-domain (float) or storage-domain (uint8) RGB image as PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = to_storage(arr)
    dest = Path(path)
    _atomic_write_png(Image.fromarray(arr, mode="RGB"), dest)
    return dest


def region_path_for(image_path: str | os.PathLike) -> Path:
    p = Path(image_path)
    return p.with_name(image_stem(p) + REGION_SUFFIX)


def image_stem(path: str | os.PathLike) -> str:
    name = Path(path).name
    for suffix in (REGION_SUFFIX, FULL_SUFFIX, LANDMARK_SUFFIX):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(name).stem


def save_region_mask(mask: np.ndarray, image_path: str | os.PathLike) -> Path:
    """Write ``mask`` as ``<image-stem>.regionmask.png`` next to ``image_path``.

    Pixels are 255 inside the mask region and 0 elsewhere (8-bit grayscale).
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError(f"region mask must be a non-empty 2-D array, got shape {mask.shape}")
    dest = region_path_for(image_path)
    pixels = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    _atomic_write_png(Image.fromarray(pixels, mode="L"), dest)
    return dest


def load_region_mask(
    path: str | os.PathLike, expected_shape: tuple[int, int] | None = None
) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such region mask: {path}")
    img = Image.open(path)
    img.load()
    if img.mode not in ("L", "1"):
        raise CorruptSidecarError(f"corrupt sidecar {path}: expected single channel, got {img.mode}")
    pixels = np.asarray(img.convert("L"))
    bad = (pixels != 0) & (pixels != 255)
    if bad.any():
        raise CorruptSidecarError(
            f"corrupt sidecar {path}: {int(bad.sum())} pixels outside {{0, 255}}"
        )
    if expected_shape is not None and pixels.shape != tuple(expected_shape):
        raise CorruptSidecarError(
            f"corrupt sidecar {path}: shape {pixels.shape} does not match image {tuple(expected_shape)}"
        )
    return pixels == 255
