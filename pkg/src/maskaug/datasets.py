"""Unpaired A/B datasets, face-record filtering and multi-face scene overlay.

Directory layout::

    <root>/trainA/<stem>.png              rule-based mask images (source domain)
    <root>/trainA/<stem>.full.png         the full-face originals
    <root>/trainA/<stem>.regionmask.png   mask-region sidecars
    <root>/trainB/*.png|*.jpg             real masked faces (target domain)
    <root>/testA/...                      held-out source images
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from . import image_core, mask_warp

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg")
ORIENTATIONS = ("front", "front-left", "front-right", "left", "right", "back")
FRONT_FACING = frozenset({"front", "front-left", "front-right"})


class MissingSidecarError(FileNotFoundError):
    pass


def list_images(directory: str | Path) -> list[Path]:
    """Source images in a directory, excluding full-face originals and sidecars."""
    directory = Path(directory)
    out = []
    for p in sorted(directory.iterdir()):
        name = p.name.lower()
        if not name.endswith(IMAGE_EXTS):
            continue
        if name.endswith(image_core.FULL_SUFFIX) or name.endswith(image_core.REGION_SUFFIX):
            continue
        out.append(p)
    return out


def _load_region(path: Path, size: int) -> np.ndarray:
    region = image_core.load_region_mask(path)
    if region.shape != (size, size):
        img = Image.fromarray(np.where(region, 255, 0).astype(np.uint8), mode="L")
        region = np.asarray(img.resize((size, size), Image.NEAREST)) == 255
    return region


@dataclass
class UnpairedDataset:
    """In-memory unpaired image sets, N x 3 x H x W float arrays in [-1, 1]."""

    images_a: np.ndarray
    images_b: np.ndarray
    regions_a: np.ndarray | None = None
    sample_input: np.ndarray | None = None
    names_a: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images_a) == 0 or len(self.images_b) == 0:
            raise ValueError("datasets A and B must be non-empty")
        if self.regions_a is not None and len(self.regions_a) != len(self.images_a):
            raise ValueError("every A image needs a region mask")
        if self.sample_input is None:
            self.sample_input = self.images_a[0]

    @property
    def has_regions(self) -> bool:
        return self.regions_a is not None

    @classmethod
    def from_dir(
        cls, root: str | Path, size: int = 256, require_regions: bool = False
    ) -> "UnpairedDataset":
        root = Path(root)
        a_paths = list_images(root / "trainA")
        b_paths = list_images(root / "trainB")
        if not a_paths or not b_paths:
            raise ValueError(f"{root}: trainA and trainB must both contain images")
        images_a = np.stack([image_core.load_image(p, size).transpose(2, 0, 1) for p in a_paths])
        images_b = np.stack([image_core.load_image(p, size).transpose(2, 0, 1) for p in b_paths])

        sidecars = [image_core.region_path_for(p) for p in a_paths]
        missing = [s for s in sidecars if not s.exists()]
        regions = None
        if not missing:
            regions = np.stack([_load_region(s, size) for s in sidecars])
        elif require_regions:
            raise MissingSidecarError(
                f"{len(missing)} A images lack region sidecars, e.g. {missing[0]}"
            )
        sample = None
        test_dir = root / "testA"
        if test_dir.is_dir() and list_images(test_dir):
            sample = image_core.load_image(list_images(test_dir)[0], size).transpose(2, 0, 1)
        return cls(
            images_a.astype(np.float32),
            images_b.astype(np.float32),
            regions,
            None if sample is None else sample.astype(np.float32),
            [p.stem for p in a_paths],
        )


# -- face records ---------------------------------------------------------------


@dataclass
class FaceRecord:
    image: str
    bbox: tuple[int, int, int, int]
    orientation: str = "front"
    occlusion_degree: int = 3
    mask_type: str = "simple"
    source: str = ""

    def __post_init__(self):
        self.bbox = tuple(int(v) for v in self.bbox)
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"bbox width and height must be positive: {self.bbox}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")


@dataclass
class FilterCriteria:
    """Conjunctive face filter; ``None`` disables a clause."""

    min_size: int | None = None
    orientations: frozenset[str] | None = None
    min_occlusion: int | None = None
    mask_types: frozenset[str] | None = None


def filter_faces(records: Iterable[FaceRecord], criteria: FilterCriteria = FilterCriteria()):
    c = criteria
    out = []
    for r in records:
        _, _, w, h = r.bbox
        if c.min_size is not None and (w < c.min_size or h < c.min_size):
            continue
        if c.orientations is not None and r.orientation not in c.orientations:
            continue
        if c.min_occlusion is not None and r.occlusion_degree < c.min_occlusion:
            continue
        if c.mask_types is not None and r.mask_type not in c.mask_types:
            continue
        out.append(r)
    return out


def balance_downsample(set_a: Sequence, set_b: Sequence, seed: int = 0) -> list:
    """Uniformly sample ``len(set_b)`` items of ``set_a`` without replacement."""
    if len(set_a) < len(set_b):
        raise ValueError(f"|A| = {len(set_a)} is smaller than |B| = {len(set_b)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(set_a), size=len(set_b), replace=False))
    return [set_a[i] for i in idx]


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_face_records(path: str | Path) -> list[FaceRecord]:
    return [FaceRecord(**row) for row in read_jsonl(path)]


# -- scene composition ------------------------------------------------------------


@dataclass
class SceneRecord:
    image: str
    faces: list[FaceRecord]
    landmarks: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.landmarks:
            self.landmarks = [None] * len(self.faces)
        if len(self.landmarks) != len(self.faces):
            raise ValueError("landmarks list must align with faces")
        self.landmarks = [None if lm is None else np.asarray(lm, float) for lm in self.landmarks]

    @classmethod
    def from_dict(cls, row: dict) -> "SceneRecord":
        faces = [FaceRecord(**{"image": row["image"], **f}) for f in row["faces"]]
        return cls(row["image"], faces, row.get("landmarks") or [])


@dataclass
class ComposedScene:
    image: np.ndarray  # uint8 H x W x 3
    labels: list[str]
    selected: list[int]

    def annotations(self, scene: SceneRecord) -> list[dict]:
        return [
            {"image": scene.image, "bbox": list(f.bbox), "label": lab}
            for f, lab in zip(scene.faces, self.labels)
        ]


def select_faces(n_faces: int, fraction: float, seed: int) -> list[int]:
    """Seeded choice of ``ceil(fraction * n)`` face indices, sorted."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    k = math.ceil(fraction * n_faces)
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n_faces, size=k, replace=False))


def _square_crop(scene_img: np.ndarray, bbox) -> tuple[np.ndarray, tuple[int, int]]:
    x, y, w, h = bbox
    crop = scene_img[y : y + h, x : x + w]
    side = max(w, h)
    top, left = (side - h) // 2, (side - w) // 2
    padded = np.pad(
        crop, ((top, side - h - top), (left, side - w - left), (0, 0)), mode="edge"
    )
    return padded, (top, left)


def scene_compose(
    scene_image: np.ndarray,
    scene: SceneRecord,
    template: mask_warp.MaskTemplate,
    fraction: float,
    seed: int = 0,
    translate: Callable[[np.ndarray], np.ndarray] | None = None,
    work_size: int = 256,
) -> ComposedScene:
    """Overlay rule-based (optionally translated) masks onto selected face boxes.

    ``scene_image`` is uint8 H x W x 3. Landmarks are in scene coordinates.
    Each selected box is padded to a square, resized to ``work_size``, warped
    (and passed through ``translate`` if given), resized back and pasted in
    place; nothing outside the selected boxes is touched.
    """
    out = np.array(scene_image, dtype=np.uint8, copy=True)
    H, W = out.shape[:2]
    for f in scene.faces:
        x, y, w, h = f.bbox
        if x < 0 or y < 0 or x + w > W or y + h > H:
            raise ValueError(f"face box {f.bbox} outside {W}x{H} scene")
    labels = ["unmasked"] * len(scene.faces)
    chosen = select_faces(len(scene.faces), fraction, seed)
    for i in chosen:
        face, lm = scene.faces[i], scene.landmarks[i]
        if lm is None:
            log.warning("face %d in %s has no landmarks; skipped", i, scene.image)
            continue
        x, y, w, h = face.bbox
        padded, (top, left) = _square_crop(scene_image, face.bbox)
        side = padded.shape[0]
        # pixel-centre convention, matching the bilinear resize
        local = (lm - np.array([x - left, y - top]) + 0.5) * (work_size / side) - 0.5
        crop = image_core.resize_image(image_core.to_model(padded), (work_size, work_size))
        masked = mask_warp.warp_mask(crop, local, template)
        if translate is not None:
            masked = translate(masked)
        back = image_core.to_storage(image_core.resize_image(masked, (side, side)))
        out[y : y + h, x : x + w] = back[top : top + h, left : left + w]
        labels[i] = "masked"
    return ComposedScene(out, labels, chosen)
