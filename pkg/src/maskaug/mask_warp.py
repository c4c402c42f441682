"""Rule-based mask warping: a piecewise-affine template warp driven by landmarks.

The template's anchor points are Delaunay-triangulated in template space and
each triangle is mapped affinely onto the corresponding landmark triangle in
the face image. Compositing uses a binary alpha so the changed pixel set is
unambiguous.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy.spatial import Delaunay

from . import image_core
from .region_extract import ExtractConfig, extract_region

N_LANDMARKS = 68
# jaw contour, nose bridge, mouth corners
DEFAULT_LANDMARK_MAP = (1, 3, 5, 8, 11, 13, 15, 28, 29, 30, 48, 54)
COLLINEAR_NUDGE = 0.25
ALPHA_CUTOFF = 0.5


class DegenerateTriangulation(ValueError):
    pass


class LandmarkError(ValueError):
    pass


@dataclass
class MaskTemplate:
    """RGBA mask raster plus anchor points tied to landmark indices.

    ``raster`` is uint8 H x W x 4; ``anchors`` are (x, y) in raster pixels.
    """

    raster: np.ndarray
    anchors: np.ndarray
    landmark_map: tuple[int, ...] = DEFAULT_LANDMARK_MAP
    name: str = field(default="template", compare=False)

    def __post_init__(self):
        self.raster = np.array(self.raster, dtype=np.uint8)
        self.anchors = np.asarray(self.anchors, dtype=np.float64).reshape(-1, 2)
        self.landmark_map = tuple(int(i) for i in self.landmark_map)
        if self.raster.ndim != 3 or self.raster.shape[2] != 4:
            raise ValueError(f"template raster must be RGBA, got shape {self.raster.shape}")
        k = len(self.anchors)
        if k < 6:
            raise ValueError(f"need at least 6 anchors, got {k}")
        if len(self.landmark_map) != k:
            raise ValueError("landmark_map length must equal number of anchors")
        if len(set(self.landmark_map)) != k:
            raise ValueError("landmark_map indices must be distinct")
        if min(self.landmark_map) < 0 or max(self.landmark_map) >= N_LANDMARKS:
            raise ValueError("landmark_map indices must lie in [0, 67]")
        h, w = self.raster.shape[:2]
        xs, ys = self.anchors[:, 0], self.anchors[:, 1]
        if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
            raise ValueError("template anchors must lie inside the raster")

    @classmethod
    def load(cls, png_path: str | os.PathLike, anchor_path: str | os.PathLike | None = None):
        """Load a template bundle: RGBA PNG plus ``{anchors, landmark_map}`` JSON."""
        png_path = Path(png_path)
        anchor_path = Path(anchor_path) if anchor_path else png_path.with_suffix(".json")
        raster = np.asarray(Image.open(png_path).convert("RGBA"), dtype=np.uint8)
        meta = json.loads(anchor_path.read_text())
        return cls(
            raster,
            np.array(meta["anchors"], dtype=np.float64),
            tuple(meta.get("landmark_map", DEFAULT_LANDMARK_MAP)),
            name=png_path.stem,
        )

    def save(self, png_path: str | os.PathLike) -> tuple[Path, Path]:
        png_path = Path(png_path)
        png_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.raster, mode="RGBA").save(png_path, format="PNG")
        meta = {"anchors": self.anchors.tolist(), "landmark_map": list(self.landmark_map)}
        json_path = png_path.with_suffix(".json")
        json_path.write_text(json.dumps(meta, indent=1))
        return png_path, json_path


def load_landmarks(path: str | os.PathLike) -> np.ndarray:
    pts = np.asarray(json.loads(Path(path).read_text()), dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        raise LandmarkError(f"{path}: expected 68 [x, y] pairs, got shape {pts.shape}")
    return pts


def save_landmarks(landmarks: np.ndarray, image_path: str | os.PathLike) -> Path:
    p = Path(image_path)
    dest = p.with_name(image_core.image_stem(p) + image_core.LANDMARK_SUFFIX)
    dest.write_text(json.dumps(np.asarray(landmarks, dtype=float).tolist()))
    return dest


def check_landmarks(landmarks: np.ndarray, shape: tuple[int, int], slack: float = 0.5) -> np.ndarray:
    """Validate a 68-point set against an image of ``shape`` (H, W) and clamp.

    Points more than ``slack`` pixels outside the image are an error.
    """
    pts = np.asarray(landmarks, dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        raise LandmarkError(f"expected 68 landmarks, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise LandmarkError("landmarks contain non-finite values")
    h, w = shape
    lo = -slack
    if (pts[:, 0] < lo).any() or (pts[:, 1] < lo).any() or (pts[:, 0] > w - 1 + slack).any() or (
        pts[:, 1] > h - 1 + slack
    ).any():
        raise LandmarkError("landmarks outside image")
    if pts[16, 0] <= pts[0, 0]:
        raise LandmarkError("jawline must run left to right (x[16] > x[0])")
    out = pts.copy()
    out[:, 0] = np.clip(out[:, 0], 0, w - 1)
    out[:, 1] = np.clip(out[:, 1], 0, h - 1)
    return out


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def separate_collinear(points: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Nudge the later-indexed point of each collinear triple off the line.

    The nudge is COLLINEAR_NUDGE pixels along the line normal; repeated until
    no triple is collinear, so the result is deterministic.
    """
    pts = np.array(points, dtype=np.float64)
    for _ in range(len(pts) ** 3):
        for i, j, k in combinations(range(len(pts)), 3):
            if abs(_cross(pts[i], pts[j], pts[k])) <= eps:
                d = pts[j] - pts[i]
                if np.hypot(*d) <= eps:
                    # coincident pair: move the later one, then re-scan
                    pts[j] = pts[j] + np.array([COLLINEAR_NUDGE, COLLINEAR_NUDGE])
                else:
                    normal = np.array([-d[1], d[0]]) / np.hypot(*d)
                    pts[k] = pts[k] + COLLINEAR_NUDGE * normal
                break
        else:
            return pts
    raise DegenerateTriangulation("could not separate collinear anchors")


def triangulate(anchors: np.ndarray) -> np.ndarray:
    """Delaunay triangles (index triples) over the perturbed anchors."""
    try:
        tri = Delaunay(separate_collinear(anchors))
    except Exception as exc:  # qhull raises its own error type
        raise DegenerateTriangulation(str(exc)) from exc
    simplices = np.asarray(tri.simplices, dtype=np.int64)
    # qhull's ordering is stable for identical input; sort for readability only
    return simplices[np.lexsort(simplices.T[::-1])]


def source_coordinates(
    shape: tuple[int, int], src_pts: np.ndarray, dst_pts: np.ndarray, triangles: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse-map every destination pixel centre into template space.

    Returns (src_x, src_y, covered); later triangles win on shared edges.
    """
    h, w = shape
    src_x = np.zeros((h, w))
    src_y = np.zeros((h, w))
    covered = np.zeros((h, w), dtype=bool)
    for tri in triangles:
        d = dst_pts[tri]
        s = src_pts[tri]
        area = _cross(d[0], d[1], d[2])
        if abs(area) < 1e-9:
            raise DegenerateTriangulation(f"destination triangle {tuple(tri)} has zero area")
        x0 = max(int(np.floor(d[:, 0].min())), 0)
        x1 = min(int(np.ceil(d[:, 0].max())), w - 1)
        y0 = max(int(np.floor(d[:, 1].min())), 0)
        y1 = min(int(np.ceil(d[:, 1].max())), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
        # barycentric weights of (xs, ys) w.r.t. d
        l1 = ((d[1, 0] - xs) * (d[2, 1] - ys) - (d[1, 1] - ys) * (d[2, 0] - xs)) / area
        l2 = ((d[2, 0] - xs) * (d[0, 1] - ys) - (d[2, 1] - ys) * (d[0, 0] - xs)) / area
        l3 = 1.0 - l1 - l2
        inside = (l1 >= -1e-9) & (l2 >= -1e-9) & (l3 >= -1e-9)
        sx = l1 * s[0, 0] + l2 * s[1, 0] + l3 * s[2, 0]
        sy = l1 * s[0, 1] + l2 * s[1, 1] + l3 * s[2, 1]
        win_x = src_x[y0 : y1 + 1, x0 : x1 + 1]
        win_y = src_y[y0 : y1 + 1, x0 : x1 + 1]
        win_x[inside] = sx[inside]
        win_y[inside] = sy[inside]
        covered[y0 : y1 + 1, x0 : x1 + 1] |= inside
    return src_x, src_y, covered


def sample_bilinear(raster: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup with edge clamping; ``raster`` is H x W x C float."""
    h, w = raster.shape[:2]
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    top = raster[y0, x0] * (1 - fx) + raster[y0, x1] * fx
    bot = raster[y1, x0] * (1 - fx) + raster[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_layer(
    template: MaskTemplate, landmarks: np.ndarray, shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Warp the template into face coordinates.

    Returns (rgb in model domain, binary alpha support), both at ``shape``.
    """
    dst = np.asarray(landmarks, dtype=np.float64)[list(template.landmark_map)]
    src = separate_collinear(template.anchors)
    triangles = triangulate(src)
    src_x, src_y, covered = source_coordinates(shape, src, dst, triangles)
    sampled = sample_bilinear(template.raster.astype(np.float64), src_x, src_y)
    rgb = sampled[..., :3] / 127.5 - 1.0
    alpha = covered & (sampled[..., 3] / 255.0 >= ALPHA_CUTOFF)
    return rgb, alpha


def warp_mask(face: np.ndarray, landmarks: np.ndarray, template: MaskTemplate) -> np.ndarray:
    """Composite the warped template over ``face`` (model domain, H x W x 3)."""
    face = np.asarray(face, dtype=np.float64)
    lm = check_landmarks(landmarks, face.shape[:2])
    rgb, alpha = warp_layer(template, lm, face.shape[:2])
    return np.where(alpha[..., None], rgb, face)


def warp_and_extract(
    face: np.ndarray,
    landmarks: np.ndarray,
    template: MaskTemplate,
    cfg: ExtractConfig = ExtractConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    warped = warp_mask(face, landmarks, template)
    return warped, extract_region(face, warped, cfg)


# -- synthetic helpers (demos, tests, toy experiments) -------------------------


def canonical_landmarks(width: int, height: int | None = None) -> np.ndarray:
    """A plausible frontal 68-point layout scaled to a width x height box."""
    height = height or width
    t = np.linspace(np.pi, 0.0, 17)
    jaw = np.stack([0.5 + 0.42 * np.cos(t), 0.45 + 0.47 * np.sin(t)], axis=1)
    brow_l = np.stack([np.linspace(0.18, 0.42, 5), [0.32, 0.28, 0.27, 0.28, 0.30]], axis=1)
    brow_r = np.stack([np.linspace(0.58, 0.82, 5), [0.30, 0.28, 0.27, 0.28, 0.32]], axis=1)
    bridge = np.stack([np.full(4, 0.5), np.linspace(0.38, 0.56, 4)], axis=1)
    nostrils = np.stack([np.linspace(0.42, 0.58, 5), [0.62, 0.635, 0.64, 0.635, 0.62]], axis=1)

    def eye(cx):
        a = np.linspace(0, 2 * np.pi, 7)[:-1] + np.pi
        return np.stack([cx + 0.07 * np.cos(a), 0.40 + 0.03 * np.sin(a)], axis=1)

    a = np.linspace(np.pi, -np.pi, 13)[:-1]
    mouth_outer = np.stack([0.5 + 0.16 * np.cos(a), 0.76 - 0.06 * np.sin(a)], axis=1)
    a = np.linspace(np.pi, -np.pi, 9)[:-1]
    mouth_inner = np.stack([0.5 + 0.10 * np.cos(a), 0.76 - 0.025 * np.sin(a)], axis=1)
    pts = np.concatenate(
        [jaw, brow_l, brow_r, bridge, nostrils, eye(0.32), eye(0.68), mouth_outer, mouth_inner]
    )
    assert pts.shape == (N_LANDMARKS, 2)
    return pts * np.array([width - 1, height - 1])


def synthetic_template(
    size: int = 256,
    color: tuple[int, int, int] = (90, 150, 220),
    landmark_map: tuple[int, ...] = DEFAULT_LANDMARK_MAP,
) -> MaskTemplate:
    """A flat medical-mask-like template covering the lower face."""
    lm = canonical_landmarks(size)
    outline = [tuple(lm[i]) for i in range(1, 16)] + [tuple(lm[28])]
    img = Image.new("RGBA", (size, size), (0, 0, 0, 0))
    ImageDraw.Draw(img).polygon(outline, fill=(*color, 255))
    return MaskTemplate(np.asarray(img), lm[list(landmark_map)], landmark_map, name="synthetic")
