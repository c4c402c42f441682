"""Synthetic coloured-square domains for desk-scale experiments.

Domain A images carry a flat "rule-based" mask rectangle in a fixed place;
domain B recolours that rectangle and also shifts the background palette, so
a translator has a reason to touch non-mask pixels unless penalised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import inference, metrics
from .checkpoint import CheckpointBundle
from .datasets import UnpairedDataset
from .model import GeneratorConfig
from .region_extract import ExtractConfig, extract_region
from .trainer import ScheduleEntry, TrainConfig, train

RULE_COLOR = np.array([-0.6, -0.2, 0.8])  # flat blue in model units


@dataclass(frozen=True)
class ToySpec:
    size: int = 32
    mask_box: tuple[int, int, int, int] = (6, 18, 20, 11)  # x, y, w, h
    n_squares: int = 3


def _scene(rng: np.random.Generator, spec: ToySpec, bg_lo: float, bg_hi: float) -> np.ndarray:
    s = spec.size
    img = np.empty((s, s, 3))
    img[:] = rng.uniform(bg_lo, bg_hi, size=3)
    for _ in range(spec.n_squares):
        w = int(rng.integers(4, 9))
        x = int(rng.integers(0, s - w))
        y = int(rng.integers(0, s - w))
        img[y : y + w, x : x + w] = rng.uniform(-1, 1, size=3)
    return img


def _paint_mask(img: np.ndarray, spec: ToySpec, color) -> np.ndarray:
    x, y, w, h = spec.mask_box
    out = img.copy()
    out[y : y + h, x : x + w] = color
    return out


def make_domain_a(n: int, seed: int, spec: ToySpec = ToySpec()):
    """Returns (full, rule_based, regions) arrays, images H x W x 3."""
    rng = np.random.default_rng(seed)
    full = np.stack([_scene(rng, spec, -0.8, 0.2) for _ in range(n)])
    rule = np.stack([_paint_mask(f, spec, RULE_COLOR) for f in full])
    cfg = ExtractConfig(threshold=8.0, dilation_radius=0)
    regions = np.stack([extract_region(f, r, cfg) for f, r in zip(full, rule)])
    return full, rule, regions


def make_domain_b(n: int, seed: int, spec: ToySpec = ToySpec()) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = _scene(rng, spec, 0.0, 1.0)
        shade = rng.uniform(0.5, 1.0)
        out.append(_paint_mask(img, spec, [shade, shade * rng.uniform(0.8, 1.0), shade]))
    return np.stack(out)


def make_dataset(n: int = 16, seed: int = 0, spec: ToySpec = ToySpec()) -> UnpairedDataset:
    _, rule, regions = make_domain_a(n, seed, spec)
    b = make_domain_b(n, seed + 1, spec)
    return UnpairedDataset(
        rule.transpose(0, 3, 1, 2).astype(np.float32),
        b.transpose(0, 3, 1, 2).astype(np.float32),
        regions,
    )


TOY_GEN = GeneratorConfig(input_size=32, base_channels=8, n_resnet_blocks=2)
TOY_TRAIN = TrainConfig(disc_channels=8)


def toy_schedule(iterations: int, n_train: int, nmc: bool, noise_iterations: int = 0):
    """Epoch spans covering ``iterations`` steps, optionally ending with a noise phase."""
    per_epoch = -(-n_train // TOY_TRAIN.batch_size)
    epochs = max(1, iterations // per_epoch)
    noise_epochs = noise_iterations // per_epoch
    sched = [ScheduleEntry(1, epochs, 10, 10, nmc=nmc)]
    if noise_epochs:
        sched.append(ScheduleEntry(epochs + 1, epochs + noise_epochs, 10, 10, noise=True, nmc=nmc))
    return sched


def train_toy(
    nmc: bool,
    iterations: int = 300,
    seed: int = 3,
    n_train: int = 16,
    noise_iterations: int = 0,
    gen_cfg: GeneratorConfig = TOY_GEN,
    train_cfg: TrainConfig = TOY_TRAIN,
) -> CheckpointBundle:
    data = make_dataset(n_train, seed=0)
    sched = toy_schedule(iterations, n_train, nmc, noise_iterations)
    return train(sched, data, seed=seed, gen_cfg=gen_cfg, train_cfg=train_cfg, keep="last")[-1]


def held_out_non_mask_change(bundle: CheckpointBundle, n: int = 8, seed: int = 100) -> float:
    """Mean non-mask change of A->B translations on fresh domain-A images."""
    _, rule, regions = make_domain_a(n, seed)
    gen = inference.load_generator(bundle)
    vals = [metrics.non_mask_change(x, inference.translate(gen, x), r) for x, r in zip(rule, regions)]
    return float(np.mean(vals))
