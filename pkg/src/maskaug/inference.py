"""Run a frozen generator from a checkpoint."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointBundle
from .model import Generator, GeneratorConfig, NoiseSpec


def load_generator(
    ckpt: str | Path | CheckpointBundle, direction: str = "ab", noise: NoiseSpec | None = None
) -> Generator:
    """Build one translation generator (``"ab"`` or ``"ba"``) from a checkpoint.

    ``noise`` replaces the stored noise spec, e.g. to switch noise on at test time.
    """
    bundle = ckpt if isinstance(ckpt, CheckpointBundle) else CheckpointBundle.load(ckpt)
    cfg = GeneratorConfig(**bundle.meta["generator_config"])
    if noise is not None:
        cfg = GeneratorConfig(**{**cfg.to_dict(), "noise": noise})
    prefix = f"nets.g_{direction}."
    state = {k[len(prefix) :]: v for k, v in bundle.tensors.items() if k.startswith(prefix)}
    if not state:
        raise ValueError(f"checkpoint has no generator for direction {direction!r}")
    gen = Generator(cfg).to(next(iter(state.values())).dtype)
    gen.load_state_dict(state)
    gen.eval()
    return gen


def translate(gen: Generator, image: np.ndarray, noise_seed: int | None = None) -> np.ndarray:
    """Translate one model-domain H x W x 3 image; returns the same layout in float64."""
    dtype = next(gen.parameters()).dtype
    x = torch.as_tensor(np.asarray(image).transpose(2, 0, 1)[None].copy(), dtype=dtype)
    with torch.no_grad():
        y = gen(x, noise_seed=noise_seed).output
    return y[0].permute(1, 2, 0).double().numpy()
