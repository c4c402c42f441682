"""Training objectives.

All image arguments are N x 3 x H x W tensors; region masks are N x H x W
boolean tensors (True inside the rule-generated mask region).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields

import torch


class NMCMode(str, enum.Enum):
    L1 = "l1"
    # reserved: distance-weighted penalty and direct attention supervision
    WEIGHTED = "weighted"
    ATTENTION = "attention"


@dataclass(frozen=True)
class LossWeights:
    lambda_A: float = 10.0
    lambda_B: float = 10.0
    lambda_identity: float = 0.5
    lambda_nmc: float = 10.0
    nmc_mode: NMCMode = NMCMode.L1

    def __post_init__(self):
        for f in ("lambda_A", "lambda_B", "lambda_identity", "lambda_nmc"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        object.__setattr__(self, "nmc_mode", NMCMode(self.nmc_mode))


def _check_shapes(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def nmc_loss(
    rule_based: torch.Tensor,
    generated: torch.Tensor,
    region: torch.Tensor,
    mode: NMCMode = NMCMode.L1,
) -> torch.Tensor:
    """L1 change outside the mask region, divided by the total element count.

    Elements inside the region contribute nothing (and receive zero gradient).
    """
    if NMCMode(mode) is not NMCMode.L1:
        raise NotImplementedError(f"NMC mode {mode!r} is reserved")
    _check_shapes(rule_based, generated)
    keep = ~region.to(torch.bool)
    if keep.dim() == generated.dim() - 1:
        keep = keep.unsqueeze(-3)
    if keep.shape[-2:] != generated.shape[-2:]:
        raise ValueError(f"region shape {tuple(region.shape)} does not match images")
    diff = (generated - rule_based).abs()
    return torch.where(keep, diff, torch.zeros_like(diff)).sum() / generated.numel()


def cycle_loss(x: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    _check_shapes(x, reconstructed)
    return (x - reconstructed).abs().mean()


identity_loss = cycle_loss


def adversarial_loss(scores: torch.Tensor, target_real: bool) -> torch.Tensor:
    """Least-squares GAN objective against a constant 1 (real) or 0 (fake)."""
    target = 1.0 if target_real else 0.0
    return ((scores - target) ** 2).mean()


@dataclass
class GeneratorLossParts:
    adv_AB: torch.Tensor | float = 0.0
    adv_BA: torch.Tensor | float = 0.0
    cycle_A: torch.Tensor | float = 0.0
    cycle_B: torch.Tensor | float = 0.0
    idt_A: torch.Tensor | float = 0.0
    idt_B: torch.Tensor | float = 0.0
    nmc: torch.Tensor | float = 0.0

    def as_floats(self) -> dict[str, float]:
        return {
            f.name: float(torch.as_tensor(getattr(self, f.name)).detach()) for f in fields(self)
        }


def total_generator_loss(parts: GeneratorLossParts, weights: LossWeights):
    """Sum of adversarial, weighted cycle, identity and non-mask-change terms.

    ``idt_A`` is the A-domain identity term (G_BA applied to A images); it is
    scaled by ``lambda_identity * lambda_A``, and symmetrically for B.
    """
    w = weights
    return (
        parts.adv_AB
        + parts.adv_BA
        + w.lambda_A * parts.cycle_A
        + w.lambda_B * parts.cycle_B
        + w.lambda_identity * (w.lambda_A * parts.idt_A + w.lambda_B * parts.idt_B)
        + w.lambda_nmc * parts.nmc
    )


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return 0.5 * (adversarial_loss(real_scores, True) + adversarial_loss(fake_scores, False))
