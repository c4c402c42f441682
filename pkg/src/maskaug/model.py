"""Attention-guided ResNet generator and PatchGAN discriminator."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

INIT_STD = 0.02


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise added to the outputs of content transposed-conv layers.

    ``std_first`` targets the first content layer; it is off by default and
    exists for placement experiments.
    """

    enabled: bool = False
    std_mid: float = 1.0
    std_last: float = 0.2
    std_first: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.std_mid, self.std_last, self.std_first) < 0:
            raise ValueError("noise standard deviations must be >= 0")


@dataclass(frozen=True)
class GeneratorConfig:
    input_size: int = 256
    base_channels: int = 64
    n_resnet_blocks: int = 9
    n_content: int = 2
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.input_size % 4:
            raise ValueError("input_size must be divisible by 4")
        if self.n_resnet_blocks < 1:
            raise ValueError("n_resnet_blocks must be >= 1")
        if self.n_content < 1:
            raise ValueError("n_content must be >= 1")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSpec(**self.noise))

    def to_dict(self) -> dict:
        return asdict(self)

    def architecture(self) -> dict:
        """Fields that determine parameter shapes."""
        return {
            "base_channels": self.base_channels,
            "n_resnet_blocks": self.n_resnet_blocks,
            "n_content": self.n_content,
        }


class GeneratorOutput(NamedTuple):
    output: torch.Tensor
    contents: list[torch.Tensor]
    attentions: list[torch.Tensor]


class ResnetBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim, affine=True),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim, affine=True),
        )

    def forward(self, x):
        return x + self.block(x)


class DecoderPipeline(nn.Module):
    """Three transposed convs (strides 2, 2, 1) with two instance norms."""

    def __init__(self, in_ch: int, base: int, out_ch: int, last_norm_affine: bool = True):
        super().__init__()
        self.tc1 = nn.ConvTranspose2d(in_ch, base * 2, 3, stride=2, padding=1, output_padding=1)
        self.norm1 = nn.InstanceNorm2d(base * 2, affine=True)
        self.tc2 = nn.ConvTranspose2d(base * 2, base, 3, stride=2, padding=1, output_padding=1)
        self.norm2 = nn.InstanceNorm2d(base, affine=last_norm_affine)
        self.tc3 = nn.ConvTranspose2d(base, out_ch, 7, stride=1, padding=3)

    def forward(self, h, noise_stds=(0.0, 0.0, 0.0), generator=None):
        def inject(t, std):
            if std > 0:
                t = t + std * torch.randn(
                    t.shape, generator=generator, dtype=t.dtype, device=t.device
                )
            return t

        h = F.relu(self.norm1(inject(self.tc1(h), noise_stds[0])))
        h = F.relu(self.norm2(inject(self.tc2(h), noise_stds[1])))
        return inject(self.tc3(h), noise_stds[2])


def compose(
    x: torch.Tensor, contents: list[torch.Tensor], attentions: list[torch.Tensor]
) -> torch.Tensor:
    """Attention-weighted sum of contents plus the input under the last attention."""
    out = x * attentions[-1]
    for c, a in zip(contents, attentions[:-1]):
        out = out + c * a
    return out


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.encoder = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, c, kernel_size=7),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(True),
            nn.Conv2d(c, 2 * c, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.ReLU(True),
            nn.Conv2d(2 * c, 4 * c, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c, affine=True),
            nn.ReLU(True),
        )
        self.trunk = nn.Sequential(*[ResnetBlock(4 * c) for _ in range(cfg.n_resnet_blocks)])
        self.content = DecoderPipeline(4 * c, c, 3 * cfg.n_content)
        # non-affine final norm keeps the softmax logits unconstrained
        self.attention = DecoderPipeline(4 * c, c, cfg.n_content + 1, last_norm_affine=False)

    def _noise_generator(self, noise_seed, generator):
        if generator is not None:
            return generator
        seed = self.cfg.noise.seed if noise_seed is None else noise_seed
        return torch.Generator().manual_seed(int(seed))

    def forward(
        self,
        x: torch.Tensor,
        noise_seed: int | None = None,
        generator: torch.Generator | None = None,
        noise: bool | None = None,
    ) -> GeneratorOutput:
        """Translate a batch ``x`` (N x 3 x H x W, values in [-1, 1]).

        Noise follows ``cfg.noise`` unless ``noise`` overrides the enabled
        flag. Draws come from ``generator`` when given, else from a fresh
        generator seeded with ``noise_seed`` (falling back to the configured seed).
        """
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError(f"spatial size must be divisible by 4, got {tuple(x.shape[-2:])}")
        spec = self.cfg.noise
        enabled = spec.enabled if noise is None else noise
        stds = (spec.std_first, spec.std_mid, spec.std_last) if enabled else (0.0, 0.0, 0.0)
        gen = self._noise_generator(noise_seed, generator) if any(stds) else None

        h = self.trunk(self.encoder(x))
        raw = torch.tanh(self.content(h, stds, gen))
        contents = list(torch.split(raw, 3, dim=1))
        attn = torch.softmax(self.attention(h), dim=1)
        attentions = list(torch.split(attn, 1, dim=1))
        # a convex combination can still overshoot by an ulp
        out = compose(x, contents, attentions).clamp(-1.0, 1.0)
        return GeneratorOutput(out, contents, attentions)


class Discriminator(nn.Module):
    """Three stride-2 4x4 convs, then two stride-1 4x4 convs to a score map."""

    def __init__(self, base_channels: int = 64, n_layers: int = 3):
        super().__init__()
        c = base_channels
        layers = [nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, n_layers):
            prev, mult = mult, min(2**n, 8)
            layers += [
                nn.Conv2d(c * prev, c * mult, 4, stride=2, padding=1),
                nn.InstanceNorm2d(c * mult, affine=True),
                nn.LeakyReLU(0.2, True),
            ]
        prev, mult = mult, min(2**n_layers, 8)
        layers += [
            nn.Conv2d(c * prev, c * mult, 4, stride=1, padding=1),
            nn.InstanceNorm2d(c * mult, affine=True),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(c * mult, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


def init_weights(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """Conv weights ~ N(0, 0.02), biases 0; norm scales 1, shifts 0."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, INIT_STD, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return module


class Networks(nn.Module):
    """Both translation directions and both domain discriminators.

    ``g_ab`` maps rule-based (A) to realistic (B); ``d_b`` judges domain B.
    """

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), disc_channels: int | None = None):
        super().__init__()
        self.cfg = cfg
        dc = cfg.base_channels if disc_channels is None else disc_channels
        self.g_ab = Generator(cfg)
        self.g_ba = Generator(cfg)
        self.d_a = Discriminator(dc)
        self.d_b = Discriminator(dc)

    def generator_parameters(self):
        return [*self.g_ab.parameters(), *self.g_ba.parameters()]

    def discriminator_parameters(self):
        return [*self.d_a.parameters(), *self.d_b.parameters()]


def init_params(
    cfg: GeneratorConfig = GeneratorConfig(), rng_seed: int = 0, disc_channels: int | None = None
) -> Networks:
    nets = Networks(cfg, disc_channels)
    gen = torch.Generator().manual_seed(int(rng_seed))
    for sub in (nets.g_ab, nets.g_ba, nets.d_a, nets.d_b):
        init_weights(sub, gen)
    return nets
