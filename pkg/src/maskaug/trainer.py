"""Two-direction adversarial training with a staged schedule and exact resume."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import torch

from . import image_core
from .checkpoint import CheckpointBundle, IncompatibleCheckpoint, digest
from .datasets import MissingSidecarError, UnpairedDataset
from .losses import (
    GeneratorLossParts,
    LossWeights,
    adversarial_loss,
    cycle_loss,
    discriminator_loss,
    identity_loss,
    nmc_loss,
    total_generator_loss,
)
from .model import GeneratorConfig, Networks, init_params

log = logging.getLogger(__name__)

DEFAULT_LR = 2e-4


class TrainingDiverged(RuntimeError):
    pass


# -- schedule -----------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleEntry:
    epoch_start: int
    epoch_end: int
    lambda_A: float
    lambda_B: float
    noise: bool = False
    nmc: bool = False
    dataset_id: str = "default"
    lambda_identity: float = 0.5
    lr: float = DEFAULT_LR

    def __post_init__(self):
        if self.epoch_start < 1 or self.epoch_start > self.epoch_end:
            raise ValueError(f"bad epoch span {self.epoch_start}..{self.epoch_end}")
        if min(self.lambda_A, self.lambda_B, self.lambda_identity) < 0 or self.lr <= 0:
            raise ValueError("lambdas must be >= 0 and lr > 0")

    def covers(self, epoch: int) -> bool:
        return self.epoch_start <= epoch <= self.epoch_end


def validate_schedule(entries: list[ScheduleEntry]) -> list[ScheduleEntry]:
    if not entries:
        raise ValueError("schedule is empty")
    for prev, nxt in zip(entries, entries[1:]):
        if nxt.epoch_start != prev.epoch_end + 1:
            raise ValueError(
                f"schedule spans must be contiguous: {prev.epoch_end} then {nxt.epoch_start}"
            )
    return list(entries)


def parse_schedule(rows: list[dict]) -> list[ScheduleEntry]:
    return validate_schedule([ScheduleEntry(**row) for row in rows])


def load_schedule(path: str | Path) -> list[ScheduleEntry]:
    return parse_schedule(json.loads(Path(path).read_text()))


def staged_schedule() -> list[ScheduleEntry]:
    """The staged transfer-learning timeline shipped with the package."""
    text = resources.files("maskaug").joinpath("schedules/staged.json").read_text()
    return parse_schedule(json.loads(text))


def entry_for_epoch(schedule: list[ScheduleEntry], epoch: int) -> tuple[int, ScheduleEntry]:
    for i, e in enumerate(schedule):
        if e.covers(epoch):
            return i, e
    raise ValueError(f"epoch {epoch} not covered by schedule")


# -- image pool -----------------------------------------------------------------------


class ImagePool:
    """History of generated images fed to the discriminators.

    Until full, every image is stored and returned. Afterwards each query
    returns, with probability 1/2, a random stored image (replacing it by
    the current one), else the current image.
    """

    def __init__(self, capacity: int = 50, rng: random.Random | None = None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.rng = rng or random.Random(0)
        self.images: list[torch.Tensor] = []

    def query_one(self, image: torch.Tensor) -> torch.Tensor:
        if self.capacity == 0:
            return image
        if len(self.images) < self.capacity:
            self.images.append(image.clone())
            return image
        if self.rng.random() < 0.5:
            i = self.rng.randrange(self.capacity)
            old = self.images[i]
            self.images[i] = image.clone()
            return old
        return image

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        return torch.stack([self.query_one(img) for img in batch])


# -- trainer --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    beta1: float = 0.5
    beta2: float = 0.999
    pool_size: int = 50
    lambda_nmc: float = 10.0
    disc_channels: int | None = None
    dtype: str = "float32"
    sample_noise_seed: int = 0

    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


def _rng_state_to_json(state: dict) -> dict:
    return json.loads(json.dumps(state))


def generator_loss_parts(
    nets: Networks,
    real_a: torch.Tensor,
    real_b: torch.Tensor,
    region_a: torch.Tensor | None,
    entry: ScheduleEntry,
    adversarial: bool = True,
    **kw,
) -> tuple[GeneratorLossParts, torch.Tensor, torch.Tensor]:
    """Forward both cycles and collect the generator loss terms.

    Returns ``(parts, fake_a, fake_b)``. ``adversarial=False`` leaves the
    two adversarial terms at zero, for inputs too small for the discriminator.
    """
    fake_b = nets.g_ab(real_a, **kw).output
    rec_a = nets.g_ba(fake_b, **kw).output
    fake_a = nets.g_ba(real_b, **kw).output
    rec_b = nets.g_ab(fake_a, **kw).output
    parts = GeneratorLossParts(cycle_A=cycle_loss(real_a, rec_a), cycle_B=cycle_loss(real_b, rec_b))
    if adversarial:
        parts.adv_AB = adversarial_loss(nets.d_b(fake_b), True)
        parts.adv_BA = adversarial_loss(nets.d_a(fake_a), True)
    if entry.lambda_identity > 0:
        parts.idt_A = identity_loss(nets.g_ba(real_a, **kw).output, real_a)
        parts.idt_B = identity_loss(nets.g_ab(real_b, **kw).output, real_b)
    if entry.nmc:
        parts.nmc = nmc_loss(real_a, fake_b, region_a)
    return parts, fake_a, fake_b


class Trainer:
    """Owns the four networks, both optimizers, both pools and every RNG stream."""

    def __init__(
        self,
        gen_cfg: GeneratorConfig = GeneratorConfig(),
        train_cfg: TrainConfig = TrainConfig(),
        seed: int = 0,
    ):
        self.gen_cfg = gen_cfg
        self.train_cfg = train_cfg
        self.seed = seed
        self.nets: Networks = init_params(gen_cfg, seed, train_cfg.disc_channels).to(
            train_cfg.torch_dtype()
        )
        self.opt_g = torch.optim.Adam(
            self.nets.generator_parameters(), lr=DEFAULT_LR, betas=(train_cfg.beta1, train_cfg.beta2)
        )
        self.opt_d = torch.optim.Adam(
            self.nets.discriminator_parameters(),
            lr=DEFAULT_LR,
            betas=(train_cfg.beta1, train_cfg.beta2),
        )
        self.rng = np.random.default_rng(seed)
        self.pool_rng = random.Random(seed)
        self.pool_a = ImagePool(train_cfg.pool_size, self.pool_rng)
        self.pool_b = ImagePool(train_cfg.pool_size, self.pool_rng)
        self.noise_gen = torch.Generator().manual_seed(seed)
        self.epoch = 0
        self.iteration = 0
        self.schedule_position = 0

    # -- configuration identity ----------------------------------------------------

    def architecture(self) -> dict:
        return {
            **self.gen_cfg.architecture(),
            "disc_channels": self.train_cfg.disc_channels,
            "dtype": self.train_cfg.dtype,
        }

    def config_digest(self) -> str:
        return digest(self.architecture())

    # -- one optimisation step -------------------------------------------------------

    def _set_lr(self, lr: float):
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def step(
        self,
        real_a: torch.Tensor,
        real_b: torch.Tensor,
        region_a: torch.Tensor | None,
        entry: ScheduleEntry,
    ) -> dict[str, float]:
        nets = self.nets
        weights = LossWeights(
            entry.lambda_A, entry.lambda_B, entry.lambda_identity, self.train_cfg.lambda_nmc
        )
        kw = dict(generator=self.noise_gen, noise=entry.noise)

        for p in nets.discriminator_parameters():
            p.requires_grad_(False)
        parts, fake_a, fake_b = generator_loss_parts(nets, real_a, real_b, region_a, entry, **kw)
        loss_g = total_generator_loss(parts, weights)
        if not torch.isfinite(loss_g):
            raise TrainingDiverged(f"non-finite generator loss at iteration {self.iteration}")
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()

        for p in nets.discriminator_parameters():
            p.requires_grad_(True)
        pooled_b = self.pool_b.query(fake_b.detach())
        pooled_a = self.pool_a.query(fake_a.detach())
        loss_d_b = discriminator_loss(nets.d_b(real_b), nets.d_b(pooled_b))
        loss_d_a = discriminator_loss(nets.d_a(real_a), nets.d_a(pooled_a))
        if not (torch.isfinite(loss_d_a) and torch.isfinite(loss_d_b)):
            raise TrainingDiverged(f"non-finite discriminator loss at iteration {self.iteration}")
        self.opt_d.zero_grad(set_to_none=True)
        (loss_d_a + loss_d_b).backward()
        self.opt_d.step()

        self.iteration += 1
        record = parts.as_floats()
        record.update(
            loss_G=float(loss_g.detach()),
            loss_D_A=float(loss_d_a.detach()),
            loss_D_B=float(loss_d_b.detach()),
            lambda_A=entry.lambda_A,
            lambda_B=entry.lambda_B,
            lambda_identity=entry.lambda_identity,
            lambda_nmc=weights.lambda_nmc if entry.nmc else 0.0,
            noise=entry.noise,
        )
        return record

    # -- epochs ------------------------------------------------------------------------

    def epoch_batches(self, n_a: int, n_b: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """Shuffled, independently drawn A/B index batches for one epoch."""
        bs = self.train_cfg.batch_size
        n = max(n_a, n_b)
        idx_a = np.resize(self.rng.permutation(n_a), n)
        idx_b = np.resize(self.rng.permutation(n_b), n)
        return [(idx_a[i : i + bs], idx_b[i : i + bs]) for i in range(0, n, bs)]

    def run_epoch(self, data: UnpairedDataset, entry: ScheduleEntry, log_fh=None) -> list[dict]:
        if entry.nmc and not data.has_regions:
            raise MissingSidecarError("NMC training requires a region mask for every A image")
        self._set_lr(entry.lr)
        self.epoch += 1
        dtype = self.train_cfg.torch_dtype()
        records = []
        for ia, ib in self.epoch_batches(len(data.images_a), len(data.images_b)):
            real_a = torch.as_tensor(data.images_a[ia], dtype=dtype)
            real_b = torch.as_tensor(data.images_b[ib], dtype=dtype)
            region = torch.as_tensor(data.regions_a[ia]) if data.has_regions else None
            rec = self.step(real_a, real_b, region, entry)
            rec = {"epoch": self.epoch, "iteration": self.iteration, **rec}
            records.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return records

    def sample(self, data: UnpairedDataset, entry: ScheduleEntry) -> np.ndarray:
        """Side-by-side input|output strip (H x 2W x 3, model domain) for the fixed input."""
        x = torch.as_tensor(data.sample_input[None], dtype=self.train_cfg.torch_dtype())
        with torch.no_grad():
            y = self.nets.g_ab(x, noise_seed=self.train_cfg.sample_noise_seed, noise=entry.noise).output
        pair = torch.cat([x[0], y[0]], dim=-1)
        return pair.permute(1, 2, 0).double().numpy()

    # -- state ---------------------------------------------------------------------------

    def _optimizer_tensors(self, prefix: str, opt: torch.optim.Optimizer) -> dict:
        out = {}
        params = opt.param_groups[0]["params"]
        for i, p in enumerate(params):
            st = opt.state.get(p)
            if not st:
                continue
            for key in ("step", "exp_avg", "exp_avg_sq"):
                out[f"{prefix}.{i}.{key}"] = torch.as_tensor(st[key]).clone()
        return out

    def _load_optimizer(self, prefix: str, opt: torch.optim.Optimizer, tensors: Mapping):
        params = opt.param_groups[0]["params"]
        for i, p in enumerate(params):
            key = f"{prefix}.{i}.step"
            if key not in tensors:
                continue
            opt.state[p] = {
                "step": tensors[key].clone().to(torch.float32),
                "exp_avg": tensors[f"{prefix}.{i}.exp_avg"].clone().to(p.dtype),
                "exp_avg_sq": tensors[f"{prefix}.{i}.exp_avg_sq"].clone().to(p.dtype),
            }

    def _pool_tensor(self, pool: ImagePool) -> torch.Tensor:
        if pool.images:
            return torch.stack(pool.images)
        size = self.gen_cfg.input_size
        return torch.zeros((0, 3, size, size), dtype=self.train_cfg.torch_dtype())

    def state_bundle(self) -> CheckpointBundle:
        tensors = {f"nets.{k}": v.clone() for k, v in self.nets.state_dict().items()}
        tensors.update(self._optimizer_tensors("opt_g", self.opt_g))
        tensors.update(self._optimizer_tensors("opt_d", self.opt_d))
        tensors["pool_a"] = self._pool_tensor(self.pool_a)
        tensors["pool_b"] = self._pool_tensor(self.pool_b)
        tensors["rng.noise"] = self.noise_gen.get_state().clone()
        meta = {
            "epoch": self.epoch,
            "iteration": self.iteration,
            "schedule_position": self.schedule_position,
            "seed": self.seed,
            "generator_config": self.gen_cfg.to_dict(),
            "train_config": asdict(self.train_cfg),
            "config_digest": self.config_digest(),
            "rng": {
                "numpy": _rng_state_to_json(self.rng.bit_generator.state),
                "pool": _rng_state_to_json(self.pool_rng.getstate()),
            },
        }
        return CheckpointBundle(tensors, meta)

    def load_weights(self, bundle: CheckpointBundle):
        """Copy network parameters only (warm start)."""
        state = {k[len("nets.") :]: v for k, v in bundle.tensors.items() if k.startswith("nets.")}
        own = self.nets.state_dict()
        for k, v in own.items():
            if k not in state or tuple(state[k].shape) != tuple(v.shape):
                got = None if k not in state else tuple(state[k].shape)
                raise IncompatibleCheckpoint(f"parameter {k}: expected {tuple(v.shape)}, got {got}")
        self.nets.load_state_dict({k: state[k].to(own[k].dtype) for k in own})

    @classmethod
    def from_bundle(
        cls,
        bundle: CheckpointBundle,
        gen_cfg: GeneratorConfig | None = None,
        train_cfg: TrainConfig | None = None,
    ) -> "Trainer":
        meta = bundle.meta
        stored_cfg = GeneratorConfig(**meta["generator_config"])
        stored_train = TrainConfig(**meta["train_config"])
        gen_cfg = gen_cfg or stored_cfg
        train_cfg = train_cfg or stored_train
        trainer = cls(gen_cfg, train_cfg, meta["seed"])
        if trainer.config_digest() != meta["config_digest"]:
            raise IncompatibleCheckpoint(
                f"architecture {trainer.architecture()} does not match checkpoint "
                f"({stored_cfg.architecture()})"
            )
        trainer.load_weights(bundle)
        trainer._load_optimizer("opt_g", trainer.opt_g, bundle.tensors)
        trainer._load_optimizer("opt_d", trainer.opt_d, bundle.tensors)
        trainer.pool_rng.setstate(_as_tuple(meta["rng"]["pool"]))
        trainer.pool_a.images = [t.clone() for t in bundle.tensors["pool_a"]]
        trainer.pool_b.images = [t.clone() for t in bundle.tensors["pool_b"]]
        trainer.rng.bit_generator.state = meta["rng"]["numpy"]
        trainer.noise_gen.set_state(bundle.tensors["rng.noise"].clone())
        trainer.epoch = meta["epoch"]
        trainer.iteration = meta["iteration"]
        trainer.schedule_position = meta["schedule_position"]
        return trainer

    # -- driver ---------------------------------------------------------------------------

    def fit(
        self,
        schedule: list[ScheduleEntry],
        datasets: UnpairedDataset | Mapping[str, UnpairedDataset],
        until_epoch: int | None = None,
        ckpt_dir: str | Path | None = None,
    ) -> Iterator[CheckpointBundle]:
        """Train from ``self.epoch + 1`` through ``until_epoch`` (default: end of schedule).

        Yields one bundle per finished epoch. With ``ckpt_dir`` set, each
        bundle is also written to ``ckpt_dir/epoch_<n>/`` with a sample strip,
        and per-iteration losses go to ``ckpt_dir/train_log.jsonl``.
        """
        schedule = validate_schedule(schedule)
        last = schedule[-1].epoch_end if until_epoch is None else until_epoch
        first = self.epoch + 1
        if first > last:
            return
        entry_for_epoch(schedule, first)
        entry_for_epoch(schedule, last)
        self._preflight(schedule, datasets, first, last)

        log_fh = None
        if ckpt_dir is not None:
            ckpt_dir = Path(ckpt_dir)
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            log_fh = open(ckpt_dir / "train_log.jsonl", "a")
        try:
            for epoch in range(first, last + 1):
                pos, entry = entry_for_epoch(schedule, epoch)
                self.schedule_position = pos
                data = _pick(datasets, entry.dataset_id)
                try:
                    self.run_epoch(data, entry, log_fh)
                except TrainingDiverged:
                    if ckpt_dir is not None:
                        self.state_bundle().save(ckpt_dir / f"diagnostic_epoch_{epoch}")
                    raise
                bundle = self.state_bundle()
                if ckpt_dir is not None:
                    out = bundle.save(ckpt_dir / f"epoch_{epoch}")
                    image_core.save_image(self.sample(data, entry), out / "sample.png")
                    log_fh.flush()
                yield bundle
        finally:
            if log_fh is not None:
                log_fh.close()

    def _preflight(self, schedule, datasets, first, last):
        for entry in schedule:
            if entry.epoch_end < first or entry.epoch_start > last:
                continue
            data = _pick(datasets, entry.dataset_id)
            if entry.nmc and not data.has_regions:
                raise MissingSidecarError(
                    f"schedule epochs {entry.epoch_start}-{entry.epoch_end} use NMC but "
                    f"dataset {entry.dataset_id!r} has no region sidecars"
                )


def _as_tuple(obj):
    if isinstance(obj, list):
        return tuple(_as_tuple(o) for o in obj)
    return obj


def _pick(datasets, dataset_id: str) -> UnpairedDataset:
    if isinstance(datasets, UnpairedDataset):
        return datasets
    if dataset_id in datasets:
        return datasets[dataset_id]
    if "default" in datasets:
        return datasets["default"]
    raise KeyError(f"no dataset for id {dataset_id!r}")


def train(
    schedule: list[ScheduleEntry],
    datasets: UnpairedDataset | Mapping[str, UnpairedDataset],
    warm_start: CheckpointBundle | None = None,
    seed: int = 0,
    gen_cfg: GeneratorConfig = GeneratorConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    until_epoch: int | None = None,
    ckpt_dir: str | Path | None = None,
    keep: str = "all",
) -> list[CheckpointBundle]:
    """Train from scratch (or from warm-start weights) over the schedule.

    The warm start copies network weights only; optimizer state and epoch
    count start fresh. ``keep="last"`` retains only the final bundle.
    """
    trainer = Trainer(gen_cfg, train_cfg, seed)
    if warm_start is not None:
        trainer.load_weights(warm_start)
    first = schedule[0].epoch_start
    trainer.epoch = first - 1
    return _collect(trainer.fit(schedule, datasets, until_epoch, ckpt_dir), keep)


def resume(
    bundle: CheckpointBundle,
    schedule: list[ScheduleEntry],
    datasets: UnpairedDataset | Mapping[str, UnpairedDataset],
    until_epoch: int | None = None,
    ckpt_dir: str | Path | None = None,
    gen_cfg: GeneratorConfig | None = None,
    keep: str = "all",
) -> list[CheckpointBundle]:
    """Continue from a checkpoint; lambdas and flags come from the (new) schedule."""
    trainer = Trainer.from_bundle(bundle, gen_cfg)
    return _collect(trainer.fit(schedule, datasets, until_epoch, ckpt_dir), keep)


def _collect(it, keep):
    out = []
    for b in it:
        if keep == "last":
            out[:] = [b]
        else:
            out.append(b)
    return out
