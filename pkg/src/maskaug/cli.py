"""Command-line entry point: ``maskaug <subcommand> ...``.

Exit codes: 0 success, 1 operational failure (one ``error: <Type>: <message>``
line on stderr), 2 usage error. Option values resolve as command-line flag,
then ``--config`` JSON, then built-in default; the data root additionally
honours ``MASKAUG_DATA_ROOT`` ahead of the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, image_core, inference, mask_warp, metrics, region_extract, trainer
from .checkpoint import CheckpointBundle
from .model import GeneratorConfig, NoiseSpec

DATA_ROOT_ENV = "MASKAUG_DATA_ROOT"

# per-subcommand defaults; flags default to None so precedence can be resolved
DEFAULTS = {
    "warp": {"size": None, "threshold": 8.0, "dilate": 2, "extract": True},
    "extract-region": {"threshold": 8.0, "dilate": 2, "workers": 1, "force": False},
    "train": {
        "schedule": None,
        "data": "./data",
        "ckpt": "./ckpt",
        "until_epoch": None,
        "warm_start": None,
        "size": 256,
        "base_channels": 64,
        "n_blocks": 9,
        "n_content": 2,
        "disc_channels": None,
        "batch_size": 4,
        "lambda_nmc": 10.0,
        "noise_std_mid": 1.0,
        "noise_std_last": 0.2,
        "pool_size": 50,
    },
    "resume": {"schedule": None, "data": "./data", "ckpt": "./ckpt", "until_epoch": None},
    "generate": {"direction": "ab", "noise_seed": None, "size": None},
    "compose-scene": {"fraction": 1.0, "ckpt": None, "noise_seed": None, "work_size": 256},
    "grid": {"pairs_per_row": 1},
    "eval": {"out": None},
}
GLOBAL_DEFAULTS = {"seed": 0}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskaug", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="global RNG seed (default 0)")
    p.add_argument("--config", type=Path, default=None, help="JSON file of option defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("warp", help="warp a mask template onto faces with landmark sidecars")
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--template", type=Path, required=True, help="RGBA PNG; anchors in <name>.json")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--size", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--dilate", type=int)
    s.add_argument("--no-extract", dest="extract", action="store_const", const=False)

    s = sub.add_parser("extract-region", help="write region-mask sidecars for a directory")
    s.add_argument("--dir", type=Path, required=True)
    s.add_argument("--threshold", type=float, help="per-channel difference, 0..255 units")
    s.add_argument("--dilate", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--force", action="store_const", const=True)

    s = sub.add_parser("train", help="train from scratch or a warm start")
    s.add_argument("--schedule", type=Path, help="schedule JSON (default: bundled staged schedule)")
    s.add_argument("--data", type=Path)
    s.add_argument("--ckpt", type=Path)
    s.add_argument("--until-epoch", type=int)
    s.add_argument("--warm-start", type=Path)
    s.add_argument("--size", type=int)
    s.add_argument("--base-channels", type=int)
    s.add_argument("--n-blocks", type=int)
    s.add_argument("--n-content", type=int)
    s.add_argument("--disc-channels", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lambda-nmc", type=float)
    s.add_argument("--noise-std-mid", type=float)
    s.add_argument("--noise-std-last", type=float)
    s.add_argument("--pool-size", type=int)

    s = sub.add_parser("resume", help="continue training from a checkpoint")
    s.add_argument("--from", dest="source", type=Path, required=True, help="ckpt/epoch_<n>")
    s.add_argument("--schedule", type=Path)
    s.add_argument("--data", type=Path)
    s.add_argument("--ckpt", type=Path)
    s.add_argument("--until-epoch", type=int)

    s = sub.add_parser("generate", help="run a frozen checkpoint over a directory")
    s.add_argument("--ckpt", type=Path, required=True)
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--direction", choices=["ab", "ba"])
    s.add_argument("--noise-seed", type=int, help="enable noise with this seed")
    s.add_argument("--size", type=int)

    s = sub.add_parser("compose-scene", help="overlay masks onto faces in multi-face scenes")
    s.add_argument("--scenes", type=Path, required=True, help="JSON-lines SceneRecord file")
    s.add_argument("--images", type=Path, required=True, help="directory holding scene images")
    s.add_argument("--template", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--fraction", type=float)
    s.add_argument("--ckpt", type=Path, help="optional generator checkpoint")
    s.add_argument("--noise-seed", type=int)
    s.add_argument("--work-size", type=int)

    s = sub.add_parser("grid", help="tile input/output pairs into one PNG")
    s.add_argument("--inputs", type=Path, required=True)
    s.add_argument("--outputs", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--pairs-per-row", type=int)

    s = sub.add_parser("eval", help="non-mask change and mask-colour diversity")
    s.add_argument("--inputs", type=Path, required=True, help="rule-based images with sidecars")
    s.add_argument("--outputs", type=Path, required=True)
    s.add_argument("--out", type=Path, help="metrics JSON (default: stdout only)")
    return p


def resolve(args: argparse.Namespace, config: dict) -> dict:
    """Merge flag > config-file > default for the chosen subcommand."""
    out = {}
    section = {**config.get("global", {}), **config.get(args.command, {})}
    for key, default in {**GLOBAL_DEFAULTS, **DEFAULTS.get(args.command, {})}.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key == "data" and os.environ.get(DATA_ROOT_ENV):
            out[key] = os.environ[DATA_ROOT_ENV]
        elif key in section:
            out[key] = section[key]
        elif key in config and not isinstance(config[key], dict):
            out[key] = config[key]
        else:
            out[key] = default
    for key, value in vars(args).items():
        out.setdefault(key, value)
    return out


# -- subcommands -------------------------------------------------------------------


def cmd_warp(o: dict) -> int:
    template = mask_warp.MaskTemplate.load(o["template"])
    cfg = region_extract.ExtractConfig(float(o["threshold"]), int(o["dilate"]))
    out_dir = Path(o["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for img_path in datasets.list_images(o["input"]):
        lm_path = img_path.with_name(img_path.stem + image_core.LANDMARK_SUFFIX)
        if not lm_path.exists():
            logging.warning("no landmarks for %s; skipped", img_path.name)
            continue
        face = image_core.load_image(img_path, target_size=None)
        lm = mask_warp.load_landmarks(lm_path)
        if o["size"]:
            h, w = face.shape[:2]
            lm = (lm + 0.5) * np.array([o["size"] / w, o["size"] / h]) - 0.5
            face = image_core.resize_image(face, (o["size"], o["size"]))
        warped, region = mask_warp.warp_and_extract(face, lm, template, cfg)
        dest = out_dir / f"{img_path.stem}.png"
        image_core.save_image(warped, dest)
        image_core.save_image(face, out_dir / f"{img_path.stem}{image_core.FULL_SUFFIX}")
        if o["extract"]:
            image_core.save_region_mask(region, dest)
        count += 1
    print(count)
    return 0


def cmd_extract(o: dict) -> int:
    cfg = region_extract.ExtractConfig(float(o["threshold"]), int(o["dilate"]))
    n = region_extract.batch_extract(o["dir"], cfg, workers=int(o["workers"]), force=bool(o["force"]))
    print(n)
    return 0


def _load_datasets(root: Path, schedule, size: int):
    root = Path(root)
    need_regions = {e.dataset_id for e in schedule if e.nmc}
    out = {}
    for ds_id in {e.dataset_id for e in schedule}:
        if (root / ds_id / "trainA").is_dir():
            out[ds_id] = datasets.UnpairedDataset.from_dir(root / ds_id, size, ds_id in need_regions)
    if len(out) < len({e.dataset_id for e in schedule}):
        out["default"] = datasets.UnpairedDataset.from_dir(root, size, bool(need_regions))
    return out


def _schedule(path):
    return trainer.load_schedule(path) if path else trainer.staged_schedule()


def cmd_train(o: dict) -> int:
    schedule = _schedule(o["schedule"])
    noise = NoiseSpec(std_mid=o["noise_std_mid"], std_last=o["noise_std_last"], seed=o["seed"])
    gen_cfg = GeneratorConfig(o["size"], o["base_channels"], o["n_blocks"], o["n_content"], noise)
    train_cfg = trainer.TrainConfig(
        batch_size=o["batch_size"],
        pool_size=o["pool_size"],
        lambda_nmc=o["lambda_nmc"],
        disc_channels=o["disc_channels"],
    )
    data = _load_datasets(o["data"], schedule, gen_cfg.input_size)
    warm = CheckpointBundle.load(o["warm_start"]) if o["warm_start"] else None
    bundles = trainer.train(
        schedule,
        data,
        warm_start=warm,
        seed=o["seed"],
        gen_cfg=gen_cfg,
        train_cfg=train_cfg,
        until_epoch=o["until_epoch"],
        ckpt_dir=o["ckpt"],
        keep="last",
    )
    last = bundles[-1].epoch if bundles else 0
    print(f"trained through epoch {last}; checkpoints in {o['ckpt']}")
    return 0


def cmd_resume(o: dict) -> int:
    bundle = CheckpointBundle.load(o["source"])
    schedule = _schedule(o["schedule"])
    size = bundle.meta["generator_config"]["input_size"]
    data = _load_datasets(o["data"], schedule, size)
    bundles = trainer.resume(
        bundle, schedule, data, until_epoch=o["until_epoch"], ckpt_dir=o["ckpt"], keep="last"
    )
    last = bundles[-1].epoch if bundles else bundle.epoch
    print(f"trained through epoch {last}; checkpoints in {o['ckpt']}")
    return 0


def _generator(ckpt, direction, noise_seed):
    bundle = CheckpointBundle.load(ckpt)
    stored = GeneratorConfig(**bundle.meta["generator_config"]).noise
    spec = NoiseSpec(
        enabled=noise_seed is not None,
        std_mid=stored.std_mid,
        std_last=stored.std_last,
        std_first=stored.std_first,
        seed=0 if noise_seed is None else noise_seed,
    )
    return inference.load_generator(bundle, direction, spec), bundle


def cmd_generate(o: dict) -> int:
    gen, bundle = _generator(o["ckpt"], o["direction"], o["noise_seed"])
    size = o["size"] or gen.cfg.input_size
    out_dir = Path(o["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in datasets.list_images(o["input"]):
        y = inference.translate(gen, image_core.load_image(p, size), o["noise_seed"])
        dest = image_core.save_image(y, out_dir / f"{p.stem}.png")
        rows.append({"input": str(p), "output": dest.name})
    manifest = {
        "checkpoint": str(o["ckpt"]),
        "epoch": bundle.epoch,
        "direction": o["direction"],
        "noise_seed": o["noise_seed"],
        "outputs": rows,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(len(rows))
    return 0


def cmd_compose(o: dict) -> int:
    template = mask_warp.MaskTemplate.load(o["template"])
    translate = None
    if o["ckpt"]:
        gen, _ = _generator(o["ckpt"], "ab", o["noise_seed"])

        def translate(img):
            size = gen.cfg.input_size
            y = inference.translate(gen, image_core.resize_image(img, (size, size)), o["noise_seed"])
            return image_core.resize_image(y, img.shape[:2])

    out_dir = Path(o["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    annotations = []
    for k, row in enumerate(datasets.read_jsonl(o["scenes"])):
        scene = datasets.SceneRecord.from_dict(row)
        img = image_core.load_storage(Path(o["images"]) / scene.image)
        composed = datasets.scene_compose(
            img, scene, template, float(o["fraction"]), o["seed"] + k, translate, o["work_size"]
        )
        image_core.save_image(composed.image, out_dir / Path(scene.image).with_suffix(".png").name)
        annotations += composed.annotations(scene)
    datasets.write_jsonl(annotations, out_dir / "annotations.jsonl")
    print(sum(a["label"] == "masked" for a in annotations))
    return 0


def _paired(inputs: Path, outputs: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for p in datasets.list_images(inputs):
        q = Path(outputs) / f"{p.stem}.png"
        if q.exists():
            pairs.append((p, q))
    if not pairs:
        raise FileNotFoundError(f"no matching images between {inputs} and {outputs}")
    return pairs


def cmd_grid(o: dict) -> int:
    pairs = [
        (image_core.load_storage(p), image_core.load_storage(q))
        for p, q in _paired(o["inputs"], o["outputs"])
    ]
    size = pairs[0][0].shape[:2]
    pairs = [
        tuple(
            t if t.shape[:2] == size else image_core.to_storage(
                image_core.resize_image(image_core.to_model(t), size)
            )
            for t in pair
        )
        for pair in pairs
    ]
    print(metrics.emit_grid(pairs, o["out"], int(o["pairs_per_row"])))
    return 0


def cmd_eval(o: dict) -> int:
    changes, outs, regions = [], [], []
    for p, q in _paired(o["inputs"], o["outputs"]):
        inp = image_core.load_image(p, target_size=None)
        out = image_core.load_image(q, target_size=None)
        if inp.shape != out.shape:
            out = image_core.resize_image(out, inp.shape[:2])
        region = image_core.load_region_mask(image_core.region_path_for(p), inp.shape[:2])
        changes.append(metrics.non_mask_change(inp, out, region))
        if region.any():
            outs.append(out)
            regions.append(region)
    summary = {
        "n_images": len(changes),
        "non_mask_change_mean": float(np.mean(changes)),
        "non_mask_change_max": float(np.max(changes)),
        "mask_color_diversity": metrics.mask_color_diversity(outs, regions) if outs else None,
    }
    text = json.dumps(summary, indent=1, sort_keys=True)
    if o["out"]:
        Path(o["out"]).write_text(text)
    print(text)
    return 0


COMMANDS = {
    "warp": cmd_warp,
    "extract-region": cmd_extract,
    "train": cmd_train,
    "resume": cmd_resume,
    "generate": cmd_generate,
    "compose-scene": cmd_compose,
    "grid": cmd_grid,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        config = json.loads(Path(args.config).read_text()) if args.config else {}
        opts = resolve(args, config)
        shown = {k: str(v) if isinstance(v, Path) else v for k, v in sorted(opts.items())}
        print("config: " + json.dumps(shown, default=str, sort_keys=True), file=sys.stderr)
        return COMMANDS[args.command](opts)
    except Exception as exc:  # one machine-parsable line, exit 1
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
