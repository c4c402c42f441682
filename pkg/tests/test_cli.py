import json

import numpy as np
import pytest

from maskaug import cli, image_core, mask_warp, toy
from maskaug.datasets import write_jsonl

SIZE = 32
TINY = ["--size", "32", "--base-channels", "4", "--n-blocks", "1", "--disc-channels", "4",
        "--pool-size", "4"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out.strip(), err


def make_faces(root, n=4, size=48, seed=0):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    lm = mask_warp.canonical_landmarks(size)
    for i in range(n):
        img = np.empty((size, size, 3), np.uint8)
        img[:] = rng.integers(100, 220, 3)
        p = root / f"face{i}.png"
        image_core.save_image(img, p)
        mask_warp.save_landmarks(lm, p)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    make_faces(root / "faces")
    mask_warp.synthetic_template(64).save(root / "template.png")
    (root / "data" / "trainB").mkdir(parents=True)
    for i, b in enumerate(toy.make_domain_b(4, seed=1)):
        image_core.save_image(b, root / "data" / "trainB" / f"b{i}.png")
    sched = [
        {"epoch_start": 1, "epoch_end": 1, "lambda_A": 10, "lambda_B": 10},
        {"epoch_start": 2, "epoch_end": 3, "lambda_A": 8, "lambda_B": 8, "nmc": True},
    ]
    (root / "sched.json").write_text(json.dumps(sched))
    return root


def test_warp_then_extract(workspace, capsys):
    w = workspace
    code, out, _ = run(capsys, "warp", "--in", w / "faces", "--template", w / "template.png",
                       "--out", w / "data" / "trainA", "--size", SIZE)
    assert (code, out) == (0, "4")
    mask = image_core.load_region_mask(w / "data/trainA/face0.regionmask.png", (SIZE, SIZE))
    assert 0 < mask.mean() < 1
    assert run(capsys, "extract-region", "--dir", w / "data/trainA")[:2] == (0, "0")
    assert run(capsys, "extract-region", "--dir", w / "data/trainA", "--force")[:2] == (0, "4")


def test_train_resume_generate(workspace, capsys):
    w = workspace
    if not (w / "data/trainA").exists():
        test_warp_then_extract(workspace, capsys)
    code, out, err = run(capsys, "--seed", 1, "train", "--schedule", w / "sched.json",
                         "--data", w / "data", "--ckpt", w / "ckpt", "--until-epoch", 2, *TINY)
    assert code == 0, err
    assert sorted(p.name for p in (w / "ckpt").glob("epoch_*")) == ["epoch_1", "epoch_2"]
    assert '"seed": 1' in err  # effective config is echoed
    code, out, err = run(capsys, "resume", "--from", w / "ckpt/epoch_2", "--schedule",
                         w / "sched.json", "--data", w / "data", "--ckpt", w / "ckpt")
    assert code == 0, err
    assert "epoch 3" in out
    assert (w / "ckpt/epoch_3/manifest.json").exists()

    ck = w / "ckpt/epoch_3"
    outs = []
    for name, extra in [("g1", ["--noise-seed", 5]), ("g2", ["--noise-seed", 5]), ("g3", [])]:
        code, out, err = run(capsys, "generate", "--ckpt", ck, "--in", w / "data/trainA",
                             "--out", w / name, *extra)
        assert (code, out) == (0, "4"), err
        outs.append((w / name / "face0.png").read_bytes())
    assert outs[0] == outs[1]
    man = json.loads((w / "g1/manifest.json").read_text())
    assert man["epoch"] == 3 and man["noise_seed"] == 5 and len(man["outputs"]) == 4

    code, out, _ = run(capsys, "eval", "--inputs", w / "data/trainA", "--outputs", w / "g3",
                       "--out", w / "metrics.json")
    summary = json.loads((w / "metrics.json").read_text())
    assert code == 0 and summary["n_images"] == 4 and summary["non_mask_change_mean"] >= 0
    code, out, _ = run(capsys, "grid", "--inputs", w / "data/trainA", "--outputs", w / "g3",
                       "--out", w / "grid.png", "--pairs-per-row", 2)
    assert code == 0 and image_core.load_storage(w / "grid.png").shape == (64, 128, 3)


def test_compose_scene(workspace, tmp_path, capsys):
    img = np.full((60, 140, 3), 200, np.uint8)
    image_core.save_image(img, tmp_path / "s.png")
    faces = [{"bbox": [4, 4, 50, 50]}, {"bbox": [70, 4, 50, 50]}]
    lms = [(mask_warp.canonical_landmarks(50) + [f["bbox"][0], 4]).tolist() for f in faces]
    write_jsonl([{"image": "s.png", "faces": faces, "landmarks": lms}], tmp_path / "scenes.jsonl")
    code, out, err = run(capsys, "compose-scene", "--scenes", tmp_path / "scenes.jsonl",
                         "--images", tmp_path, "--template", workspace / "template.png",
                         "--out", tmp_path / "out", "--fraction", 0.5, "--work-size", 64)
    assert (code, out) == (0, "1"), err
    rows = [json.loads(l) for l in (tmp_path / "out/annotations.jsonl").read_text().splitlines()]
    assert sorted(r["label"] for r in rows) == ["masked", "unmasked"]


def test_operational_error_exit_1(tmp_path, capsys):
    code, out, err = run(capsys, "generate", "--ckpt", tmp_path / "nope", "--in", tmp_path,
                         "--out", tmp_path / "o")
    assert code == 1
    lines = [l for l in err.splitlines() if l.startswith("error:")]
    assert len(lines) == 1 and lines[0].startswith("error: FileNotFoundError:")


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--batch-size", "many"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2


def test_option_precedence(tmp_path, monkeypatch):
    cfg = {"threshold": 3.0, "extract-region": {"workers": 3}, "train": {"data": "/from/config"}}
    parse = cli._parser().parse_args
    o = cli.resolve(parse(["extract-region", "--dir", "x"]), cfg)
    assert (o["threshold"], o["workers"], o["dilate"]) == (3.0, 3, 2)
    o = cli.resolve(parse(["extract-region", "--dir", "x", "--workers", "5"]), cfg)
    assert o["workers"] == 5
    monkeypatch.delenv(cli.DATA_ROOT_ENV, raising=False)
    assert cli.resolve(parse(["train"]), cfg)["data"] == "/from/config"
    monkeypatch.setenv(cli.DATA_ROOT_ENV, "/from/env")
    assert cli.resolve(parse(["train"]), cfg)["data"] == "/from/env"
    assert str(cli.resolve(parse(["train", "--data", "/flag"]), cfg)["data"]) == "/flag"
    assert cli.resolve(parse(["--seed", "7", "grid", "--inputs", "a", "--outputs", "b",
                              "--out", "c"]), {})["seed"] == 7
