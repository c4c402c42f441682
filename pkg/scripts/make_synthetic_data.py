"""Write a small synthetic workspace for trying the command-line tools.

Layout produced under ``--out``:

    faces/          plain faces with <stem>.landmarks.json sidecars
    template.png    RGBA mask template (+ template.json anchors)
    data/trainB/    "real" masked faces for the target domain
    scenes.jsonl    one multi-face scene record, with scene.png

Then, for example:

    maskaug warp --in OUT/faces --template OUT/template.png --out OUT/data/trainA --size 64
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from maskaug import image_core, mask_warp
from maskaug.datasets import write_jsonl


def draw_face(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    bg = tuple(int(v) for v in rng.integers(0, 256, 3))
    skin = tuple(int(v) for v in rng.integers(140, 240, 3))
    img = Image.new("RGB", (size, size), bg)
    d = ImageDraw.Draw(img)
    lm = mask_warp.canonical_landmarks(size)
    d.polygon([tuple(p) for p in np.concatenate([lm[:17], lm[26:16:-1]])], fill=skin)
    for eye in (lm[36:42], lm[42:48]):
        d.polygon([tuple(p) for p in eye], fill=(40, 30, 30))
    d.polygon([tuple(p) for p in lm[48:60]], fill=(170, 60, 70))
    return np.asarray(img), lm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    out = args.out

    (out / "faces").mkdir(parents=True, exist_ok=True)
    (out / "data" / "trainB").mkdir(parents=True, exist_ok=True)
    template = mask_warp.synthetic_template(128)
    template.save(out / "template.png")
    for i in range(args.n):
        face, lm = draw_face(rng, args.size)
        path = out / "faces" / f"face{i:03d}.png"
        image_core.save_image(face, path)
        mask_warp.save_landmarks(lm, path)
        # target-domain faces wear a differently coloured, slightly noisy mask
        colour = tuple(int(v) for v in rng.integers(180, 255, 3))
        tinted = mask_warp.synthetic_template(128, color=colour)
        real = mask_warp.warp_mask(image_core.to_model(face), lm, tinted)
        real = real + rng.normal(0, 0.02, real.shape)
        image_core.save_image(np.clip(real, -1, 1), out / "data" / "trainB" / f"real{i:03d}.png")

    faces, lms = [], []
    scene = np.zeros((args.size + 20, 3 * (args.size + 10) + 10, 3), np.uint8)
    for k in range(3):
        face, lm = draw_face(rng, args.size)
        x = 10 + k * (args.size + 10)
        scene[10 : 10 + args.size, x : x + args.size] = face
        faces.append({"bbox": [x, 10, args.size, args.size]})
        lms.append((lm + [x, 10]).tolist())
    image_core.save_image(scene, out / "scene.png")
    write_jsonl([{"image": "scene.png", "faces": faces, "landmarks": lms}], out / "scenes.jsonl")
    print(f"wrote {args.n} faces, template and one scene under {out}")


if __name__ == "__main__":
    main()
