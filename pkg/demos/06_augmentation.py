"""Image augmentations on a synthetic wound-like photo, written out as PPM files.

Run: python demos/06_augmentation.py [output_dir]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from detkit import Box
from detkit import imageops as io
from detkit.geometry import AffineMap


def synthetic_photo(rng, h=240, w=320):
    yy, xx = np.mgrid[:h, :w]
    skin = np.stack([200 + 0 * xx, 160 + 0.05 * yy, 130 + 0.05 * xx], axis=-1).astype(float)
    blob = ((yy - 120) / 40.0) ** 2 + ((xx - 160) / 55.0) ** 2 < 1
    skin[blob] = (150, 50, 50)
    # warm cast plus sensor noise
    return io.to_uint8(skin * (1.1, 1.0, 0.8) + rng.normal(0, 8, skin.shape))


def main(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(5)
    img, other = synthetic_photo(rng), synthetic_photo(rng)[:, ::-1]
    box = Box(105, 80, 215, 160)

    lam = io.sample_mixup_lambda(1.5, seed=0)
    mixed, labels = io.mixup(img, [box], other, [Box(105, 80, 215, 160)], lam)
    print(f"mixup lambda {lam:.3f}, label weights {[round(w, 3) for _, w in labels]}")

    flipped, boxes = io.flip_or_affine(img, [Box(20, 30, 80, 90)], AffineMap.hflip(img.shape[1]))
    print("hflip maps (20, 30, 80, 90) to", [b.as_tuple() for b in boxes])

    outputs = {
        "original": img,
        "mixup": mixed,
        "motion_blur": io.motion_blur(img, 9, 30.0),
        "median": io.blur(img, "median", 5),
        "hsv_shift": io.hsv_shift(img, dh=10, ds=0.1, dv=-10),
        "shades_of_gray": io.shades_of_gray(img, 6),
        "nlm": io.denoise_nlm(img, h=10, h_color=10, template=7, search=21),
        "hflip": flipped,
    }
    for name, arr in outputs.items():
        io.write_ppm(arr, out_dir / f"{name}.ppm")
        means = arr.reshape(-1, 3).mean(axis=0)
        print(f"{name:15s} channel means {np.round(means, 1)}")
    print("wrote", len(outputs), "images to", out_dir)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="detkit-demo-"))
