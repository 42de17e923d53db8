import numpy as np
import pytest

from detkit import annotations as ann
from detkit import imageops
from detkit.annotations import Annotation, Detection, ImageMeta
from detkit.geometry import Box

import oracles

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        request.config.stash[VERDICTS].append((number, line))
        print(line)
        return ok

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _quant(b: Box) -> Box:
    # six decimals so CSV round-trips are exact
    return Box(*(round(v, 6) for v in b.as_tuple()))


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small on-disk corpus: ground truth, three models' predictions, metas, pairs, images."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(7)
    gt, models = [], [[], [], []]
    metas = []
    for k in range(12):
        img = f"img{k:02d}.jpg"
        metas.append(ImageMeta(img, 100, 100))
        truths = [_quant(oracles.random_box(rng)) for _ in range(rng.integers(0, 4))]
        gt += [Annotation(img, b) for b in truths]
        for dets in models:
            for t in truths:
                if rng.random() < 0.8:
                    j = rng.normal(0, 2, 4)
                    x0, y0 = max(0.0, t.xmin + j[0]), max(0.0, t.ymin + j[1])
                    b = Box(x0, y0, min(100.0, max(x0 + 1, t.xmax + j[2])), min(100.0, max(y0 + 1, t.ymax + j[3])))
                    dets.append(Detection(img, _quant(b), round(float(rng.uniform(0.2, 1.0)), 6)))
            for _ in range(rng.integers(0, 3)):
                dets.append(Detection(img, _quant(oracles.random_box(rng)), round(float(rng.uniform(0.0, 0.8)), 6)))
    paths = {
        "root": root,
        "gt": root / "gt.csv",
        "metas": root / "metas.csv",
        "pairs": root / "pairs.csv",
        "pred": [root / f"model{i}.csv" for i in range(3)],
    }
    ann.save_annotations(gt, paths["gt"])
    ann.save_metas(metas, paths["metas"])
    for dets, p in zip(models, paths["pred"]):
        ann.save_detections(dets, p)
    paths["pairs"].write_text("filename_a,filename_b\nimg03.jpg,img01.jpg\nimg05.jpg,img06.jpg\n")

    # images for the augmentation manifest
    for name in ("a.ppm", "b.ppm"):
        imageops.write_ppm(rng.integers(0, 256, (24, 32, 3), dtype=np.uint8), root / name)
    ann.save_annotations([Annotation("a.ppm", Box(2, 3, 12, 15)), Annotation("a.ppm", Box(20, 5, 30, 20))],
                         root / "aug_gt.csv")
    rows = [
        "a.ppm,out_mix.ppm,mixup,other=b.ppm;lambda=0.4,0",
        "a.ppm,out_motion.ppm,motion_blur,length=5;angle=30,1",
        "a.ppm,out_gauss.ppm,blur,kind=gaussian;size=3,2",
        "a.ppm,out_median.ppm,blur,kind=median;size=3,3",
        "a.ppm,out_rgb.ppm,rgb_shift,,4",
        "a.ppm,out_hsv.ppm,hsv_shift,dh=15;ds=0.1;dv=10,5",
        "a.ppm,out_bc.ppm,brightness_contrast,,6",
        "a.ppm,out_sog.ppm,shades_of_gray,p=6,7",
        "a.ppm,out_nlm.ppm,denoise_nlm,h=10;h_color=10;template=3;search=7,8",
        "a.ppm,out_hflip.ppm,hflip,,9",
        "a.ppm,out_affine.ppm,affine,,10",
    ]
    (root / "manifest.csv").write_text("input,output,op,params,seed\n" + "\n".join(rows) + "\n")
    paths["manifest"] = root / "manifest.csv"
    paths["aug_gt"] = root / "aug_gt.csv"
    return paths
