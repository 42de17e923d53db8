"""Suppression strategies on one detector's raw output, scored against ground truth.

Run: python demos/03_postprocess.py
"""
import functools

import numpy as np

from detkit import SoftNmsConfig, adaptive_suppress, evaluate, filter_confidence, nms, remove_overlaps, soft_nms
from detkit.annotations import per_image

import scene


def main():
    rng = np.random.default_rng(2)
    gt = scene.ground_truth(rng, n_images=200)
    raw = scene.detector(rng, gt, repeats=3, false_positives=2.0)

    steps = {
        "raw": lambda d: d,
        "nms 0.5": functools.partial(nms, iou_thresh=0.5),
        "soft-nms gaussian": functools.partial(soft_nms, cfg=SoftNmsConfig("gaussian", sigma=0.5, prune_score=0.3)),
        "remove overlaps 0.8": functools.partial(remove_overlaps, overlap_thresh=0.8),
        "filter 0.3": functools.partial(filter_confidence, min_score=0.3),
        "adaptive 0.5": functools.partial(adaptive_suppress, thresh=0.5),
        "nms then filter": lambda d: filter_confidence(nms(d, 0.5), 0.3),
    }
    print(f"{'step':22s} {'boxes':>6s} {'TP':>5s} {'FP':>5s} {'recall':>7s} {'prec':>7s} {'F1':>7s} {'AP':>7s}")
    for name, fn in steps.items():
        out = per_image(fn, raw)
        r = evaluate(gt, out, 0.5)
        print(f"{name:22s} {len(out):6d} {r.tp:5d} {r.fp:5d} {r.recall:7.4f} {r.precision:7.4f} {r.f1:7.4f} {r.ap:7.4f}")


if __name__ == "__main__":
    main()
