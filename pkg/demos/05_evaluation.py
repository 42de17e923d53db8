"""Evaluation: counts to ratios, precision-recall curves, AP modes and IoU sweeps.

Run: python demos/05_evaluation.py
"""
import numpy as np

from detkit import EvalReport, evaluate, threshold_sweep
from detkit.metrics import match_detections, pr_curve, report_json

import scene


def main():
    # recall, precision and F1 follow from TP, FP and the number of ground-truth boxes
    for tp, fp in ((1612, 628), (1502, 345)):
        r = EvalReport.from_counts(tp, fp, 2097)
        print(f"TP={tp} FP={fp}: recall {r.recall:.4f} precision {r.precision:.4f} F1 {r.f1:.4f}")

    rng = np.random.default_rng(4)
    gt = scene.ground_truth(rng, n_images=300)
    preds = scene.detector(rng, gt, jitter=10)
    curve = pr_curve(match_detections(gt, preds, 0.5))
    print(f"{len(curve)} ranked detections, final recall {curve.recall[-1]:.4f}")
    for mode in ("allpoint", "elevenpoint"):
        print(f"AP ({mode}): {evaluate(gt, preds, 0.5, mode).ap:.4f}")

    # looser matching can only add true positives
    for r in threshold_sweep(gt, preds, [0.3, 0.4, 0.5, 0.75]):
        print(f"IoU {r.iou_threshold:.2f}: TP {r.tp:4d}  F1 {r.f1:.4f}")
    print(report_json(evaluate(gt, preds)))


if __name__ == "__main__":
    main()
