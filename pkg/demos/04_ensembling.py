"""Fusing several detectors with Weighted Boxes Fusion, and merging flipped test-time views.

Run: python demos/04_ensembling.py
"""
import functools

import numpy as np

from detkit import AffineMap, FusionConfig, ViewTransform, ensemble_pipeline, evaluate, filter_confidence, tta_merge
from detkit.annotations import group_by_image
from detkit.geometry import transform_box

import scene


def by_image(models, img):
    return [m.get(img, []) for m in models]


def main():
    rng = np.random.default_rng(3)
    gt = scene.ground_truth(rng, n_images=200)
    images = sorted({a.image_id for a in gt})
    models = [scene.detector(rng, gt, recall=r, jitter=j) for r, j in ((0.8, 5), (0.75, 7), (0.7, 9))]
    for k, m in enumerate(models):
        print(f"model {k}: F1 {evaluate(gt, m).f1:.4f}")

    # rescaling demotes boxes only some models agree on, so a score filter removes them
    grouped = [group_by_image(m) for m in models]
    post = [functools.partial(filter_confidence, min_score=0.4)]
    for mode in ("mean", "mean_rescaled"):
        cfg = FusionConfig(0.55, score_mode=mode)
        fused = [d for img in images for d in ensemble_pipeline(by_image(grouped, img), cfg, post)]
        r = evaluate(gt, fused)
        print(f"WBF {mode:14s} + filter 0.4: F1 {r.f1:.4f}  AP {r.ap:.4f}  boxes {len(fused)}")

    # the same model run on the image and on its mirror; predictions map back before NMS
    plain, mirrored = group_by_image(models[0]), group_by_image(scene.detector(rng, gt))
    flip = AffineMap.hflip(640)
    merged = []
    for img in images:
        mirror_preds = [d.with_box(transform_box(d.box, flip)) for d in mirrored.get(img, [])]
        views = [(ViewTransform(), plain.get(img, [])), (ViewTransform(flip, "hflip"), mirror_preds)]
        merged += tta_merge(views, nms_iou=0.30)
    print(f"TTA identity+hflip: F1 {evaluate(gt, merged).f1:.4f}")


if __name__ == "__main__":
    main()
