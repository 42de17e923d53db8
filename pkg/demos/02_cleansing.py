"""Cleaning a training set: duplicate images, intersecting boxes, validation, pseudo-labels.

Run: python demos/02_cleansing.py
"""
import numpy as np

from detkit import Annotation, Box, DuplicatePair, ImageMeta
from detkit import annotations as ann

import scene


def main():
    rng = np.random.default_rng(1)
    gt = scene.ground_truth(rng, n_images=20)
    # the same photo was labelled twice under two names
    gt += [Annotation("img100.jpg", Box(40, 40, 120, 140)), Annotation("img101.jpg", Box(60, 30, 150, 120))]
    pairs = [DuplicatePair("img101.jpg", "img100.jpg")]

    joined = ann.join_duplicates(gt, pairs)
    merged = ann.merge_intersecting(joined)
    print(f"{len(gt)} boxes -> {len(joined)} after joining duplicates -> {len(merged)} after merging")
    print("dropped images:", sorted(ann.dropped_images(pairs)))
    print("img100 now holds:", [a.box.as_tuple() for a in merged if a.image_id == "img100.jpg"])
    assert ann.merge_intersecting(merged) == merged

    metas = {m: ImageMeta(m, 640, 480) for m in {a.image_id for a in merged}}
    broken = merged + [Annotation("img000.jpg", Box(600, 400, 700, 500)), merged[0]]
    for issue in ann.validate(broken, metas):
        print("issue:", issue.kind, issue.image_id, issue.message)

    # confident predictions on unlabeled images become extra training labels
    preds = scene.detector(rng, scene.ground_truth(rng, n_images=30))
    labels = ann.pseudo_label(preds, min_score=0.70)
    print(f"pseudo-labels: kept {len(labels)} of {len(preds)} predictions at score >= 0.70")


if __name__ == "__main__":
    main()
