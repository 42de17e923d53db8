"""Synthetic ground truth and noisy detector outputs shared by the demos."""
import numpy as np

from detkit import Annotation, Box, Detection


def random_box(rng, width=640, height=480, min_side=20, max_side=160):
    w, h = rng.uniform(min_side, max_side, 2)
    x, y = rng.uniform(0, width - w), rng.uniform(0, height - h)
    return Box(x, y, x + w, y + h)


def ground_truth(rng, n_images=50, max_objects=3):
    return [Annotation(f"img{k:03d}.jpg", random_box(rng))
            for k in range(n_images) for _ in range(rng.integers(1, max_objects + 1))]


def detector(rng, gt, recall=0.8, jitter=6.0, repeats=2, false_positives=1.0):
    """Mimic a detector: jittered hits, duplicate firings and background false positives."""
    out = []
    for a in gt:
        if rng.random() > recall:
            continue
        for r in range(rng.integers(1, repeats + 1)):
            j = rng.normal(0, jitter * (1 + r), 4)
            x0, y0 = a.box.xmin + j[0], a.box.ymin + j[1]
            b = Box(x0, y0, max(x0 + 2, a.box.xmax + j[2]), max(y0 + 2, a.box.ymax + j[3]))
            out.append(Detection(a.image_id, b, float(np.clip(rng.normal(0.75 - 0.2 * r, 0.12), 0.01, 1.0))))
    for img in sorted({a.image_id for a in gt}):
        for _ in range(rng.poisson(false_positives)):
            out.append(Detection(img, random_box(rng), float(rng.uniform(0.05, 0.6))))
    return out
