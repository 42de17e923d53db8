"""Single-model detection filtering for one image at a time.

Every function here takes the detections of a single image and returns a
subset (possibly re-scored) in a deterministic order. Ties are broken by
:func:`detkit.annotations.ranking_key`: score desc, area desc, then
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .annotations import Detection, ranking_key
from .geometry import iou, iou_matrix


@dataclass(frozen=True)
class SoftNmsConfig:
    """Soft-NMS settings.

    ``decay`` is ``"gaussian"`` (factor ``exp(-iou**2 / sigma)`` for every
    overlapping box) or ``"linear"`` (factor ``1 - iou`` once
    ``iou >= iou_trigger``). A box whose score is lowered below
    ``prune_score`` by a decay step is dropped; boxes never decayed are
    kept whatever their score. ``min_score`` is an optional plain
    confidence filter applied before suppression.
    """

    decay: str = "gaussian"
    sigma: float = 0.5
    iou_trigger: float = 0.3
    prune_score: float = 0.5
    min_score: float = 0.0

    def __post_init__(self):
        if self.decay not in ("gaussian", "linear"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.iou_trigger <= 1.0:
            raise ValueError("iou_trigger must lie in (0, 1]")
        if not 0.0 <= self.prune_score <= 1.0 or not 0.0 <= self.min_score <= 1.0:
            raise ValueError("score thresholds must lie in [0, 1]")


def _ranked(dets: Iterable[Detection]) -> list[Detection]:
    return sorted(dets, key=ranking_key)


def nms(dets: Sequence[Detection], iou_thresh: float = 0.5) -> list[Detection]:
    """Greedy NMS: keep the best box, drop everything with IoU >= ``iou_thresh`` to it, repeat."""
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError("iou_thresh must lie in (0, 1]")
    order = _ranked(dets)
    if not order:
        return []
    ious = iou_matrix([d.box for d in order], [d.box for d in order])
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        keep.append(order[i])
        alive[i + 1:] &= ious[i, i + 1:] < iou_thresh
    return keep


def soft_nms(dets: Sequence[Detection], cfg: SoftNmsConfig = SoftNmsConfig()) -> list[Detection]:
    remaining = [d for d in dets if d.score >= cfg.min_score]
    keep = []
    while remaining:
        remaining.sort(key=ranking_key)
        best = remaining.pop(0)
        keep.append(best)
        survivors = []
        for d in remaining:
            o = iou(best.box, d.box)
            if cfg.decay == "gaussian":
                factor = math.exp(-(o * o) / cfg.sigma)
            else:
                factor = 1.0 - o if o >= cfg.iou_trigger else 1.0
            if factor >= 1.0:
                survivors.append(d)
                continue
            score = d.score * factor
            if score >= cfg.prune_score:
                survivors.append(d.with_score(score))
        remaining = survivors
    return sorted(keep, key=ranking_key)


def filter_confidence(dets: Sequence[Detection], min_score: float = 0.3) -> list[Detection]:
    if not 0.0 <= min_score <= 1.0:
        raise ValueError("min_score must lie in [0, 1]")
    return [d for d in dets if d.score >= min_score]


def remove_overlaps(dets: Sequence[Detection], overlap_thresh: float = 0.8) -> list[Detection]:
    """Collapse double detections.

    Boxes linked by IoU >= ``overlap_thresh`` (transitively) form a group;
    only the best-ranked member of each group survives. Output is in rank order.
    """
    order = _ranked(dets)
    n = len(order)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n:
        ious = iou_matrix([d.box for d in order], [d.box for d in order])
        for i, j in zip(*np.nonzero(np.triu(ious >= overlap_thresh, k=1))):
            ri, rj = find(int(i)), find(int(j))
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    # roots are the smallest rank index in each group, i.e. the best member
    return [order[i] for i in range(n) if find(i) == i]


def adaptive_suppress(dets: Sequence[Detection], thresh: float = 0.5) -> list[Detection]:
    """Confidence filter that never empties an image holding a single detection."""
    dets = list(dets)
    if len(dets) == 1:
        return dets
    return [d for d in dets if d.score >= thresh]
