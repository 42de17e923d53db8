"""Single-class detection evaluation: matching, counts, PR curve, AP.

Matching is greedy over detections in descending score; each detection
claims the unmatched ground truth on its image with the highest IoU,
provided that IoU reaches the threshold. Detections on images without
ground truth are false positives. Recall uses the global ground-truth
count, so it is plain count arithmetic: ``tp / n_gt``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .annotations import Annotation, Detection, ranking_key
from .geometry import iou_matrix

AP_MODES = ("allpoint", "elevenpoint")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching, with detections listed in evaluation (rank) order.

    ``det_gt[i]`` is the index into ``gt`` claimed by ``detections[i]``,
    or -1 for a false positive.
    """

    detections: tuple[Detection, ...]
    det_gt: tuple[int, ...]
    gt_matched: tuple[bool, ...]
    iou_threshold: float

    @property
    def is_tp(self) -> np.ndarray:
        return np.array(self.det_gt, dtype=int) >= 0

    @property
    def tp(self) -> int:
        return int(self.is_tp.sum())

    @property
    def fp(self) -> int:
        return len(self.det_gt) - self.tp

    @property
    def n_gt(self) -> int:
        return len(self.gt_matched)


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray

    def __len__(self):
        return len(self.recall)


@dataclass(frozen=True)
class EvalReport:
    iou_threshold: float
    ap_mode: str
    n_gt: int
    tp: int
    fp: int
    fn: int
    recall: float
    precision: float
    f1: float
    ap: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, n_gt: int, ap: float = 0.0, iou_threshold: float = 0.5,
                    ap_mode: str = "allpoint") -> "EvalReport":
        """Ratios from raw counts, with 0 wherever a denominator vanishes."""
        if tp < 0 or fp < 0 or tp > n_gt:
            raise ValueError(f"inconsistent counts tp={tp} fp={fp} n_gt={n_gt}")
        recall = tp / n_gt if n_gt else 0.0
        precision = tp / (tp + fp) if tp + fp else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(iou_threshold, ap_mode, n_gt, tp, fp, n_gt - tp, recall, precision, f1, ap)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("iou_threshold", "recall", "precision", "f1", "ap"):
            d[k] = round(float(d[k]), 6)
        return d


def match_detections(gt: Sequence[Annotation], dets: Sequence[Detection], iou_thresh: float = 0.5) -> MatchResult:
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError("iou_thresh must lie in (0, 1]")
    gt = list(gt)
    gt_by_image: dict[str, list[int]] = {}
    # equal-IoU ties go to the lexicographically smallest box, not the first row
    for i in sorted(range(len(gt)), key=lambda i: gt[i].box.as_tuple()):
        gt_by_image.setdefault(gt[i].image_id, []).append(i)

    order = sorted(dets, key=ranking_key)
    det_rows: dict[str, list[int]] = {}
    for k, d in enumerate(order):
        det_rows.setdefault(d.image_id, []).append(k)
    ious = {}
    for image_id, rows in det_rows.items():
        idx = gt_by_image.get(image_id, [])
        table = iou_matrix([order[k].box for k in rows], [gt[i].box for i in idx])
        for r, k in enumerate(rows):
            ious[k] = (idx, table[r])

    matched = [False] * len(gt)
    det_gt = []
    for k in range(len(order)):
        idx, row = ious[k]
        best, best_iou = -1, -1.0
        for col, g in enumerate(idx):
            if not matched[g] and row[col] > best_iou:
                best, best_iou = g, row[col]
        if best >= 0 and best_iou >= iou_thresh:
            matched[best] = True
            det_gt.append(best)
        else:
            det_gt.append(-1)
    return MatchResult(tuple(order), tuple(det_gt), tuple(matched), iou_thresh)


def pr_curve(match: MatchResult, n_gt: int | None = None) -> PRCurve:
    """Cumulative recall/precision after each detection in rank order."""
    n_gt = match.n_gt if n_gt is None else n_gt
    tp = np.cumsum(match.is_tp.astype(float))
    fp = np.cumsum((~match.is_tp).astype(float))
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    with np.errstate(invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1.0), 0.0)
    return PRCurve(recall, precision)


def precision_envelope(precision: np.ndarray) -> np.ndarray:
    """Precision at each point replaced by the best precision at equal or higher recall."""
    return np.maximum.accumulate(np.asarray(precision, dtype=float)[::-1])[::-1]


def average_precision(curve: PRCurve, mode: str = "allpoint") -> float:
    """Area under the precision envelope (``allpoint``) or its 11-recall-point mean."""
    if mode not in AP_MODES:
        raise ValueError(f"unknown ap mode {mode!r}")
    if len(curve) == 0:
        return 0.0
    recall = np.asarray(curve.recall, dtype=float)
    env = precision_envelope(curve.precision)
    if mode == "allpoint":
        steps = np.diff(np.concatenate([[0.0], recall]))
        return float(np.clip(np.sum(steps * env), 0.0, 1.0))
    total = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        reached = env[recall >= r - 1e-12]
        total += reached.max() if reached.size else 0.0
    return float(total / 11.0)


def evaluate(gt: Sequence[Annotation], preds: Sequence[Detection], iou_thresh: float = 0.5,
             ap_mode: str = "allpoint") -> EvalReport:
    match = match_detections(gt, preds, iou_thresh)
    ap = average_precision(pr_curve(match), ap_mode)
    return EvalReport.from_counts(match.tp, match.fp, match.n_gt, ap, iou_thresh, ap_mode)


def threshold_sweep(gt: Sequence[Annotation], preds: Sequence[Detection], thresholds: Sequence[float],
                    ap_mode: str = "allpoint") -> list[EvalReport]:
    return [evaluate(gt, preds, t, ap_mode) for t in thresholds]


def report_json(report: EvalReport | Sequence[EvalReport]) -> str:
    if isinstance(report, EvalReport):
        payload = report.to_dict()
    else:
        payload = [r.to_dict() for r in report]
    return json.dumps(payload, indent=2) + "\n"
