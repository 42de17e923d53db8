"""Cross-model and cross-view fusion of detections for one image."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .annotations import Detection, ranking_key
from .geometry import AffineMap, Box, BoxError, iou, transform_box
from .postprocess import nms

PostStep = Callable[[list], list]


@dataclass(frozen=True)
class FusionConfig:
    """Weighted Boxes Fusion settings.

    ``weights`` holds one non-negative weight per model; ``None`` means
    equal weights. ``score_mode`` is ``"mean"`` or ``"mean_rescaled"``;
    the latter scales a cluster's score by ``min(T, N) / N`` where ``T`` is
    its member count and ``N`` the model count.
    """

    iou_thresh: float = 0.55
    weights: tuple[float, ...] | None = None
    score_mode: str = "mean_rescaled"

    def __post_init__(self):
        if not 0.0 < self.iou_thresh <= 1.0:
            raise ValueError("iou_thresh must lie in (0, 1]")
        if self.score_mode not in ("mean", "mean_rescaled"):
            raise ValueError(f"unknown score_mode {self.score_mode!r}")
        if self.weights is not None:
            if any(w < 0 for w in self.weights):
                raise ValueError("weights must be non-negative")
            if not any(w > 0 for w in self.weights):
                raise ValueError("at least one weight must be positive")

    def model_weights(self, n_models: int) -> list[float]:
        if self.weights is None:
            return [1.0] * n_models
        if len(self.weights) != n_models:
            raise ValueError(f"{len(self.weights)} weights given for {n_models} models")
        return [float(w) for w in self.weights]


@dataclass(frozen=True)
class ViewTransform:
    """Map from an augmented view's coordinates back to the original image."""

    to_original: AffineMap = field(default_factory=AffineMap.identity)
    label: str = "identity"

    def __post_init__(self):
        if not self.to_original.is_invertible():
            raise BoxError(f"view {self.label!r} has a singular transform")


class _Cluster:
    __slots__ = ("members", "box")

    def __init__(self, det, weight):
        self.members = [(det, weight)]
        self.box = det.box

    def add(self, det, weight):
        self.members.append((det, weight))
        self.box = self._fused_box()

    def _fused_box(self) -> Box:
        ws = [d.score * w for d, w in self.members]
        total = sum(ws)
        if total <= 0:
            ws = [1.0] * len(self.members)
            total = float(len(self.members))
        coords = [sum(wi * d.box.as_tuple()[k] for wi, (d, _) in zip(ws, self.members)) / total for k in range(4)]
        # a convex combination can drift past its bounds by an ulp; pin it back
        for k in range(4):
            vals = [d.box.as_tuple()[k] for d, _ in self.members]
            coords[k] = min(max(coords[k], min(vals)), max(vals))
        return Box(*coords)

    def score(self, n_models, mode) -> float:
        wsum = sum(w for _, w in self.members)
        s = sum(d.score * w for d, w in self.members) / wsum
        if mode == "mean_rescaled":
            s *= min(len(self.members), n_models) / n_models
        return min(1.0, s)


def wbf(per_model_dets: Sequence[Sequence[Detection]], cfg: FusionConfig = FusionConfig()) -> list[Detection]:
    """Weighted Boxes Fusion over the detections several models made on one image.

    Boxes are visited in descending ``score * weight``. Each joins the first
    existing cluster whose running fused box has IoU >= ``cfg.iou_thresh``
    with it, or opens a new cluster. Fused coordinates are the
    ``score * weight`` weighted average of the members; the fused score is
    the weight-averaged member score (rescaled per ``cfg.score_mode``).
    Detections of zero-weight models are ignored.
    """
    n_models = len(per_model_dets)
    if n_models == 0:
        return []
    weights = cfg.model_weights(n_models)
    pooled = []
    for m, dets in enumerate(per_model_dets):
        if weights[m] == 0:
            continue
        for d in dets:
            pooled.append((d, weights[m]))
    if not pooled:
        return []
    image_ids = {d.image_id for d, _ in pooled}
    if len(image_ids) > 1:
        raise ValueError("wbf works on one image at a time; group detections by image first")

    pooled.sort(key=lambda dw: (-dw[0].score * dw[1],) + ranking_key(dw[0]))
    clusters: list[_Cluster] = []
    for d, w in pooled:
        for c in clusters:
            if iou(c.box, d.box) >= cfg.iou_thresh:
                c.add(d, w)
                break
        else:
            clusters.append(_Cluster(d, w))

    image_id = pooled[0][0].image_id
    fused = [Detection(image_id, c.box, c.score(n_models, cfg.score_mode)) for c in clusters]
    return sorted(fused, key=ranking_key)


def tta_merge(views: Sequence[tuple[ViewTransform, Sequence[Detection]]], nms_iou: float = 0.30) -> list[Detection]:
    """Map each view's detections back to the original frame, pool them, then NMS."""
    pooled = []
    for view, dets in views:
        m = view.to_original
        for d in dets:
            pooled.append(d.with_box(transform_box(d.box, m)))
    return nms(pooled, nms_iou)


def ensemble_pipeline(
    per_model_dets: Sequence[Sequence[Detection]],
    cfg: FusionConfig = FusionConfig(),
    post: Sequence[PostStep] = (),
) -> list[Detection]:
    """WBF followed by an optional chain of single-image post-processing steps.

    ``post`` items are callables such as
    ``functools.partial(soft_nms, cfg=SoftNmsConfig())`` or
    ``functools.partial(filter_confidence, min_score=0.5)``.
    """
    out = wbf(per_model_dets, cfg)
    for step in post:
        out = list(step(out))
    return out
