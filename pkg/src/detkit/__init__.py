"""Detection post-processing, ensembling and evaluation without a neural network.

Modules:
    geometry     box arithmetic, YOLO offsets, affine maps, anchor clustering
    annotations  CSV/YOLO I/O, duplicate joining, intersection merging
    postprocess  NMS, soft-NMS, confidence/overlap filters
    ensemble     Weighted Boxes Fusion and test-time-augmentation merging
    metrics      TP/FP matching, recall/precision/F1, AP, IoU sweeps
    imageops     PPM I/O, mixup, blurs, color shifts, Shades of Gray, NLM
    cli          ``detkit`` command line front end
"""

from .annotations import Annotation, Detection, DuplicatePair, ImageMeta, ParseError
from .ensemble import FusionConfig, ViewTransform, ensemble_pipeline, tta_merge, wbf
from .geometry import AffineMap, Box, BoxError, NormBox, YoloOffsets, iou, merge
from .metrics import EvalReport, evaluate, threshold_sweep
from .postprocess import SoftNmsConfig, adaptive_suppress, filter_confidence, nms, remove_overlaps, soft_nms

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "Annotation",
    "Box",
    "BoxError",
    "Detection",
    "DuplicatePair",
    "EvalReport",
    "FusionConfig",
    "ImageMeta",
    "NormBox",
    "ParseError",
    "SoftNmsConfig",
    "ViewTransform",
    "YoloOffsets",
    "adaptive_suppress",
    "ensemble_pipeline",
    "evaluate",
    "filter_confidence",
    "iou",
    "merge",
    "nms",
    "remove_overlaps",
    "soft_nms",
    "threshold_sweep",
    "tta_merge",
    "wbf",
]
