"""Axis-aligned box arithmetic.

Boxes use continuous pixel coordinates with the origin at the top-left
corner, x growing rightward and y downward. Areas carry no "+1 pixel"
term, so a box from 0 to 10 is 10 pixels wide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


class BoxError(ValueError):
    """Raised for invalid or empty boxes."""


@dataclass(frozen=True, order=True)
class Box:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        coords = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(c) for c in coords):
            raise BoxError(f"non-finite box coordinates {coords}")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise BoxError(f"inverted box {coords}")

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> tuple[float, float]:
        return (self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def contains(self, other: "Box", tol: float = 0.0) -> bool:
        return (
            self.xmin <= other.xmin + tol
            and self.ymin <= other.ymin + tol
            and self.xmax >= other.xmax - tol
            and self.ymax >= other.ymax - tol
        )


@dataclass(frozen=True)
class NormBox:
    """Center/extent box normalized by the image size (YOLO label format)."""

    cx: float
    cy: float
    w: float
    h: float

    _TOL = 1e-6

    def __post_init__(self):
        t = self._TOL
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise BoxError(f"normalized center outside [0,1]: {self}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise BoxError(f"normalized extent outside (0,1]: {self}")
        if (
            self.cx - self.w / 2 < -t
            or self.cx + self.w / 2 > 1 + t
            or self.cy - self.h / 2 < -t
            or self.cy + self.h / 2 > 1 + t
        ):
            raise BoxError(f"normalized box leaves the image: {self}")


@dataclass(frozen=True)
class YoloOffsets:
    """Raw YOLO regression outputs plus the grid cell and anchor they refer to."""

    tx: float
    ty: float
    tw: float
    th: float
    cellx: int
    celly: int
    pw: float
    ph: float

    def __post_init__(self):
        if self.pw <= 0 or self.ph <= 0:
            raise BoxError("anchor prior must have positive size")
        if self.cellx < 0 or self.celly < 0:
            raise BoxError("grid cell offsets must be non-negative")


@dataclass(frozen=True)
class AffineMap:
    """2x3 affine map ``(x, y) -> (a*x + b*y + tx, c*x + d*y + ty)``."""

    a: float = 1.0
    b: float = 0.0
    tx: float = 0.0
    c: float = 0.0
    d: float = 1.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "AffineMap":
        m = np.asarray(m, dtype=float)
        if m.shape == (3, 3):
            m = m[:2]
        if m.shape != (2, 3):
            raise ValueError(f"expected a 2x3 matrix, got shape {m.shape}")
        return cls(*(float(v) for v in m.ravel()))

    @classmethod
    def translation(cls, dx, dy) -> "AffineMap":
        return cls(tx=dx, ty=dy)

    @classmethod
    def scaling(cls, sx, sy=None, center=(0.0, 0.0)) -> "AffineMap":
        sy = sx if sy is None else sy
        cx, cy = center
        return cls(sx, 0.0, cx - sx * cx, 0.0, sy, cy - sy * cy)

    @classmethod
    def rotation(cls, degrees, center=(0.0, 0.0)) -> "AffineMap":
        """Rotation by ``degrees`` about ``center``.

        Positive angles turn +x toward +y, which on screen (y down) is clockwise.
        """
        t = math.radians(degrees)
        cos, sin = math.cos(t), math.sin(t)
        # snap exact quarter turns so flips/rotations stay bit-exact
        cos, sin = round(cos, 15) + 0.0, round(sin, 15) + 0.0
        cx, cy = center
        return cls(cos, -sin, cx - cos * cx + sin * cy, sin, cos, cy - sin * cx - cos * cy)

    @classmethod
    def hflip(cls, width) -> "AffineMap":
        return cls(-1.0, 0.0, float(width), 0.0, 1.0, 0.0)

    @classmethod
    def vflip(cls, height) -> "AffineMap":
        return cls(1.0, 0.0, 0.0, 0.0, -1.0, float(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b, self.tx], [self.c, self.d, self.ty], [0.0, 0.0, 1.0]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def is_invertible(self) -> bool:
        return self.det != 0.0 and math.isfinite(self.det)

    def apply(self, x, y):
        return self.a * x + self.b * y + self.tx, self.c * x + self.d * y + self.ty

    def inverse(self) -> "AffineMap":
        det = self.det
        if not self.is_invertible():
            raise BoxError("affine map is singular")
        ia, ib = self.d / det, -self.b / det
        ic, id_ = -self.c / det, self.a / det
        return AffineMap(ia, ib, -(ia * self.tx + ib * self.ty), ic, id_, -(ic * self.tx + id_ * self.ty))

    def __matmul__(self, other: "AffineMap") -> "AffineMap":
        """``self @ other`` applies ``other`` first, then ``self``."""
        return AffineMap.from_matrix(self.matrix @ other.matrix)


def area(b: Box) -> float:
    return (b.xmax - b.xmin) * (b.ymax - b.ymin)


def intersection_area(a: Box, b: Box) -> float:
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU of two box collections as an ``(n, m)`` array.

    Accepts sequences of :class:`Box` or ``(n, 4)`` arrays. Entry for entry
    this agrees with :func:`iou`.
    """
    a = _as_array(boxes_a)
    b = _as_array(boxes_b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.minimum(out, 1.0)


def _as_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(float)
    return np.array([b.as_tuple() for b in boxes], dtype=float).reshape(-1, 4)


def merge(a: Box, b: Box) -> Box:
    """Smallest box holding both inputs (their outer boundaries)."""
    return Box(min(a.xmin, b.xmin), min(a.ymin, b.ymin), max(a.xmax, b.xmax), max(a.ymax, b.ymax))


def clip(b: Box, width: float, height: float) -> Box:
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    if b.xmin >= width or b.ymin >= height or b.xmax <= 0 or b.ymax <= 0:
        raise BoxError(f"box {b.as_tuple()} lies outside the {width}x{height} image")
    return Box(
        min(max(b.xmin, 0.0), width),
        min(max(b.ymin, 0.0), height),
        min(max(b.xmax, 0.0), width),
        min(max(b.ymax, 0.0), height),
    )


def to_normalized(b: Box, width: float, height: float) -> NormBox:
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    tol = 1e-9 * max(width, height)
    if b.xmin < -tol or b.ymin < -tol or b.xmax > width + tol or b.ymax > height + tol:
        raise BoxError(f"box {b.as_tuple()} exceeds the {width}x{height} image")
    return NormBox(
        (b.xmin + b.xmax) / (2.0 * width),
        (b.ymin + b.ymax) / (2.0 * height),
        (b.xmax - b.xmin) / width,
        (b.ymax - b.ymin) / height,
    )


def from_normalized(n: NormBox, width: float, height: float) -> Box:
    cx, cy = n.cx * width, n.cy * height
    hw, hh = n.w * width / 2.0, n.h * height / 2.0
    return Box(cx - hw, cy - hh, cx + hw, cy + hh)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def decode_yolo(t: YoloOffsets, stride: float) -> Box:
    """Decode YOLO offsets into a pixel box.

    Center ``((sigmoid(tx) + cellx) * stride, (sigmoid(ty) + celly) * stride)``,
    size ``(pw * exp(tw), ph * exp(th))``.
    """
    if stride <= 0:
        raise ValueError("stride must be positive")
    if not all(math.isfinite(v) for v in (t.tx, t.ty, t.tw, t.th)):
        raise BoxError("non-finite YOLO offsets")
    bx = (_sigmoid(t.tx) + t.cellx) * stride
    by = (_sigmoid(t.ty) + t.celly) * stride
    return Box.from_center(bx, by, t.pw * math.exp(t.tw), t.ph * math.exp(t.th))


def encode_yolo(b: Box, cell: tuple[int, int], anchor: tuple[float, float], stride: float) -> YoloOffsets:
    """Inverse of :func:`decode_yolo`.

    The box center must fall strictly inside ``cell``; otherwise the logit
    of the in-cell fraction is undefined.
    """
    if stride <= 0:
        raise ValueError("stride must be positive")
    cellx, celly = cell
    pw, ph = anchor
    if pw <= 0 or ph <= 0:
        raise BoxError("anchor prior must have positive size")
    if b.width <= 0 or b.height <= 0:
        raise BoxError("cannot encode a zero-size box")
    cx, cy = b.center
    fx = cx / stride - cellx
    fy = cy / stride - celly
    if not (0.0 < fx < 1.0 and 0.0 < fy < 1.0):
        raise BoxError(f"box center ({cx}, {cy}) is outside grid cell {cell}")
    return YoloOffsets(
        math.log(fx / (1.0 - fx)),
        math.log(fy / (1.0 - fy)),
        math.log(b.width / pw),
        math.log(b.height / ph),
        cellx,
        celly,
        pw,
        ph,
    )


def transform_box(b: Box, m: AffineMap) -> Box:
    """Tightest axis-aligned box around the four mapped corners."""
    if not m.is_invertible():
        raise BoxError("affine map is singular")
    xs, ys = [], []
    for x, y in ((b.xmin, b.ymin), (b.xmax, b.ymin), (b.xmin, b.ymax), (b.xmax, b.ymax)):
        u, v = m.apply(x, y)
        xs.append(u)
        ys.append(v)
    return Box(min(xs), min(ys), max(xs), max(ys))


def wh_iou(wh, anchors) -> np.ndarray:
    """IoU of boxes sharing a common center, from widths/heights only."""
    wh = np.asarray(wh, dtype=float).reshape(-1, 2)
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)
    inter = np.minimum(wh[:, None, 0], anchors[None, :, 0]) * np.minimum(wh[:, None, 1], anchors[None, :, 1])
    union = (wh[:, 0] * wh[:, 1])[:, None] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def cluster_anchors(boxes: Iterable[Box], k: int, seed: int = 0, max_iter: int = 300) -> list[tuple[float, float]]:
    """K-means over box sizes with distance ``1 - IoU`` of centered boxes.

    Seeding is k-means++ style (each new center drawn with probability
    proportional to its squared distance from the nearest chosen one).
    Iteration stops when assignments stop changing or after ``max_iter``
    rounds. Anchors are returned sorted by area, then width.

    Raises:
        ValueError: if ``k`` exceeds the number of distinct box sizes.
    """
    wh = np.array([(b.width, b.height) for b in boxes], dtype=float).reshape(-1, 2)
    if k < 1:
        raise ValueError("k must be at least 1")
    distinct = np.unique(wh, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct box sizes")
    if np.any(wh <= 0):
        raise ValueError("anchor clustering needs boxes with positive width and height")

    rng = np.random.default_rng(seed)
    centers = [distinct[rng.integers(len(distinct))]]
    while len(centers) < k:
        d = 1.0 - wh_iou(distinct, np.array(centers)).max(axis=1)
        d2 = d * d
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(distinct))
        else:
            idx = rng.choice(len(distinct), p=d2 / total)
        centers.append(distinct[idx])
    centers = np.array(centers)

    assign = None
    for _ in range(max_iter):
        dist = 1.0 - wh_iou(wh, centers)
        new_assign = dist.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = wh[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # empty cluster: restart it at the worst-served box
                far = dist[np.arange(len(wh)), assign].argmax()
                centers[j] = wh[far]
                assign[far] = j
    order = np.lexsort((centers[:, 0], centers[:, 0] * centers[:, 1]))
    return [(float(w), float(h)) for w, h in centers[order]]
