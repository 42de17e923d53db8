"""Raster pre-processing and augmentation for 8-bit RGB images.

Images are ``(height, width, 3)`` ``uint8`` arrays. Every operation returns
a new array of the same shape. Intermediate math is float64; results are
rounded half away from zero and clamped to ``[0, 255]``. Borders are
mirror-padded without repeating the edge sample (numpy's ``"reflect"``).
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import AffineMap, BoxError, clip, transform_box

# absorbs float noise so values that are exactly k + 0.5 in exact arithmetic round up
_SNAP = 1e-7


class ImageError(ValueError):
    pass


def check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ImageError(f"expected an (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ImageError("image has no pixels")
    return img


def to_uint8(x) -> np.ndarray:
    """Round half away from zero, then clamp to the 8-bit range."""
    x = np.asarray(x, dtype=float)
    r = np.where(x >= 0, np.floor(x + 0.5 + _SNAP), -np.floor(-x + 0.5 + _SNAP))
    return np.clip(r, 0, 255).astype(np.uint8)


# --- PPM ------------------------------------------------------------------------


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6) with maxval 255."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise ImageError(f"{path}: not a binary PPM (P6) file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError(f"{path}: truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise ImageError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise ImageError(f"{path}: empty image")
    need = width * height * 3
    if len(data) - pos < need:
        raise ImageError(f"{path}: raster shorter than {width}x{height}x3 bytes")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3).copy()


def ppm_bytes(img) -> bytes:
    img = check_image(img)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def write_ppm(img, path) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(ppm_bytes(img))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


# --- mixup -------------------------------------------------------------------------


def mixup_weights(lam: float) -> tuple[float, float]:
    """Weights ``(w_a, w_b)`` summing to exactly 1.

    The larger weight is taken as given (or as ``1 - lam``) and the smaller
    derived from it, which is exact for weights >= 0.5. Swapping the images
    and passing ``1 - lam`` therefore yields the same pair, reversed.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam >= 0.5:
        return lam, 1.0 - lam
    wb = 1.0 - lam
    return 1.0 - wb, wb


def mixup(a, boxes_a: Sequence, b, boxes_b: Sequence, lam: float):
    """Blend two images as ``lam * a + (1 - lam) * b``.

    Returns the blended image and ``[(item, weight), ...]`` holding the
    items of ``boxes_a`` at weight ``lam`` followed by those of ``boxes_b``
    at ``1 - lam``.
    """
    a, b = check_image(a), check_image(b)
    if a.shape != b.shape:
        raise ImageError(f"mixup needs equal sizes, got {a.shape} and {b.shape}")
    wa, wb = mixup_weights(lam)
    fa, fb = a.astype(float), b.astype(float)
    # larger weight term first so the swapped call performs identical float ops
    mixed = wa * fa + wb * fb if wa >= wb else wb * fb + wa * fa
    tagged = [(x, lam) for x in boxes_a] + [(x, 1.0 - lam) for x in boxes_b]
    return to_uint8(mixed), tagged


def sample_mixup_lambda(alpha: float = 1.5, seed: int = 0, size=None):
    """Draw the mixup coefficient from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    out = rng.beta(alpha, alpha, size=size)
    return float(out) if size is None else out


# --- convolution helpers ---------------------------------------------------------------


def _convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D convolution (true, kernel flipped) of each channel; float output."""
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    src = np.pad(img.astype(float), ((ry, kh - 1 - ry), (rx, kw - 1 - rx), (0, 0)), mode="reflect")
    h, w = img.shape[:2]
    out = np.zeros(img.shape, dtype=float)
    flipped = kernel[::-1, ::-1]
    for i, j in zip(*np.nonzero(flipped)):
        out += flipped[i, j] * src[i:i + h, j:j + w]
    return out


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized one-pixel-wide line of ``length`` samples at ``angle`` degrees.

    Samples step one pixel along the dominant axis, so the line covers
    exactly ``length`` distinct pixels. Angle 0 is horizontal; positive
    angles rise toward the top of the image.
    """
    if length < 1:
        raise ValueError("motion blur length must be at least 1")
    length = int(length)
    t = math.radians(angle)
    dx, dy = math.cos(t), -math.sin(t)
    step = max(abs(dx), abs(dy))
    dx, dy = dx / step, dy / step
    offsets = np.arange(length) - (length - 1) / 2.0
    xs = np.floor(offsets * dx + 0.5 + 1e-9).astype(int)
    ys = np.floor(offsets * dy + 0.5 + 1e-9).astype(int)
    r = int(max(np.abs(xs).max(), np.abs(ys).max()))
    k = np.zeros((2 * r + 1, 2 * r + 1))
    k[ys + r, xs + r] = 1.0
    return k / k.sum()


def motion_blur(img, length: int = 9, angle: float = 0.0) -> np.ndarray:
    img = check_image(img)
    k = motion_kernel(length, angle)
    if k.size == 1:
        return img.copy()
    return to_uint8(_convolve(img, k))


def gaussian_kernel_1d(size: int) -> np.ndarray:
    """Normalized Gaussian taps with ``sigma = 0.3 * ((size - 1) / 2 - 1) + 0.8``."""
    if size < 3 or size % 2 == 0:
        raise ValueError("kernel size must be odd and at least 3")
    sigma = 0.3 * ((size - 1) / 2 - 1) + 0.8
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def blur(img, kind: str = "gaussian", size: int = 3) -> np.ndarray:
    img = check_image(img)
    if size < 3 or size % 2 == 0:
        raise ValueError("blur size must be odd and at least 3")
    r = size // 2
    if kind == "gaussian":
        g = gaussian_kernel_1d(size)
        tmp = _convolve(img, g[None, :])
        h, w = img.shape[:2]
        src = np.pad(tmp, ((r, r), (0, 0), (0, 0)), mode="reflect")
        out = np.zeros_like(tmp)
        for i, gi in enumerate(g):
            out += gi * src[i:i + h]
        return to_uint8(out)
    if kind == "median":
        src = np.pad(img, ((r, r), (r, r), (0, 0)), mode="reflect")
        win = np.lib.stride_tricks.sliding_window_view(src, (size, size), axis=(0, 1))
        return np.median(win, axis=(-2, -1)).astype(np.uint8)
    raise ValueError(f"unknown blur kind {kind!r}")


# --- color ----------------------------------------------------------------------------


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone model; input in [0, 1], output H in [0, 360), S and V in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        np.mod((g - b) / safe, 6.0),
        np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(c > 0, 60.0 * h, 0.0)
    return np.stack([np.mod(h, 360.0), s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = np.mod(h, 360.0) / 60.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    z = np.zeros_like(c)
    sector = np.minimum(np.floor(hp).astype(int), 5)
    table = [(c, x, z), (x, c, z), (z, c, x), (z, x, c), (x, z, c), (c, z, x)]
    out = np.zeros(hsv.shape, dtype=float)
    for k, (r1, g1, b1) in enumerate(table):
        m = sector == k
        out[..., 0] = np.where(m, r1, out[..., 0])
        out[..., 1] = np.where(m, g1, out[..., 1])
        out[..., 2] = np.where(m, b1, out[..., 2])
    return out + (v - c)[..., None]


def rgb_shift(img, delta) -> np.ndarray:
    """Add ``delta`` (scalar or per-channel triple, 8-bit units) with clamping."""
    img = check_image(img)
    d = np.broadcast_to(np.asarray(delta, dtype=float), (3,))
    return to_uint8(img.astype(float) + d)


def hsv_shift(img, dh: float = 0.0, ds: float = 0.0, dv: float = 0.0) -> np.ndarray:
    """Shift hue by ``dh`` degrees (wrapping) and S, V by ``ds``, ``dv`` in 8-bit units (clamped)."""
    img = check_image(img)
    hsv = rgb_to_hsv(img.astype(float) / 255.0)
    hsv[..., 0] = np.mod(hsv[..., 0] + dh, 360.0)
    hsv[..., 1] = np.clip(hsv[..., 1] + ds / 255.0, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] + dv / 255.0, 0.0, 1.0)
    return to_uint8(hsv_to_rgb(hsv) * 255.0)


def brightness_contrast(img, beta: float = 0.0, alpha: float = 1.0) -> np.ndarray:
    """``clamp(alpha * p + beta * 255)``."""
    img = check_image(img)
    return to_uint8(alpha * img.astype(float) + beta * 255.0)


def color_adjust(img, mode: str, **params) -> np.ndarray:
    ops = {"rgb_shift": rgb_shift, "hsv_shift": hsv_shift, "brightness_contrast": brightness_contrast}
    if mode not in ops:
        raise ValueError(f"unknown color mode {mode!r}")
    return ops[mode](img, **params)


# --- geometry ---------------------------------------------------------------------------


def warp_affine(img, m: AffineMap) -> np.ndarray:
    """Resample ``img`` under ``m`` (input -> output coordinates), same output size.

    Each output pixel center is mapped back through ``m``'s inverse and
    sampled bilinearly; samples outside the source read as black.
    """
    img = check_image(img)
    inv = m.inverse()
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    u, v = inv.apply(xs + 0.5, ys + 0.5)
    fx, fy = u - 0.5, v - 0.5
    x0, y0 = np.floor(fx).astype(int), np.floor(fy).astype(int)
    ax, ay = fx - x0, fy - y0
    src = img.astype(float)

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(ok[..., None], vals, 0.0)

    out = (
        ((1 - ax) * (1 - ay))[..., None] * tap(y0, x0)
        + (ax * (1 - ay))[..., None] * tap(y0, x0 + 1)
        + ((1 - ax) * ay)[..., None] * tap(y0 + 1, x0)
        + (ax * ay)[..., None] * tap(y0 + 1, x0 + 1)
    )
    return to_uint8(out)


def _map_item(item, m, width, height):
    box = item.box if hasattr(item, "box") else item
    new = clip(transform_box(box, m), width, height)
    return dataclasses.replace(item, box=new) if hasattr(item, "box") else new


def flip_or_affine(img, boxes: Sequence, m: AffineMap):
    """Warp the image and carry boxes along; boxes pushed fully outside are dropped.

    ``boxes`` may hold :class:`Box` values or records with a ``box`` field
    (annotations, detections); the same kind comes back.
    """
    img = check_image(img)
    if not m.is_invertible():
        raise BoxError("affine map is singular")
    h, w = img.shape[:2]
    out_boxes = []
    for item in boxes:
        try:
            out_boxes.append(_map_item(item, m, w, h))
        except BoxError:
            continue
    return warp_affine(img, m), out_boxes


def random_affine(width, height, seed=0, shift=0.0625, scale=0.1, rotation=90.0) -> AffineMap:
    """Random shift/scale/rotation about the image center.

    ``shift`` is a fraction of the image size, ``scale`` the maximum
    relative zoom and ``rotation`` the maximum angle in degrees.
    """
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-rotation, rotation)
    s = 1.0 + rng.uniform(-scale, scale)
    tx = rng.uniform(-shift, shift) * width
    ty = rng.uniform(-shift, shift) * height
    center = (width / 2.0, height / 2.0)
    return AffineMap.translation(tx, ty) @ AffineMap.rotation(angle, center) @ AffineMap.scaling(s, center=center)


# --- color constancy and denoising ----------------------------------------------------------


def shades_of_gray(img, p: float = 6.0) -> np.ndarray:
    """Shades-of-Gray color constancy with Minkowski norm ``p``.

    The illuminant of each channel is the p-norm mean of its normalized
    samples; channels are scaled so all illuminants meet their mean.
    A channel with zero illuminant keeps gain 1.
    """
    img = check_image(img)
    if p < 1:
        raise ValueError("p must be at least 1")
    x = img.astype(float) / 255.0
    illum = np.mean(x.reshape(-1, 3) ** p, axis=0) ** (1.0 / p)
    lit = illum > 0
    if not lit.any():
        return img.copy()
    target = illum.mean()
    gains = np.where(lit, target / np.where(lit, illum, 1.0), 1.0)
    return to_uint8(img.astype(float) * gains)


_RGB2YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_YCC_OFFSET = np.array([0.0, 128.0, 128.0])


def rgb_to_ycc(img) -> np.ndarray:
    return img.astype(float) @ _RGB2YCC.T + _YCC_OFFSET


def ycc_to_rgb(ycc) -> np.ndarray:
    return (ycc - _YCC_OFFSET) @ _YCC2RGB.T


def _box_mean(x: np.ndarray, t: int) -> np.ndarray:
    """Mean over every valid ``t x t`` window of a 2-D array."""
    c = np.cumsum(np.pad(x, ((1, 0), (0, 0))), axis=0)
    x = c[t:] - c[:-t]
    c = np.cumsum(np.pad(x, ((0, 0), (1, 0))), axis=1)
    return (c[:, t:] - c[:, :-t]) / (t * t)


def denoise_nlm(img, h: float = 1.0, h_color: float = 1.0, template: int = 7, search: int = 21) -> np.ndarray:
    """Direct non-local means on a luminance/chroma split.

    For each pixel, every candidate in the ``search`` window gets weight
    ``exp(-d2 / h**2)``, where ``d2`` is the mean squared difference of the
    ``template`` patches around the two pixels. Luminance uses its own
    patch distance and ``h``; the two chroma channels share a distance
    (averaged over both) and ``h_color``. Distances are in 8-bit units.
    """
    img = check_image(img)
    if template % 2 == 0 or search % 2 == 0 or template < 1:
        raise ValueError("template and search sizes must be odd")
    if template > search:
        raise ValueError("template must not exceed search window")
    if h <= 0 or h_color <= 0:
        raise ValueError("filter strengths must be positive")
    H, W = img.shape[:2]
    rt, rs = template // 2, search // 2
    pad = rt + rs
    ycc = np.pad(rgb_to_ycc(img), ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    # region holding every template pixel of every output pixel
    base = ycc[rs:rs + H + 2 * rt, rs:rs + W + 2 * rt]

    acc = np.zeros((H, W, 3))
    wsum_y = np.zeros((H, W))
    wsum_c = np.zeros((H, W))
    inv_h2, inv_hc2 = 1.0 / (h * h), 1.0 / (h_color * h_color)
    for dy in range(-rs, rs + 1):
        for dx in range(-rs, rs + 1):
            cand = ycc[rs + dy:rs + dy + H + 2 * rt, rs + dx:rs + dx + W + 2 * rt]
            diff = base - cand
            sq = diff * diff
            d2_y = _box_mean(sq[..., 0], template)
            d2_c = _box_mean(0.5 * (sq[..., 1] + sq[..., 2]), template)
            wy = np.exp(-np.maximum(d2_y, 0.0) * inv_h2)
            wc = np.exp(-np.maximum(d2_c, 0.0) * inv_hc2)
            center = cand[rt:rt + H, rt:rt + W]
            acc[..., 0] += wy * center[..., 0]
            acc[..., 1] += wc * center[..., 1]
            acc[..., 2] += wc * center[..., 2]
            wsum_y += wy
            wsum_c += wc
    out = np.empty_like(acc)
    out[..., 0] = acc[..., 0] / wsum_y
    out[..., 1] = acc[..., 1] / wsum_c
    out[..., 2] = acc[..., 2] / wsum_c
    return to_uint8(ycc_to_rgb(out))


# --- augmentation manifest ------------------------------------------------------------------

MANIFEST_HEADER = ["input", "output", "op", "params", "seed"]
GEOMETRIC_OPS = {"hflip", "vflip", "affine"}


def parse_params(text: str) -> dict[str, str]:
    out = {}
    for part in filter(None, (p.strip() for p in (text or "").split(";"))):
        if "=" not in part:
            raise ValueError(f"parameter {part!r} is not key=value")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _f(params, key, default):
    return float(params[key]) if key in params else default


def _signed(rng, lo, hi):
    return float(rng.uniform(lo, hi) * rng.choice([-1.0, 1.0]))


def apply_op(img, op: str, params: dict, seed: int = 0, boxes: Sequence = (), base_dir=None):
    """Run one manifest operation. Parameters left out are drawn from ``seed``.

    Returns ``(image, boxes)``; non-geometric ops pass boxes through and
    mixup returns ``(item, weight)`` pairs.
    """
    img = check_image(img)
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    if op == "mixup":
        other_path = Path(params["other"])
        if base_dir is not None and not other_path.is_absolute():
            other_path = Path(base_dir) / other_path
        other = read_ppm(other_path)
        lam = _f(params, "lambda", None)
        if lam is None:
            lam = sample_mixup_lambda(_f(params, "alpha", 1.5), seed)
        return mixup(img, list(boxes), other, [], lam)
    if op == "motion_blur":
        length = int(_f(params, "length", float(rng.integers(3, 16))))
        angle = _f(params, "angle", float(rng.uniform(0.0, 360.0)))
        return motion_blur(img, length, angle), list(boxes)
    if op == "blur":
        kind = params.get("kind", "gaussian")
        return blur(img, kind, int(_f(params, "size", 3.0))), list(boxes)
    if op == "rgb_shift":
        if "delta" in params:
            delta = float(params["delta"])
        else:
            delta = [_f(params, c, float(rng.uniform(-10, 10))) for c in ("r", "g", "b")]
        return rgb_shift(img, delta), list(boxes)
    if op == "hsv_shift":
        dh = _f(params, "dh", float(rng.uniform(-20, 20)))
        ds = _f(params, "ds", float(rng.uniform(-20, 20)))
        dv = _f(params, "dv", float(rng.uniform(-20, 20)))
        return hsv_shift(img, dh, ds, dv), list(boxes)
    if op == "brightness_contrast":
        beta = _f(params, "beta", _signed(rng, 0.1, 0.3))
        alpha = _f(params, "alpha", 1.0 + _signed(rng, 0.1, 0.3))
        return brightness_contrast(img, beta, alpha), list(boxes)
    if op == "shades_of_gray":
        return shades_of_gray(img, _f(params, "p", 6.0)), list(boxes)
    if op == "denoise_nlm":
        return (
            denoise_nlm(
                img,
                _f(params, "h", 1.0),
                _f(params, "h_color", 1.0),
                int(_f(params, "template", 7.0)),
                int(_f(params, "search", 21.0)),
            ),
            list(boxes),
        )
    if op == "hflip":
        return flip_or_affine(img, boxes, AffineMap.hflip(w))
    if op == "vflip":
        return flip_or_affine(img, boxes, AffineMap.vflip(h))
    if op == "affine":
        if any(k in params for k in ("angle", "scale", "tx", "ty")):
            center = (w / 2.0, h / 2.0)
            m = (
                AffineMap.translation(_f(params, "tx", 0.0), _f(params, "ty", 0.0))
                @ AffineMap.rotation(_f(params, "angle", 0.0), center)
                @ AffineMap.scaling(_f(params, "scale", 1.0), center=center)
            )
        else:
            m = random_affine(w, h, seed)
        return flip_or_affine(img, boxes, m)
    raise ValueError(f"unknown augmentation op {op!r}")


def load_manifest(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [c.strip() for c in next(reader, [])]
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields")
            rec = dict(zip(MANIFEST_HEADER, (c.strip() for c in row)))
            rec["params"] = parse_params(rec["params"])
            rec["seed"] = int(rec["seed"] or 0)
            rec["line"] = lineno
            rows.append(rec)
    return rows
