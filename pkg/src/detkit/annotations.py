"""Ground-truth and prediction records: file I/O and cleansing.

CSV dialect: header ``filename,xmin,ymin,xmax,ymax`` (plus ``score`` for
predictions), comma separated, UTF-8, floats written with 6 decimals.
YOLO label files hold one ``0 cx cy w h`` line per box, normalized by the
image size taken from an ImageMeta CSV (``filename,width,height``).
Duplicate image pairs come from a ``filename_a,filename_b`` CSV.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from .geometry import Box, BoxError, NormBox, area, from_normalized, intersection_area, merge, to_normalized

logger = logging.getLogger(__name__)

ANNOTATION_HEADER = ["filename", "xmin", "ymin", "xmax", "ymax"]
DETECTION_HEADER = ANNOTATION_HEADER + ["score"]
META_HEADER = ["filename", "width", "height"]
PAIR_HEADER = ["filename_a", "filename_b"]


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True, order=True)
class Annotation:
    image_id: str
    box: Box

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Box
    score: float

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    def with_score(self, score: float) -> "Detection":
        return Detection(self.image_id, self.box, score)

    def with_box(self, box: Box) -> "Detection":
        return Detection(self.image_id, box, self.score)


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id} must have positive size")


@dataclass(frozen=True)
class DuplicatePair:
    image_id_a: str
    image_id_b: str

    def __post_init__(self):
        if self.image_id_a == self.image_id_b:
            raise ValueError(f"duplicate pair names the same image twice: {self.image_id_a}")


@dataclass(frozen=True)
class Issue:
    kind: str  # out_of_bounds | zero_area | missing_meta | duplicate
    image_id: str
    index: int  # position in the validated record list
    message: str


def ranking_key(d: Detection):
    """Global tie-break: score desc, area desc, then coordinates, then image."""
    b = d.box
    return (-d.score, -area(b), b.xmin, b.ymin, b.xmax, b.ymax, d.image_id)


def sort_key(rec):
    b = rec.box
    return (rec.image_id, b.xmin, b.ymin, b.xmax, b.ymax, -getattr(rec, "score", 0.0))


T = TypeVar("T")


def group_by_image(records: Iterable[T]) -> dict[str, list[T]]:
    """Records grouped per image id, keeping input order inside each group."""
    groups: dict[str, list[T]] = defaultdict(list)
    for r in records:
        groups[r.image_id].append(r)
    return dict(groups)


def per_image(fn: Callable[[list[T]], list[T]], records: Iterable[T]) -> list[T]:
    """Apply a single-image operation to every image; images in sorted id order."""
    groups = group_by_image(records)
    out: list[T] = []
    for image_id in sorted(groups):
        out.extend(fn(groups[image_id]))
    return out


def format_float(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


# --- CSV ---------------------------------------------------------------------


def _read_rows(path, header: Sequence[str], optional: Sequence[str] = ()):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "missing header") from None
        found = [c.strip() for c in found]
        expected = list(header)
        if found != expected and found != expected + list(optional):
            want = ",".join(expected + list(optional))
            raise ParseError(path, 1, f"expected header {want!r}, got {','.join(found)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(found):
                raise ParseError(path, lineno, f"expected {len(found)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row], found


def _number(path, lineno, text, name):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"non-numeric {name} {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, lineno, f"non-finite {name} {text!r}")
    return v


def _parse_box(path, lineno, row):
    xmin, ymin, xmax, ymax = (_number(path, lineno, row[i], n) for i, n in enumerate(ANNOTATION_HEADER[1:], start=1))
    if xmin > xmax:
        raise ParseError(path, lineno, f"xmin {xmin} > xmax {xmax}")
    if ymin > ymax:
        raise ParseError(path, lineno, f"ymin {ymin} > ymax {ymax}")
    if not row[0]:
        raise ParseError(path, lineno, "empty filename")
    return Box(xmin, ymin, xmax, ymax)


def load_annotations(path) -> list[Annotation]:
    """Read a ground-truth CSV in file order. A ``score`` column, if present, is ignored."""
    out = []
    for lineno, row, _ in _read_rows(path, ANNOTATION_HEADER, ["score"]):
        out.append(Annotation(row[0], _parse_box(path, lineno, row)))
    return out


def load_detections(path) -> list[Detection]:
    out = []
    for lineno, row, header in _read_rows(path, DETECTION_HEADER):
        box = _parse_box(path, lineno, row)
        score = _number(path, lineno, row[5], "score")
        if not 0.0 <= score <= 1.0:
            raise ParseError(path, lineno, f"score {score} outside [0, 1]")
        out.append(Detection(row[0], box, score))
    return out


def annotations_to_csv(records: Iterable[Annotation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANNOTATION_HEADER)
    for a in records:
        w.writerow([a.image_id, *(format_float(v) for v in a.box.as_tuple())])
    return buf.getvalue()


def detections_to_csv(records: Iterable[Detection]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_HEADER)
    for d in records:
        w.writerow([d.image_id, *(format_float(v) for v in d.box.as_tuple()), format_float(d.score)])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file and rename, so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def save_annotations(records: Iterable[Annotation], path) -> None:
    atomic_write_text(path, annotations_to_csv(records))


def save_detections(records: Iterable[Detection], path) -> None:
    atomic_write_text(path, detections_to_csv(records))


def load_metas(path) -> dict[str, ImageMeta]:
    metas = {}
    for lineno, row, _ in _read_rows(path, META_HEADER):
        w = _number(path, lineno, row[1], "width")
        h = _number(path, lineno, row[2], "height")
        if w <= 0 or h <= 0 or w != int(w) or h != int(h):
            raise ParseError(path, lineno, "width and height must be positive integers")
        metas[row[0]] = ImageMeta(row[0], int(w), int(h))
    return metas


def save_metas(metas: Iterable[ImageMeta], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(META_HEADER)
    for m in metas:
        w.writerow([m.image_id, m.width, m.height])
    atomic_write_text(path, buf.getvalue())


def load_pairs(path) -> list[DuplicatePair]:
    out = []
    for lineno, row, _ in _read_rows(path, PAIR_HEADER):
        if row[0] == row[1]:
            raise ParseError(path, lineno, "pair names the same image twice")
        out.append(DuplicatePair(row[0], row[1]))
    return out


# --- YOLO label files ----------------------------------------------------------


def yolo_label_name(image_id: str) -> str:
    return Path(image_id).stem + ".txt"


def yolo_lines(records: Iterable[Annotation], meta: ImageMeta) -> str:
    lines = []
    for a in records:
        n = to_normalized(a.box, meta.width, meta.height)
        lines.append("0 " + " ".join(format_float(v) for v in (n.cx, n.cy, n.w, n.h)))
    return "".join(line + "\n" for line in lines)


def save_yolo(records: Iterable[Annotation], metas: dict[str, ImageMeta], directory) -> None:
    """One label file per image in ``metas``; images without boxes get an empty file."""
    directory = Path(directory)
    groups = group_by_image(records)
    missing = sorted(set(groups) - set(metas))
    if missing:
        raise KeyError(f"no image size for {missing[0]!r}")
    directory.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(metas):
        atomic_write_text(directory / yolo_label_name(image_id), yolo_lines(groups.get(image_id, []), metas[image_id]))


def load_yolo(directory, metas: dict[str, ImageMeta]) -> list[Annotation]:
    """Read label files for every image in ``metas``; a missing file means no boxes."""
    directory = Path(directory)
    out = []
    for image_id in sorted(metas):
        meta = metas[image_id]
        path = directory / yolo_label_name(image_id)
        if not path.exists():
            continue
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.split()
                if not fields:
                    continue
                if len(fields) != 5:
                    raise ParseError(path, lineno, f"expected 5 fields, got {len(fields)}")
                vals = [_number(path, lineno, f, "value") for f in fields[1:]]
                if any(v < 0.0 or v > 1.0 for v in vals):
                    raise ParseError(path, lineno, "normalized value outside [0, 1]")
                try:
                    n = NormBox(*vals)
                except BoxError as e:
                    raise ParseError(path, lineno, str(e)) from None
                b = from_normalized(n, meta.width, meta.height)
                # six-decimal rounding can push an edge box a hair outside the image
                b = Box(max(b.xmin, 0.0), max(b.ymin, 0.0), min(b.xmax, meta.width), min(b.ymax, meta.height))
                out.append(Annotation(image_id, b))
    return out


# --- cleansing -------------------------------------------------------------------


def _retained_ids(pairs: Iterable[DuplicatePair]) -> Callable[[str], str]:
    parent: dict[str, str] = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    for p in pairs:
        ra, rb = find(p.image_id_a), find(p.image_id_b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return find


def join_duplicates(annots: Iterable[Annotation], pairs: Iterable[DuplicatePair]) -> list[Annotation]:
    """Move the boxes of each duplicate image onto its retained twin.

    The lexicographically smaller id of a pair is kept. Pairs that chain
    (A~B, B~C) collapse onto the smallest id of the chain. No box is lost.
    """
    annots = list(annots)
    pairs = list(pairs)
    present = {a.image_id for a in annots}
    for p in pairs:
        for img in (p.image_id_a, p.image_id_b):
            if img not in present:
                logger.warning("duplicate pair image %s has no annotations", img)
    find = _retained_ids(pairs)
    return sorted((Annotation(find(a.image_id), a.box) for a in annots), key=sort_key)


def dropped_images(pairs: Iterable[DuplicatePair]) -> set[str]:
    """Ids that :func:`join_duplicates` folds into a twin."""
    pairs = list(pairs)
    find = _retained_ids(pairs)
    ids = {p.image_id_a for p in pairs} | {p.image_id_b for p in pairs}
    return {img for img in ids if find(img) != img}


def _merge_image(boxes: list[Box]) -> list[Box]:
    boxes = sorted(boxes)
    changed = True
    while changed:
        changed = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if intersection_area(boxes[i], boxes[j]) > 0:
                    m = merge(boxes[i], boxes[j])
                    boxes = sorted([b for k, b in enumerate(boxes) if k not in (i, j)] + [m])
                    changed = True
                    break
            if changed:
                break
    return boxes


def merge_intersecting(annots: Iterable[Annotation]) -> list[Annotation]:
    """Replace intersecting boxes by their outer boundary until none intersect.

    Two boxes intersect when their overlap has positive area; touching edges
    do not count. Output is sorted by (image_id, xmin, ymin, xmax, ymax).
    """
    out = []
    for image_id, group in sorted(group_by_image(annots).items()):
        out.extend(Annotation(image_id, b) for b in _merge_image([a.box for a in group]))
    return out


def validate(annots: Sequence[Annotation], metas: dict[str, ImageMeta]) -> list[Issue]:
    """Consistency report; an empty list means the set is clean."""
    issues = []
    seen: dict[tuple, int] = {}
    for i, a in enumerate(annots):
        b = a.box
        meta = metas.get(a.image_id)
        if meta is None:
            issues.append(Issue("missing_meta", a.image_id, i, f"no image size for {a.image_id}"))
        elif b.xmin < 0 or b.ymin < 0 or b.xmax > meta.width or b.ymax > meta.height:
            issues.append(
                Issue("out_of_bounds", a.image_id, i, f"box {b.as_tuple()} exceeds {meta.width}x{meta.height}")
            )
        if area(b) <= 0:
            issues.append(Issue("zero_area", a.image_id, i, f"box {b.as_tuple()} has zero area"))
        key = (a.image_id, b.as_tuple(), getattr(a, "score", None))
        if key in seen:
            issues.append(Issue("duplicate", a.image_id, i, f"identical to record {seen[key]}"))
        else:
            seen[key] = i
    return issues


def pseudo_label(dets: Iterable[Detection], min_score: float = 0.70) -> list[Annotation]:
    """Keep confident detections as training labels, dropping their scores."""
    if not 0.0 <= min_score <= 1.0:
        raise ValueError("min_score must lie in [0, 1]")
    return [Annotation(d.image_id, d.box) for d in dets if d.score >= min_score]
