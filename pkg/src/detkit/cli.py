"""``detkit`` command line interface.

Every subcommand is a thin wrapper over one library call chain and reads
or writes the CSV/YOLO/PPM/JSON formats documented in the package.
Exit status: 0 success, 1 bad input (message on stderr), 2 usage error.
Outputs are written to a temporary file and renamed into place.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from . import annotations as ann
from . import ensemble, imageops, metrics, postprocess
from .geometry import AffineMap, BoxError, cluster_anchors

log = logging.getLogger("detkit")


class InputError(Exception):
    pass


# --- helpers ----------------------------------------------------------------------------


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _unit(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return v


def _open_unit(text):
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside (0, 1]")
    return v


def _emit(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        ann.atomic_write_text(out, text)


def _map_images(fn, groups: list, jobs: int) -> list:
    """Apply ``fn`` to each per-image argument; results keep input order."""
    if jobs <= 1 or len(groups) < 2:
        return [fn(g) for g in groups]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, groups, chunksize=max(1, len(groups) // (4 * jobs))))


def _per_image(fn, dets, jobs):
    groups = ann.group_by_image(dets)
    keys = sorted(groups)
    results = _map_images(fn, [groups[k] for k in keys], jobs)
    return [d for r in results for d in r]


# --- subcommand bodies ------------------------------------------------------------------------


def cmd_evaluate(args):
    report = metrics.evaluate(ann.load_annotations(args.gt), ann.load_detections(args.pred), args.iou, args.ap_mode)
    _emit(metrics.report_json(report), args.out)


def cmd_sweep(args):
    reports = metrics.threshold_sweep(
        ann.load_annotations(args.gt), ann.load_detections(args.pred), args.ious, args.ap_mode
    )
    _emit(metrics.report_json(reports), args.out)


def _filter_command(fn):
    def run(args):
        dets = ann.load_detections(args.pred)
        _emit(ann.detections_to_csv(_per_image(fn(args), dets, args.jobs)), args.out)

    return run


cmd_nms = _filter_command(lambda a: functools.partial(postprocess.nms, iou_thresh=a.iou))
cmd_softnms = _filter_command(
    lambda a: functools.partial(
        postprocess.soft_nms,
        cfg=postprocess.SoftNmsConfig(a.decay, a.sigma, a.iou_trigger, a.prune, a.min_score),
    )
)
cmd_filter = _filter_command(lambda a: functools.partial(postprocess.filter_confidence, min_score=a.min_score))
cmd_remove_overlaps = _filter_command(
    lambda a: functools.partial(postprocess.remove_overlaps, overlap_thresh=a.overlap)
)
cmd_adaptive = _filter_command(lambda a: functools.partial(postprocess.adaptive_suppress, thresh=a.threshold))


def _wbf_image(per_model, cfg):
    return ensemble.wbf(per_model, cfg)


def cmd_wbf(args):
    models = [ann.group_by_image(ann.load_detections(p)) for p in args.pred]
    weights = tuple(args.weights) if args.weights else None
    cfg = ensemble.FusionConfig(args.iou, weights, args.score_mode)
    cfg.model_weights(len(models))  # fail early on a count mismatch
    images = sorted(set().union(*models))
    per_image = [[m.get(img, []) for m in models] for img in images]
    fused = _map_images(functools.partial(_wbf_image, cfg=cfg), per_image, args.jobs)
    _emit(ann.detections_to_csv([d for r in fused for d in r]), args.out)


def parse_view_spec(spec: str, meta: ann.ImageMeta | None) -> AffineMap:
    """Forward augmentation that produced a view; ``hflip``/``vflip`` need the image size."""
    name, _, arg = spec.partition(":")
    if name == "identity":
        return AffineMap.identity()
    if name in ("hflip", "vflip"):
        if meta is None:
            raise InputError(f"view {spec!r} needs image sizes (--metas)")
        return AffineMap.hflip(meta.width) if name == "hflip" else AffineMap.vflip(meta.height)
    if name == "scale":
        return AffineMap.scaling(float(arg))
    if name == "affine":
        vals = _floats(arg)
        if len(vals) != 6:
            raise InputError(f"affine view needs 6 numbers, got {len(vals)}")
        return AffineMap(*vals)
    raise InputError(f"unknown view spec {spec!r}")


def _tta_image(views, nms_iou):
    return ensemble.tta_merge(views, nms_iou)


def cmd_tta_merge(args):
    metas = ann.load_metas(args.metas) if args.metas else {}
    sources = []
    for item in args.view:
        path, _, spec = item.partition("=")
        sources.append((spec or "identity", ann.group_by_image(ann.load_detections(path))))
    images = sorted(set().union(*(g for _, g in sources)))
    jobs = []
    for img in images:
        views = []
        for spec, groups in sources:
            forward = parse_view_spec(spec, metas.get(img))
            views.append((ensemble.ViewTransform(forward.inverse(), spec), groups.get(img, [])))
        jobs.append(views)
    merged = _map_images(functools.partial(_tta_image, nms_iou=args.nms_iou), jobs, args.jobs)
    _emit(ann.detections_to_csv([d for r in merged for d in r]), args.out)


def cmd_pseudo_label(args):
    labels = ann.pseudo_label(ann.load_detections(args.pred), args.min_score)
    _emit(ann.annotations_to_csv(labels), args.out)


def cmd_merge_annotations(args):
    records = ann.load_annotations(args.annotations)
    if args.pairs:
        records = ann.join_duplicates(records, ann.load_pairs(args.pairs))
    _emit(ann.annotations_to_csv(ann.merge_intersecting(records)), args.out)


def cmd_validate(args):
    issues = ann.validate(ann.load_annotations(args.annotations), ann.load_metas(args.metas))
    payload = [dataclasses.asdict(i) for i in issues]
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    return 1 if issues else 0


def cmd_convert(args):
    metas = ann.load_metas(args.metas)
    if args.to == "yolo":
        records = ann.load_annotations(args.input)
        out = Path(args.out)
        staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent if str(out.parent) else "."))
        try:
            ann.save_yolo(records, metas, staging)
            if out.exists():
                for f in staging.iterdir():
                    os.replace(f, out / f.name)
            else:
                os.replace(staging, out)
        finally:
            if staging.exists():
                shutil.rmtree(staging)
    else:
        _emit(ann.annotations_to_csv(ann.load_yolo(args.input, metas)), args.out)


def cmd_augment(args):
    rows = imageops.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    boxes = ann.group_by_image(ann.load_annotations(args.annotations)) if args.annotations else {}
    out_records = []
    for row in rows:
        src = base / row["input"]
        dst = base / row["output"]
        img = imageops.read_ppm(src)
        items = boxes.get(Path(row["input"]).name, [])
        result, new_items = imageops.apply_op(img, row["op"], row["params"], row["seed"], items, base)
        imageops.write_ppm(result, dst)
        out_id = Path(row["output"]).name
        for it in new_items:
            if isinstance(it, tuple):  # mixup: (annotation, weight)
                a, weight = it
                out_records.append(ann.Detection(out_id, a.box, min(1.0, max(0.0, weight))))
            else:
                out_records.append(ann.Detection(out_id, it.box, 1.0))
    if args.annotations_out:
        ann.save_detections(out_records, args.annotations_out)


def cmd_anchors(args):
    records = ann.load_annotations(args.annotations)
    anchors = cluster_anchors([a.box for a in records], args.k, args.seed)
    lines = ["width,height"] + [f"{ann.format_float(w)},{ann.format_float(h)}" for w, h in anchors]
    _emit("\n".join(lines) + "\n", args.out)


# --- parser ------------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detkit", description="Detection post-processing, ensembling and evaluation.")
    p.add_argument("--version", action="version", version=f"detkit {__version__}")
    p.add_argument("--help-json", action="store_true", help="print a machine-readable description of all commands")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--jobs", type=int, default=1, help="worker processes across images")
        return sp

    sp = add("evaluate", cmd_evaluate, "TP/FP/recall/precision/F1/AP report as JSON")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--iou", type=_open_unit, default=0.5)
    sp.add_argument("--ap-mode", choices=metrics.AP_MODES, default="allpoint")
    sp.add_argument("--out")

    sp = add("sweep", cmd_sweep, "evaluate at several IoU thresholds; JSON array")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--ious", type=_floats, default=[0.3, 0.4, 0.5])
    sp.add_argument("--ap-mode", choices=metrics.AP_MODES, default="allpoint")
    sp.add_argument("--out")

    sp = add("nms", cmd_nms, "greedy non-maximum suppression per image")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--iou", type=_open_unit, default=0.5)
    sp.add_argument("--out")

    sp = add("softnms", cmd_softnms, "soft non-maximum suppression per image")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--decay", choices=("gaussian", "linear"), default="gaussian")
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--iou-trigger", type=_open_unit, default=0.3)
    sp.add_argument("--prune", type=_unit, default=0.5)
    sp.add_argument("--min-score", type=_unit, default=0.0, help="plain confidence filter before suppression")
    sp.add_argument("--out")

    sp = add("filter", cmd_filter, "drop detections below a confidence")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--min-score", type=_unit, default=0.3)
    sp.add_argument("--out")

    sp = add("remove-overlaps", cmd_remove_overlaps, "keep the best of each group of heavily overlapping boxes")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--overlap", type=_open_unit, default=0.8)
    sp.add_argument("--out")

    sp = add("adaptive-suppress", cmd_adaptive, "confidence filter that spares lone detections")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--threshold", type=_unit, default=0.5)
    sp.add_argument("--out")

    sp = add("wbf", cmd_wbf, "Weighted Boxes Fusion across model prediction files")
    sp.add_argument("--pred", action="append", required=True, help="repeat once per model")
    sp.add_argument("--weights", type=_floats)
    sp.add_argument("--iou", type=_open_unit, default=0.55)
    sp.add_argument("--score-mode", choices=("mean", "mean_rescaled"), default="mean_rescaled")
    sp.add_argument("--out")

    sp = add("tta-merge", cmd_tta_merge, "map test-time-augmentation views back and merge with NMS")
    sp.add_argument(
        "--view",
        action="append",
        required=True,
        help="PATH[=SPEC]; SPEC is the augmentation that produced the view: "
        "identity, hflip, vflip, scale:S or affine:a,b,tx,c,d,ty",
    )
    sp.add_argument("--metas", help="image size CSV, needed for flips")
    sp.add_argument("--nms-iou", type=_open_unit, default=0.30)
    sp.add_argument("--out")

    sp = add("pseudo-label", cmd_pseudo_label, "export confident detections as annotations")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--min-score", type=_unit, default=0.70)
    sp.add_argument("--out")

    sp = add("merge-annotations", cmd_merge_annotations, "join duplicate images and merge intersecting boxes")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--pairs")
    sp.add_argument("--out")

    sp = add("validate", cmd_validate, "report annotation issues as JSON; exit 1 when any are found")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--metas", required=True)
    sp.add_argument("--out")

    sp = add("convert", cmd_convert, "convert between annotation CSV and YOLO label files")
    sp.add_argument("--to", choices=("yolo", "csv"), required=True)
    sp.add_argument("--input", required=True, help="CSV file or YOLO label directory")
    sp.add_argument("--metas", required=True)
    sp.add_argument("--out", required=True)

    sp = add("augment", cmd_augment, "apply image operations listed in a manifest CSV")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--annotations")
    sp.add_argument("--annotations-out")

    sp = add("anchors", cmd_anchors, "k-means anchor priors from annotation box sizes")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--k", type=int, default=9)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    return p


def describe(parser: argparse.ArgumentParser) -> dict:
    """JSON-able summary of the parser tree."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    commands = {}
    for name, sp in sub.choices.items():
        opts = []
        for a in sp._actions:
            if isinstance(a, argparse._HelpAction):
                continue
            opts.append(
                {
                    "flags": list(a.option_strings),
                    "dest": a.dest,
                    "required": bool(a.required),
                    "default": a.default,
                    "choices": list(a.choices) if a.choices else None,
                    "repeatable": isinstance(a, argparse._AppendAction),
                    "help": a.help,
                }
            )
        commands[name] = {"help": sp.description, "options": opts}
    return {"prog": parser.prog, "version": __version__, "commands": commands}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.help_json:
        sys.stdout.write(json.dumps(describe(parser), indent=2) + "\n")
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return int(args.func(args) or 0)
    except (InputError, ann.ParseError, BoxError, imageops.ImageError, ValueError, KeyError, OSError) as e:
        print(f"detkit {args.command}: {e}", file=sys.stderr)
        return 1


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
