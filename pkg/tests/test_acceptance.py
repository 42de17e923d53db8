"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
"""
import functools
import time

import numpy as np

from detkit import annotations as ann
from detkit import ensemble, imageops, metrics, postprocess
from detkit.annotations import Annotation, Detection, ImageMeta
from detkit.cli import build_parser, run
from detkit.ensemble import FusionConfig, ViewTransform
from detkit.geometry import AffineMap, Box, cluster_anchors
from detkit.postprocess import SoftNmsConfig

import oracles

N_GT = 2097

# (table, row, TP, FP, recall, precision, F1)
REFERENCE_ROWS = [
    ("Faster R-CNN", "Faster", 1512, 683, 0.7210, 0.6888, 0.7046),
    ("Faster R-CNN", "Cascade", 1483, 649, 0.7072, 0.6956, 0.7014),
    ("Faster R-CNN", "Deform", 1612, 628, 0.7687, 0.7196, 0.7434),
    ("Faster R-CNN", "PISA", 1495, 444, 0.7129, 0.7710, 0.7408),
    ("Faster R-CNN", "Ensemble", 1447, 394, 0.6900, 0.7860, 0.7349),
    ("YOLOv3", "B50", 1572, 676, 0.7496, 0.6993, 0.7236),
    ("YOLOv3", "B50_Overlap", 1553, 618, 0.7406, 0.7153, 0.7277),
    ("YOLOv3", "B32", 1452, 605, 0.6929, 0.7060, 0.6994),
    ("YOLOv3", "B32_Overlap", 1433, 551, 0.6834, 0.7223, 0.7023),
    ("YOLOv3", "B32_Overlap_conf", 1386, 490, 0.6609, 0.7388, 0.6977),
    ("YOLOv3", "B50_Exact", 1563, 616, 0.7454, 0.7173, 0.7311),
    ("YOLOv3", "B50_Overlap_Extra", 1543, 565, 0.7358, 0.7320, 0.7339),
    ("YOLOv5", "E60_SELF90", 1504, 474, 0.7172, 0.7604, 0.7382),
    ("YOLOv5", "E60_SELF100", 1496, 485, 0.7134, 0.7552, 0.7337),
    ("YOLOv5", "E60_SELF100_TTA_NMS", 1507, 498, 0.7187, 0.7516, 0.7348),
    ("YOLOv5", "E60_SELF120", 1502, 478, 0.7163, 0.7586, 0.7368),
    ("EfficientDet", "Before", 1626, 770, 0.7754, 0.6786, 0.7238),
    ("EfficientDet", "After", 1593, 594, 0.7597, 0.7284, 0.7437),
    ("CA-DetNet", "C-DetNet pre+fuzzy+mixup", 1554, 789, 0.7411, 0.6633, 0.7000),
    ("CA-DetNet", "none", 1493, 1089, 0.7120, 0.5782, 0.6382),
    ("CA-DetNet", "pre", 1523, 820, 0.7263, 0.6500, 0.6860),
    ("CA-DetNet", "pre+mixup", 1431, 961, 0.6824, 0.5982, 0.6376),
    ("CA-DetNet", "pre+fuzzy", 1528, 764, 0.7287, 0.6667, 0.6963),
    ("CA-DetNet", "pre+fuzzy+mixup", 1554, 788, 0.7411, 0.6635, 0.7002),
    ("best mAP", "Faster R-CNN", 1612, 628, 0.7687, 0.7196, 0.7434),
    ("best mAP", "YOLOv3", 1572, 676, 0.7496, 0.6993, 0.7236),
    ("best mAP", "CA-DetNet", 1554, 788, 0.7411, 0.6635, 0.7002),
    ("best mAP", "YOLOv5", 1507, 498, 0.7187, 0.7516, 0.7348),
    ("best mAP", "EfficientDet", 1593, 594, 0.7597, 0.7284, 0.7437),
    ("best F1", "EfficientDet", 1593, 594, 0.7597, 0.7284, 0.7437),
    ("best F1", "Faster R-CNN", 1612, 628, 0.7687, 0.7196, 0.7434),
    ("best F1", "YOLOv5", 1504, 474, 0.7172, 0.7604, 0.7382),
    ("best F1", "YOLOv3", 1543, 565, 0.7358, 0.7320, 0.7339),
    ("best F1", "CA-DetNet", 1554, 788, 0.7411, 0.6635, 0.7002),
    ("ensemble", "FRCNN+DetNet", 1510, 426, 0.7201, 0.7800, 0.7488),
    ("ensemble", "FRCNN+EffDet", 1502, 345, 0.7163, 0.8132, 0.7617),
    ("ensemble", "FRCNN+YOLOv3", 1423, 310, 0.6786, 0.8211, 0.7431),
    ("ensemble", "FRCNN+YOLOv5", 1453, 350, 0.6929, 0.8059, 0.7451),
    ("ensemble", "FRCNN+YOLOv5+EffDet", 1396, 252, 0.6657, 0.8471, 0.7455),
    ("ensemble", "FRCNN+YOLOv5+DetNet", 1384, 295, 0.6600, 0.8243, 0.7331),
    ("ensemble", "FRCNN+DetNet+EffDet", 1435, 270, 0.6843, 0.8416, 0.7549),
    ("ensemble", "ALL methods", 1277, 198, 0.6090, 0.8658, 0.7150),
]


def test_criterion_1_metric_identities(verdict):
    start = time.perf_counter()
    misses = []
    for table, row, tp, fp, recall, precision, f1 in REFERENCE_ROWS:
        r = metrics.EvalReport.from_counts(tp, fp, N_GT)
        for name, got, want in (("R", r.recall, recall), ("P", r.precision, precision), ("F1", r.f1, f1)):
            if abs(got - want) > 5e-5:
                misses.append(f"{table}/{row} {name} {got:.6f} vs {want:.4f}")
    elapsed = time.perf_counter() - start
    ok = not misses and elapsed < 1.0
    detail = f"{len(REFERENCE_ROWS)} rows, {elapsed * 1e3:.1f} ms"
    if misses:
        detail += "; off: " + "; ".join(misses)
    verdict(1, "table rows reproduce recall/precision/F1 to 5e-5", ok, detail)
    assert not misses, misses
    assert elapsed < 1.0


def test_criterion_2_matching_and_ap_oracle(verdict):
    rng = np.random.default_rng(20_000)
    start = time.perf_counter()
    bad = 0
    for _ in range(1000):
        gt, dets = oracles.random_scene(rng, n_gt_max=20, n_det_max=40)
        flags, tp, fp = oracles.brute_match(gt, dets, 0.5)
        r = metrics.evaluate(gt, dets, 0.5, "allpoint")
        if (r.tp, r.fp) != (tp, fp) or abs(r.ap - oracles.voc_ap(flags, len(gt))) > 1e-9:
            bad += 1
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 30
    verdict(2, "TP/FP and allpoint AP equal brute-force oracle on 1000 scenes", ok,
            f"{bad} mismatches, {elapsed:.1f} s")
    assert bad == 0
    assert elapsed < 30


def _split_models(rng, dets, n_models):
    models = [[] for _ in range(n_models)]
    for d in dets:
        models[int(rng.integers(n_models))].append(d)
    return models


def _wbf_matches_oracle(models, weights, rescale):
    cfg = FusionConfig(0.55, tuple(weights), "mean_rescaled" if rescale else "mean")
    got = sorted(((g.box.as_tuple(), g.score) for g in ensemble.wbf(models, cfg)), key=lambda g: (-g[1], g[0]))
    want = sorted(oracles.hand_wbf(models, 0.55, list(weights), rescale), key=lambda w: (-w[1], w[0]))
    if len(got) != len(want):
        return False
    for (gb, gs), (wb, ws, members) in zip(got, want):
        m = np.array(members)
        g = np.array(gb)
        if np.max(np.abs(g - np.array(wb))) > 1e-9 or abs(gs - ws) > 1e-9:
            return False
        if np.any(g < m.min(axis=0) - 1e-9) or np.any(g > m.max(axis=0) + 1e-9):
            return False
    return True


def test_criterion_3_suppression_and_fusion_oracles(verdict):
    rng = np.random.default_rng(30_000)
    start = time.perf_counter()
    fails = {"nms": 0, "soft_nms": 0, "wbf": 0}
    for k in range(1000):
        dets = oracles.random_dets(rng, int(rng.integers(0, 51)), quantize=k % 2 == 0)
        t = float(rng.choice([0.3, 0.5, 0.7]))
        hard = postprocess.nms(dets, t)
        fails["nms"] += hard != oracles.brute_nms(dets, t)
        linear = SoftNmsConfig("linear", iou_trigger=t, prune_score=1.0)
        fails["soft_nms"] += postprocess.soft_nms(dets, linear) != hard
        n_models = int(rng.integers(1, 5))
        weights = [float(w) for w in rng.uniform(0.5, 2.0, n_models)]
        fails["wbf"] += not _wbf_matches_oracle(_split_models(rng, dets, n_models), weights, k % 3 != 0)
    elapsed = time.perf_counter() - start
    ok = not any(fails.values()) and elapsed < 30
    verdict(3, "nms, soft-NMS (linear, prune 1.0) and WBF match oracles on 1000 sets", ok,
            f"failures {fails}, {elapsed:.1f} s")
    assert not any(fails.values()), fails
    assert elapsed < 30


def test_criterion_4_merge_fixpoint(verdict):
    (worked,) = ann.merge_intersecting([Annotation("x", Box(2, 3, 8, 9)), Annotation("x", Box(5, 1, 10, 7))])
    example_ok = worked.box == Box(2, 1, 10, 9)
    rng = np.random.default_rng(40_000)
    records = []
    for k in range(10_000):
        img = f"img{k:05d}.jpg"
        records += [Annotation(img, oracles.random_box(rng, max_side=50)) for _ in range(rng.integers(2, 9))]
    start = time.perf_counter()
    merged = ann.merge_intersecting(records)
    elapsed = time.perf_counter() - start
    leftover = 0
    for group in ann.group_by_image(merged).values():
        boxes = [a.box.as_tuple() for a in group]
        leftover += sum(oracles.intersects(a, b) for i, a in enumerate(boxes) for b in boxes[i + 1:])
    fixpoint = ann.merge_intersecting(merged) == merged
    images = len(ann.group_by_image(merged))
    ok = example_ok and leftover == 0 and fixpoint and images == 10_000
    verdict(4, "merge_intersecting reaches an intersection-free fixpoint on 10^4 images", ok,
            f"example {'exact' if example_ok else worked.box}, {leftover} intersecting pairs left, "
            f"{len(records)} -> {len(merged)} boxes, {elapsed:.1f} s")
    assert example_ok
    assert leftover == 0
    assert fixpoint
    assert images == 10_000


def test_criterion_5_sweep_monotone(verdict, corpus):
    rng = np.random.default_rng(50_000)
    corpora = [oracles.random_scene(rng) for _ in range(1000)]
    gt = ann.load_annotations(corpus["gt"])
    corpora += [(gt, ann.load_detections(p)) for p in corpus["pred"]]
    violations = 0
    for g, d in corpora:
        tps = [r.tp for r in metrics.threshold_sweep(g, d, [0.3, 0.4, 0.5])]
        violations += not (tps[0] >= tps[1] >= tps[2])
    verdict(5, "TP counts non-increasing over IoU 0.3, 0.4, 0.5", violations == 0,
            f"{len(corpora)} corpora, {violations} violations")
    assert violations == 0


def test_criterion_6_image_ops(verdict):
    start = time.perf_counter()
    checks = {}
    const = np.empty((480, 640, 3), dtype=np.uint8)
    const[...] = (90, 140, 200)
    checks["motion_blur fixpoint"] = np.array_equal(imageops.motion_blur(const, 9, 30), const)
    checks["gaussian fixpoint"] = np.array_equal(imageops.blur(const, "gaussian", 5), const)
    checks["median fixpoint"] = np.array_equal(imageops.blur(const, "median", 3), const)
    checks["nlm fixpoint"] = np.array_equal(imageops.denoise_nlm(const, 1, 1, 7, 21), const)

    rng = np.random.default_rng(60_000)
    a = rng.integers(0, 256, (480, 640, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (480, 640, 3), dtype=np.uint8)
    mixed, _ = imageops.mixup(a, [], b, [], 0.5)
    # half-integer blends round away from zero: (a + b + 1) // 2
    want = (a.astype(np.int64) + b.astype(np.int64) + 1) // 2
    checks["mixup 0.5 blend"] = np.array_equal(mixed, want)

    lam = imageops.sample_mixup_lambda(1.5, seed=0, size=100_000)
    mean, var = float(lam.mean()), float(lam.var())
    checks["beta moments"] = abs(mean - 0.5) <= 0.01 and abs(var - 0.0625) <= 0.005

    g = rng.integers(10, 120, (480, 640)).astype(float)
    scaled = np.stack([2 * g, g, g], axis=-1).astype(np.uint8)
    means = imageops.shades_of_gray(scaled).reshape(-1, 3).mean(axis=0)
    checks["shades_of_gray equalizes"] = float(means.max() - means.min()) <= 1.0
    elapsed = time.perf_counter() - start

    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 60
    verdict(6, "image-op fixpoints, mixup blend, Beta(1.5,1.5) moments, Shades of Gray on 640x480", ok,
            f"beta mean {mean:.4f} var {var:.5f}, channel spread {means.max() - means.min():.3f}, "
            f"failed {failed}, {elapsed:.1f} s")
    assert not failed, failed
    assert elapsed < 60


def _random_records(rng, n, metas):
    names = sorted(metas)
    annots, dets = [], []
    for _ in range(n):
        m = metas[names[rng.integers(len(names))]]
        b = oracles.random_box(rng, size=min(m.width, m.height), max_side=min(m.width, m.height) / 2)
        b = Box(*(round(v, 6) for v in b.as_tuple()))
        annots.append(Annotation(m.image_id, b))
        dets.append(Detection(m.image_id, b, round(float(rng.uniform()), 6)))
    return annots, dets


def _format_round_trips(tmp_path):
    rng = np.random.default_rng(70_000)
    metas = {f"im{k:03d}.jpg": ImageMeta(f"im{k:03d}.jpg", int(w), int(h))
             for k, (w, h) in enumerate(rng.integers(64, 1024, (200, 2)))}
    annots, dets = _random_records(rng, 10_000, metas)
    problems = []

    ann.save_annotations(annots, tmp_path / "a.csv")
    ann.save_detections(dets, tmp_path / "d.csv")
    if ann.load_annotations(tmp_path / "a.csv") != annots:
        problems.append("annotation csv")
    if ann.load_detections(tmp_path / "d.csv") != dets:
        problems.append("detection csv")

    ann.save_yolo(annots, metas, tmp_path / "yolo")
    back = ann.group_by_image(ann.load_yolo(tmp_path / "yolo", metas))
    for img, group in ann.group_by_image(annots).items():
        # six normalized decimals bound each pixel coordinate by 1e-6 of the image side
        tol = 1e-6 * max(metas[img].width, metas[img].height)
        got = np.array(sorted(a.box.as_tuple() for a in back.get(img, [])))
        want = np.array(sorted(a.box.as_tuple() for a in group))
        if got.shape != want.shape or np.max(np.abs(got - want)) > tol:
            problems.append(f"yolo {img}")

    for k, (h, w) in enumerate([(1, 1), (7, 13), (480, 640)]):
        img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        p = tmp_path / f"p{k}.ppm"
        imageops.write_ppm(img, p)
        if not np.array_equal(imageops.read_ppm(p), img) or imageops.ppm_bytes(imageops.read_ppm(p)) != p.read_bytes():
            problems.append(f"ppm {h}x{w}")
    return problems


def _per_image_csv(fn, path):
    return ann.detections_to_csv(ann.per_image(fn, ann.load_detections(path)))


def _cli_cases(corpus, tmp):
    """(subcommand, argv, output path, expected bytes thunk) for every subcommand."""
    gt, metas_path, pairs = corpus["gt"], corpus["metas"], corpus["pairs"]
    p0, p1, p2 = corpus["pred"]
    load_gt = functools.partial(ann.load_annotations, gt)
    metas = ann.load_metas(metas_path)

    def wbf_expected():
        models = [ann.group_by_image(ann.load_detections(p)) for p in (p0, p1)]
        fused = []
        for img in sorted(set(models[0]) | set(models[1])):
            fused += ensemble.wbf([m.get(img, []) for m in models], FusionConfig(0.55, None, "mean_rescaled"))
        return ann.detections_to_csv(fused)

    def tta_expected():
        groups = [ann.group_by_image(ann.load_detections(p)) for p in (p0, p1)]
        merged = []
        for img in sorted(set().union(*groups)):
            views = [(ViewTransform(AffineMap.identity()), groups[0].get(img, [])),
                     (ViewTransform(AffineMap.hflip(metas[img].width)), groups[1].get(img, []))]
            merged += ensemble.tta_merge(views, 0.30)
        return ann.detections_to_csv(merged)

    def merge_expected():
        joined = ann.join_duplicates(load_gt(), ann.load_pairs(pairs))
        return ann.annotations_to_csv(ann.merge_intersecting(joined))

    def anchors_expected():
        wh = cluster_anchors([a.box for a in load_gt()], 3, 0)
        return "width,height\n" + "".join(f"{ann.format_float(w)},{ann.format_float(h)}\n" for w, h in wh)

    def yolo_dir(directory):
        return {p.name: p.read_text() for p in sorted(directory.iterdir())}

    def yolo_expected():
        ref = tmp / "yolo_ref"
        ann.save_yolo(load_gt(), metas, ref)
        return yolo_dir(ref)

    def to_csv_expected():
        ref = tmp / "yolo_ref2"
        ann.save_yolo(load_gt(), metas, ref)
        return ann.annotations_to_csv(ann.load_yolo(ref, metas))

    def to_csv_argv():
        src = tmp / "yolo_src"
        ann.save_yolo(load_gt(), metas, src)
        return ["convert", "--to", "csv", "--input", src, "--metas", metas_path]

    def augment_expected():
        root = corpus["root"]
        src = imageops.read_ppm(root / "a.ppm")
        boxes = ann.load_annotations(corpus["aug_gt"])
        return {row["output"]: imageops.ppm_bytes(
                    imageops.apply_op(src, row["op"], row["params"], row["seed"], boxes, root)[0])
                for row in imageops.load_manifest(corpus["manifest"])}

    def augment_actual(_):
        return {row["output"]: (corpus["root"] / row["output"]).read_bytes()
                for row in imageops.load_manifest(corpus["manifest"])}

    text = lambda p: p.read_text()  # noqa: E731
    return [
        ("evaluate", ["evaluate", "--gt", gt, "--pred", p0], text,
         lambda: metrics.report_json(metrics.evaluate(load_gt(), ann.load_detections(p0), 0.5))),
        ("sweep", ["sweep", "--gt", gt, "--pred", p0, "--ious", "0.3,0.4,0.5"], text,
         lambda: metrics.report_json(metrics.threshold_sweep(load_gt(), ann.load_detections(p0), [0.3, 0.4, 0.5]))),
        ("nms", ["nms", "--pred", p2], text,
         lambda: _per_image_csv(functools.partial(postprocess.nms, iou_thresh=0.5), p2)),
        ("softnms", ["softnms", "--pred", p2], text,
         lambda: _per_image_csv(functools.partial(postprocess.soft_nms, cfg=SoftNmsConfig()), p2)),
        ("filter", ["filter", "--pred", p2], text,
         lambda: _per_image_csv(functools.partial(postprocess.filter_confidence, min_score=0.3), p2)),
        ("remove-overlaps", ["remove-overlaps", "--pred", p2], text,
         lambda: _per_image_csv(functools.partial(postprocess.remove_overlaps, overlap_thresh=0.8), p2)),
        ("adaptive-suppress", ["adaptive-suppress", "--pred", p2], text,
         lambda: _per_image_csv(functools.partial(postprocess.adaptive_suppress, thresh=0.5), p2)),
        ("wbf", ["wbf", "--pred", p0, "--pred", p1], text, wbf_expected),
        ("tta-merge", ["tta-merge", "--view", f"{p0}=identity", "--view", f"{p1}=hflip", "--metas", metas_path],
         text, tta_expected),
        ("pseudo-label", ["pseudo-label", "--pred", p0], text,
         lambda: ann.annotations_to_csv(ann.pseudo_label(ann.load_detections(p0), 0.70))),
        ("merge-annotations", ["merge-annotations", "--annotations", gt, "--pairs", pairs], text, merge_expected),
        ("validate", ["validate", "--annotations", gt, "--metas", metas_path], text,
         lambda: "[]\n" if not ann.validate(load_gt(), metas) else None),
        ("convert", ["convert", "--to", "yolo", "--input", gt, "--metas", metas_path], yolo_dir, yolo_expected),
        ("convert", to_csv_argv(), text, to_csv_expected),
        ("augment", ["augment", "--manifest", corpus["manifest"], "--annotations", corpus["aug_gt"]],
         augment_actual, augment_expected),
        ("anchors", ["anchors", "--annotations", gt, "--k", "3", "--seed", "0"], text, anchors_expected),
    ]


def test_criterion_7_round_trips_and_cli(verdict, corpus, tmp_path):
    problems = _format_round_trips(tmp_path)
    covered = set()
    for k, (name, argv, read, expected) in enumerate(_cli_cases(corpus, tmp_path)):
        out = tmp_path / f"cli{k}"
        code = run([str(a) for a in argv] + (["--out", str(out)] if name != "augment" else []))
        if code != 0 or read(out) != expected():
            problems.append(f"cli {name}")
        covered.add(name)
    subcommands = set(build_parser()._subparsers._group_actions[0].choices)
    missing = sorted(subcommands - covered)
    ok = not problems and not missing
    verdict(7, "CSV/YOLO/PPM round-trips on 10^4 records and CLI byte-equality for every subcommand", ok,
            f"{len(covered)} subcommands; problems {problems}; uncovered {missing}")
    assert not problems, problems
    assert not missing, missing
