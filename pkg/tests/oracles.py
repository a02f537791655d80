"""Independently coded reference implementations used as test oracles.

These deliberately avoid reusing the library's internals beyond the plain
data types, so that agreement between the two is meaningful.
"""

from __future__ import annotations

import math

import numpy as np

from boxal.data_io import CategoryCatalog, Detection, GroundTruthImage, ImagePasses
from boxal.evaluation import FinalPrediction
from boxal.geometry import BoundingBox


# ---------------------------------------------------------------------------
# rasterized IoU: count unit cells of a fine grid inside each box


def rasterized_iou(a: BoundingBox, b: BoundingBox, pitch: float = 0.25) -> float:
    """IoU computed by counting cell centers of a fixed fine grid.

    Exact when every box coordinate is a multiple of the grid pitch, because
    then no cell straddles a box edge.
    """
    x_lo = math.floor(min(a.x_min, b.x_min) / pitch) * pitch
    x_hi = math.ceil(max(a.x_max, b.x_max) / pitch) * pitch
    y_lo = math.floor(min(a.y_min, b.y_min) / pitch) * pitch
    y_hi = math.ceil(max(a.y_max, b.y_max) / pitch) * pitch
    xs = x_lo + (np.arange(round((x_hi - x_lo) / pitch)) + 0.5) * pitch
    ys = y_lo + (np.arange(round((y_hi - y_lo) / pitch)) + 0.5) * pitch
    gx, gy = np.meshgrid(xs, ys)

    def inside(box):
        return (gx >= box.x_min) & (gx < box.x_max) & (gy >= box.y_min) & (gy < box.y_max)

    in_a = inside(a)
    in_b = inside(b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


# ---------------------------------------------------------------------------
# brute-force greedy NMS written as an elimination sweep rather than a
# keep-list accumulation


def brute_force_nms(detections, iou_threshold, iou_fn):
    remaining = sorted(detections, key=lambda d: (-d[1], d[0].as_tuple()))
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [d for d in remaining if iou_fn(top[0], d[0]) < iou_threshold]
    return kept


# ---------------------------------------------------------------------------
# brute-force cross-pass grouping, restated from the assignment rule


def brute_force_grouping(img: ImagePasses, match_iou: float, iou_fn):
    """Returns a list of lists of (pass_index, Detection), in creation order."""
    groups: list[list[tuple[int, Detection]]] = []
    for p, dets in enumerate(img.passes):
        ordered = sorted(dets, key=lambda d: (-max(d.scores), d.box.as_tuple()))
        taken: set[int] = set()  # groups already fed by this pass (incl. new ones)
        for det in ordered:
            # score every open group by its best member overlap
            candidates = []
            for g, members in enumerate(groups):
                if g in taken:
                    continue
                overlap = max(iou_fn(det.box, m.box) for _, m in members)
                if overlap >= match_iou:
                    candidates.append((overlap, -g))
            if candidates:
                overlap, neg_g = max(candidates)  # highest IoU, then lowest index
                groups[-neg_g].append((p, det))
                taken.add(-neg_g)
            else:
                taken.add(len(groups))
                groups.append([(p, det)])
    return groups


# ---------------------------------------------------------------------------
# brute-force COCO-style mAP via direct 101-point precision interpolation


def _match_flags(detections, gt_by_image, category, thr, iou_fn):
    used = {image_id: [False] * len(gt.objects) for image_id, gt in gt_by_image.items()}
    flags = []
    for _, image_id, pred in detections:
        best = None
        best_v = 0.0
        for j, (gt_box, gt_cat) in enumerate(gt_by_image[image_id].objects):
            if used[image_id][j] or gt_cat != category:
                continue
            v = iou_fn(pred.box, gt_box)
            if v >= thr and v > best_v:
                best = j
                best_v = v
        if best is not None:
            used[image_id][best] = True
        flags.append(best is not None)
    return flags


def brute_force_map(preds_by_image, gt_by_image, catalog: CategoryCatalog, iou_fn):
    """Reference mAP: per category/threshold PR points, direct interpolation."""
    thresholds = [t / 100.0 for t in range(50, 100, 5)]
    aps = {}
    for category in range(len(catalog)):
        n_gt = sum(
            1 for gt in gt_by_image.values() for _, c in gt.objects if c == category
        )
        if n_gt == 0:
            continue
        detections = []
        for image_id in gt_by_image:
            ordered = sorted(
                preds_by_image.get(image_id, ()),
                key=lambda p: (-p.score, p.box.as_tuple()),
            )[:100]
            for p in ordered:
                if p.category == category:
                    detections.append((p.score, image_id, p))
        detections.sort(key=lambda d: (-d[0], d[1], d[2].box.as_tuple()))
        ap_total = 0.0
        for thr in thresholds:
            flags = _match_flags(detections, gt_by_image, category, thr, iou_fn)
            prec, rec = [], []
            tp = 0
            for i, f in enumerate(flags, start=1):
                tp += int(f)
                prec.append(tp / i)
                rec.append(tp / n_gt)
            points = 0.0
            for k in range(101):
                r = k / 100.0
                eligible = [p for p, q in zip(prec, rec) if q >= r - 1e-12]
                points += max(eligible) if eligible else 0.0
            ap_total += points / 101.0
        aps[category] = ap_total / len(thresholds)
    return sum(aps.values()) / len(aps), aps


# ---------------------------------------------------------------------------
# random scene generator shared by the evaluation tests


def random_scene(rng: np.random.Generator, kappa: int = 3):
    """One small random evaluation scene: gt and predictions for 1-3 images."""
    gt_by_image = {}
    preds_by_image = {}
    n_images = int(rng.integers(1, 4))
    score_pool = list(rng.permutation(np.linspace(0.05, 0.99, 40)))
    for i in range(n_images):
        image_id = f"im{i}"
        objects = []
        for _ in range(int(rng.integers(0, 4))):
            x0 = float(rng.integers(0, 60))
            y0 = float(rng.integers(0, 60))
            w = float(rng.integers(8, 30))
            h = float(rng.integers(8, 30))
            objects.append((BoundingBox(x0, y0, x0 + w, y0 + h), int(rng.integers(0, kappa))))
        gt_by_image[image_id] = GroundTruthImage(image_id, tuple(objects))
        preds = []
        for _ in range(int(rng.integers(0, 5))):
            if objects and rng.random() < 0.6:
                # derive from a gt box with an integer shift so IoU varies
                base, cat = objects[int(rng.integers(0, len(objects)))]
                dx = float(rng.integers(-6, 7))
                dy = float(rng.integers(-6, 7))
                box = BoundingBox(base.x_min + dx, base.y_min + dy, base.x_max + dx, base.y_max + dy)
                if rng.random() < 0.2:
                    cat = int(rng.integers(0, kappa))
            else:
                x0 = float(rng.integers(0, 60))
                y0 = float(rng.integers(0, 60))
                box = BoundingBox(x0, y0, x0 + float(rng.integers(8, 30)), y0 + float(rng.integers(8, 30)))
                cat = int(rng.integers(0, kappa))
            preds.append(FinalPrediction(box, cat, float(score_pool.pop())))
        preds_by_image[image_id] = preds
    return preds_by_image, gt_by_image


def random_passes(rng: np.random.Generator, image_id: str = "img", kappa: int = 3,
                  max_passes: int = 4, max_dets: int = 5) -> ImagePasses:
    """Random multi-pass detections on a coarse grid so overlaps are common."""
    n = int(rng.integers(1, max_passes + 1))
    passes = []
    for _ in range(n):
        dets = []
        for _ in range(int(rng.integers(0, max_dets + 1))):
            x0 = float(rng.integers(0, 8)) * 10.0
            y0 = float(rng.integers(0, 8)) * 10.0
            w = float(rng.integers(1, 4)) * 10.0
            h = float(rng.integers(1, 4)) * 10.0
            raw = rng.gamma(1.0, size=kappa) + 1e-9
            scores = tuple(float(v) for v in raw / raw.sum())
            dets.append(Detection(BoundingBox(x0, y0, min(x0 + w, 100.0), min(y0 + h, 100.0)), scores))
        passes.append(tuple(dets))
    return ImagePasses(image_id, 100, 100, tuple(passes))
