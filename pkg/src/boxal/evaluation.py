"""Detection evaluation: per-image F1, COCO-style mAP, two-sample t-test.

mAP follows the COCO 2017 conventions: IoU thresholds 0.50:0.05:0.95, greedy
score-descending matching against the highest-IoU unmatched ground-truth
object, 101-point interpolated average precision, at most 100 detections per
image, and the mean taken over categories with at least one ground-truth
instance. Area/maxDets breakdowns are out of scope; only the headline mAP and
per-category APs are produced.

The t-test is the classic pooled-variance (equal-variance) two-sample Student
test. The two-sided p-value is computed from the regularized incomplete beta
function, implemented here with a Lentz-style continued fraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .data_io import CategoryCatalog, GroundTruthImage, _iter_jsonl
from .errors import ValidationError
from .geometry import BoundingBox, iou, mean_box
from .grouping import InstanceSet

COCO_IOU_THRESHOLDS = tuple((50 + 5 * i) / 100.0 for i in range(10))
MAX_DETECTIONS_PER_IMAGE = 100


@dataclass(frozen=True)
class FinalPrediction:
    """A single consolidated prediction: box, winning category, its score."""

    box: BoundingBox
    category: int
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"prediction score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class EvalResult:
    per_category_ap: dict[int, float]
    map_score: float
    per_image_f1: dict[str, float]
    true_positives: int
    false_positives: int
    false_negatives: int


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float


def consolidate(sets: Sequence[InstanceSet]) -> list[FinalPrediction]:
    """Reduce instance sets to single predictions: mean box, mean scores, argmax.

    Output is ordered by descending score, ties by box corners.
    """
    preds = []
    for instance_set in sets:
        box = mean_box(instance_set.boxes)
        kappa = len(instance_set.members[0][1].scores)
        mean_scores = [
            sum(det.scores[j] for _, det in instance_set.members) / instance_set.size
            for j in range(kappa)
        ]
        category = max(range(kappa), key=lambda j: mean_scores[j])
        preds.append(FinalPrediction(box, category, min(mean_scores[category], 1.0)))
    preds.sort(key=lambda p: (-p.score, p.box.as_tuple()))
    return preds


def _greedy_match(
    preds: Sequence[FinalPrediction],
    gt_objects: Sequence[tuple[BoundingBox, int]],
    iou_thr: float,
) -> list[bool]:
    """Per-prediction TP flags under greedy score-descending matching."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, preds[i].box.as_tuple()))
    gt_used = [False] * len(gt_objects)
    flags = [False] * len(preds)
    for i in order:
        pred = preds[i]
        best_j = -1
        best_iou = 0.0
        for j, (gt_box, gt_cat) in enumerate(gt_objects):
            if gt_used[j] or gt_cat != pred.category:
                continue
            value = iou(pred.box, gt_box)
            if value >= iou_thr and value > best_iou:
                best_iou = value
                best_j = j
        if best_j >= 0:
            gt_used[best_j] = True
            flags[i] = True
    return flags


def f1_image(
    preds: Sequence[FinalPrediction], gt: GroundTruthImage, iou_thr: float = 0.5
) -> float:
    """Detection F1 for one image at a single IoU threshold.

    A prediction counts as a true positive if it greedily matches an unmatched
    ground-truth object of the same category with IoU >= iou_thr. Both-empty
    images score 1 so blanks do not read as failures.
    """
    if not preds and not gt.objects:
        return 1.0
    flags = _greedy_match(preds, gt.objects, iou_thr)
    tp = sum(flags)
    fp = len(preds) - tp
    fn = len(gt.objects) - tp
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def _average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP from a score-ordered TP/FP sequence."""
    if n_gt == 0:
        return 0.0
    precisions = []
    recalls = []
    tp = 0
    for i, flag in enumerate(tp_flags, start=1):
        tp += int(flag)
        precisions.append(tp / i)
        recalls.append(tp / n_gt)
    # envelope: precision at recall >= r is the running max from the right
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    total = 0.0
    j = 0
    for k in range(101):
        r = k / 100.0
        while j < len(recalls) and recalls[j] < r - 1e-12:
            j += 1
        if j < len(precisions):
            total += precisions[j]
    return total / 101.0


def coco_map(
    preds_by_image: Mapping[str, Sequence[FinalPrediction]],
    gt_by_image: Mapping[str, GroundTruthImage],
    catalog: CategoryCatalog,
) -> EvalResult:
    """COCO-style mAP plus per-image F1 at IoU 0.5."""
    if all(not gt.objects for gt in gt_by_image.values()):
        raise ValidationError("mAP is undefined with no ground-truth objects")

    capped: dict[str, list[FinalPrediction]] = {}
    for image_id in gt_by_image:
        preds = sorted(
            preds_by_image.get(image_id, ()), key=lambda p: (-p.score, p.box.as_tuple())
        )
        capped[image_id] = preds[:MAX_DETECTIONS_PER_IMAGE]

    per_category_ap: dict[int, float] = {}
    for category in range(len(catalog)):
        gt_count = sum(
            sum(1 for _, c in gt.objects if c == category) for gt in gt_by_image.values()
        )
        if gt_count == 0:
            continue
        detections = [
            (p.score, image_id, p)
            for image_id, preds in capped.items()
            for p in preds
            if p.category == category
        ]
        detections.sort(key=lambda d: (-d[0], d[1], d[2].box.as_tuple()))
        ap_sum = 0.0
        for thr in COCO_IOU_THRESHOLDS:
            gt_used: dict[str, list[bool]] = {
                image_id: [False] * len(gt.objects) for image_id, gt in gt_by_image.items()
            }
            flags = []
            for _, image_id, pred in detections:
                objects = gt_by_image[image_id].objects
                used = gt_used[image_id]
                best_j = -1
                best_iou = 0.0
                for j, (gt_box, gt_cat) in enumerate(objects):
                    if used[j] or gt_cat != category:
                        continue
                    value = iou(pred.box, gt_box)
                    if value >= thr and value > best_iou:
                        best_iou = value
                        best_j = j
                if best_j >= 0:
                    used[best_j] = True
                    flags.append(True)
                else:
                    flags.append(False)
            ap_sum += _average_precision(flags, gt_count)
        per_category_ap[category] = ap_sum / len(COCO_IOU_THRESHOLDS)

    map_score = sum(per_category_ap.values()) / len(per_category_ap)

    per_image_f1 = {}
    tp = fp = fn = 0
    for image_id, gt in gt_by_image.items():
        preds = capped[image_id]
        per_image_f1[image_id] = f1_image(preds, gt)
        flags = _greedy_match(preds, gt.objects, 0.5)
        image_tp = sum(flags)
        tp += image_tp
        fp += len(preds) - image_tp
        fn += len(gt.objects) - image_tp

    return EvalResult(per_category_ap, map_score, per_image_f1, tp, fp, fn)


# ---------------------------------------------------------------------------
# predictions file format: line-delimited, one image per line:
# {"image_id": str, "predictions": [{"bbox": [x1,y1,x2,y2], "category": int, "score": f}]}


def load_predictions(path: str | Path) -> dict[str, list[FinalPrediction]]:
    out: dict[str, list[FinalPrediction]] = {}
    for lineno, record in _iter_jsonl(Path(path)):
        where = f"{path}:{lineno}"
        image_id = record.get("image_id")
        if image_id is None:
            raise ValidationError(f"{where}: missing image_id")
        if image_id in out:
            raise ValidationError(f"{where}: duplicate image_id {image_id!r}")
        preds = []
        for raw in record.get("predictions", []):
            preds.append(
                FinalPrediction(
                    BoundingBox(*(float(v) for v in raw["bbox"])),
                    int(raw["category"]),
                    float(raw["score"]),
                )
            )
        out[image_id] = preds
    return out


def save_predictions(preds_by_image: Mapping[str, Sequence[FinalPrediction]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, preds in preds_by_image.items():
            record = {
                "image_id": image_id,
                "predictions": [
                    {"bbox": list(p.box.as_tuple()), "category": p.category, "score": p.score}
                    for p in preds
                ],
            }
            fh.write(json.dumps(record) + "\n")


# ---------------------------------------------------------------------------
# Student's t-test


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    eps = 1e-15
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed to converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValidationError(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def ttest_two_sided(x: Sequence[float], y: Sequence[float]) -> TTestResult:
    """Two-sided unpaired Student's t-test with pooled variance.

    With zero pooled variance the test degenerates: equal means give
    (t=0, p=1); unequal means give p=0 with t reported as signed infinity.
    """
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise ValidationError(f"both samples need >= 2 values, got {nx} and {ny}")
    mx = sum(x) / nx
    my = sum(y) / ny
    df = nx + ny - 2
    ssq = sum((v - mx) ** 2 for v in x) + sum((v - my) ** 2 for v in y)
    pooled = ssq / df
    if pooled == 0.0:
        if mx == my:
            return TTestResult(0.0, df, 1.0)
        return TTestResult(math.copysign(math.inf, mx - my), df, 0.0)
    t = (mx - my) / math.sqrt(pooled * (1.0 / nx + 1.0 / ny))
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return TTestResult(t, df, min(max(p, 0.0), 1.0))
