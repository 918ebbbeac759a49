"""Per-image detection scoring: greedy box matching and precision/recall/F1."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

from .errors import DataError, LabelsRequiredError
from .ingest import BoundingBox, Dataset, Detection, ImageRecord


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.1
    confidence_threshold: float = 0.1
    # "iou" or "iop" (intersection over the predicted box area)
    overlap: str = "iou"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if not 0.0 <= self.confidence_threshold < 1.0:
            raise ValueError(f"confidence_threshold must be in [0, 1), got {self.confidence_threshold}")
        if self.overlap not in ("iou", "iop"):
            raise ValueError(f"overlap must be 'iou' or 'iop', got {self.overlap!r}")


@dataclass(frozen=True)
class DetectionScore:
    tp: int
    fp: int
    fn_: int
    precision: float
    recall: float
    f1: float


def _intersection(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if a == b:
        return 1.0
    inter = _intersection(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def intersection_over_prediction(pred: BoundingBox, truth: BoundingBox) -> float:
    """Fraction of the predicted box covered by the ground-truth box."""
    return min(1.0, _intersection(pred, truth) / pred.area)


def score_from_counts(tp: int, fp: int, fn_: int) -> DetectionScore:
    """Precision, recall and F1 = 2TP / (2TP + FP + FN).

    An image with nothing to find and nothing found scores 1 on all three.
    Otherwise an empty denominator yields 0.
    """
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if fn_ == 0 else 0.0
    if tp + fn_ > 0:
        recall = tp / (tp + fn_)
    else:
        recall = 1.0 if fp == 0 else 0.0
    denom = 2 * tp + fp + fn_
    f1 = 2 * tp / denom if denom > 0 else 1.0
    return DetectionScore(tp, fp, fn_, precision, recall, f1)


def retained(detections: Sequence[Detection], confidence_threshold: float) -> list[Detection]:
    return [d for d in detections if d.score >= confidence_threshold]


def match_counts(detections: Sequence[Detection], truths: Sequence, cfg: MatchConfig):
    """Greedy matching; returns (tp, fp, fn).

    Detections are visited by descending score (input order on ties); each
    claims the free ground-truth object of largest overlap, lowest index on ties.
    """
    overlap = iou if cfg.overlap == "iou" else intersection_over_prediction
    kept = retained(detections, cfg.confidence_threshold)
    order = sorted(range(len(kept)), key=lambda i: -kept[i].score)
    free = [True] * len(truths)
    tp = 0
    for i in order:
        box = kept[i].box
        best, best_j = -1.0, -1
        for j, gt in enumerate(truths):
            if not free[j]:
                continue
            v = overlap(box, gt.box)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= cfg.iou_threshold:
            free[best_j] = False
            tp += 1
    return tp, len(kept) - tp, len(truths) - tp


def match_image(record: ImageRecord, cfg: MatchConfig = MatchConfig()) -> DetectionScore:
    if record.ground_truth is None:
        raise LabelsRequiredError(f"image {record.id!r} has no ground truth; labeled data required")
    return score_from_counts(*match_counts(record.detections, record.ground_truth, cfg))


def score_dataset(ds: Dataset, cfg: MatchConfig = MatchConfig()) -> list[tuple[str, DetectionScore]]:
    return [(rec.id, match_image(rec, cfg)) for rec in ds.images]


def write_scores(scores, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "tp", "fp", "fn", "precision", "recall", "f1"])
            for rid, s in scores:
                w.writerow([rid, s.tp, s.fp, s.fn_, repr(s.precision), repr(s.recall), repr(s.f1)])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
