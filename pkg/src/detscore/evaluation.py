"""Cross-validation, regression metrics, binned confusion and domain classification."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .features import FEATURE_NAMES
from .forest import ForestParams, fit_forest, predict_matrix

DEFAULT_CONFUSION_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_SWEEP_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "random"  # "random" (k-fold) or "grouped" (leave one group out)
    k: int = 5
    repeats: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "grouped"):
            raise ValueError(f"split kind must be 'random' or 'grouped', got {self.kind!r}")
        if self.kind == "random" and self.k < 2:
            raise ValueError("k must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SplitSpec":
        """Parse ``random:k=5,repeats=10`` or ``grouped``."""
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        opts = {}
        for part in filter(None, (p.strip() for p in rest.split(","))):
            key, sep, value = part.partition("=")
            if not sep or key.strip() not in ("k", "repeats"):
                raise ValueError(f"bad split option {part!r}")
            opts[key.strip()] = int(value)
        if kind == "grouped" and opts:
            raise ValueError("grouped split takes no options")
        return cls(kind, seed=seed, **opts)


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    test: np.ndarray
    repeat: int = 0
    label: str = ""


def make_folds(n_rows: int, spec: SplitSpec, groups: Optional[Sequence[str]] = None) -> list[Fold]:
    if spec.kind == "random":
        if n_rows < spec.k:
            raise DataError(f"need at least k={spec.k} rows, got {n_rows}")
        folds = []
        for r in range(spec.repeats):
            rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(r,)))
            perm = rng.permutation(n_rows)
            parts = np.array_split(perm, spec.k)
            for i, test in enumerate(parts):
                train = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
                folds.append(Fold(train, np.sort(test), r, f"repeat{r}/fold{i}"))
        return folds
    if groups is None or len(groups) != n_rows:
        raise DataError("grouped split needs one group label per row")
    labels = list(dict.fromkeys(groups))
    if len(labels) < 2:
        raise DataError(f"grouped split: need >= 2 groups, found {len(labels)}")
    g = np.asarray(groups, dtype=object)
    return [Fold(np.flatnonzero(g != lab), np.flatnonzero(g == lab), 0, lab) for lab in labels]


# ---------------------------------------------------------------------------
# regression metrics


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    r2: Optional[float]
    nrmse: Optional[float]
    nmae: Optional[float]
    n: float

    def row(self) -> list:
        return [self.rmse, self.mae, self.r2, self.nrmse, self.nmae, self.n]


def regression_metrics(y_true, y_pred) -> MetricReport:
    """RMSE, MAE, R^2 and their normalized forms.

    NRMSE divides by the population standard deviation of ``y_true`` and
    NMAE by its mean; either is ``None`` when that denominator is zero, as
    is R^2 for constant ``y_true``.
    """
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise DataError(f"length mismatch: {y.shape} vs {p.shape}")
    if y.size == 0:
        raise DataError("metrics need at least one pair")
    err = p - y
    rmse = math.sqrt(math.fsum(err * err) / y.size)
    mae = math.fsum(np.abs(err)) / y.size
    mean = math.fsum(y) / y.size
    ss_tot = math.fsum((y - mean) ** 2)
    sd = math.sqrt(ss_tot / y.size)
    r2 = 1.0 - math.fsum(err * err) / ss_tot if ss_tot > 0 else None
    nrmse = rmse / sd if sd > 0 else None
    nmae = mae / mean if mean > 0 else None
    return MetricReport(rmse, mae, r2, nrmse, nmae, int(y.size))


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Unweighted mean of each field, skipping undefined entries."""
    def avg(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None
    cols = list(zip(*(r.row() for r in reports)))
    values = [avg(c) for c in cols]
    if len(set(cols[-1])) == 1:
        values[-1] = cols[-1][0]  # repeats over the same rows keep an integer count
    return MetricReport(*values)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    spec: SplitSpec
    predictions: np.ndarray  # (repeats, n) out-of-fold predictions
    y_true: np.ndarray
    groups: Optional[list[str]]
    overall: MetricReport
    per_group: dict[str, MetricReport] = field(default_factory=dict)
    group_average: Optional[MetricReport] = None

    def pooled(self):
        """(y_true, y_pred) over every repeat, for confusion and PR analysis."""
        r = self.predictions.shape[0]
        return np.tile(self.y_true, r), self.predictions.ravel()


def cross_validate(X, y, groups, spec: SplitSpec, params: ForestParams = ForestParams(), *,
                   feature_names: Sequence[str] = FEATURE_NAMES, target_name: str = "f1",
                   threads: int = 1) -> CVResult:
    """Out-of-fold predictions with standardizer and forest refit on each training fold.

    Metrics are computed per repeat on the pooled out-of-fold predictions and
    then averaged over repeats.  Per-group rows use each group's pooled
    predictions; ``group_average`` is their unweighted mean.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    folds = make_folds(X.shape[0], spec, groups)
    preds = np.full((spec.repeats if spec.kind == "random" else 1, X.shape[0]), np.nan)
    for i, fold in enumerate(folds):
        # each fold gets its own forest seed so folds are not correlated
        fold_seed = int(np.random.SeedSequence(spec.seed, spawn_key=(fold.repeat, i)).generate_state(2, np.uint64)[0])
        model = fit_forest(X[fold.train], y[fold.train], params, fold_seed,
                           feature_names=feature_names, target_name=target_name, threads=threads)
        preds[fold.repeat, fold.test] = predict_matrix(model, X[fold.test])
    overall = average_reports([regression_metrics(y, p) for p in preds])
    per_group = {}
    group_average = None
    if groups is not None:
        g = np.asarray(groups, dtype=object)
        for lab in dict.fromkeys(groups):
            idx = g == lab
            per_group[lab] = average_reports([regression_metrics(y[idx], p[idx]) for p in preds])
        group_average = average_reports(list(per_group.values()))
    return CVResult(spec, preds, y, None if groups is None else list(groups),
                    overall, per_group, group_average)


# ---------------------------------------------------------------------------
# confusion matrix


@dataclass(frozen=True)
class ConfusionMatrix:
    edges: tuple[float, ...]
    counts: np.ndarray  # rows: true bin, columns: predicted bin

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _bin(values, edges):
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def confusion(y_true, y_pred, edges=DEFAULT_CONFUSION_EDGES) -> ConfusionMatrix:
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise DataError(f"confusion edges must be strictly increasing, got {edges}")
    yt = np.clip(np.asarray(y_true, dtype=np.float64), 0.0, 1.0)
    yp = np.clip(np.asarray(y_pred, dtype=np.float64), 0.0, 1.0)
    if yt.shape != yp.shape:
        raise DataError("length mismatch")
    nb = len(edges) - 1
    counts = np.zeros((nb, nb), dtype=np.int64)
    np.add.at(counts, (_bin(yt, edges), _bin(yp, edges)), 1)
    return ConfusionMatrix(edges, counts)


# ---------------------------------------------------------------------------
# domain classification


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    recall: float
    precision: float


@dataclass(frozen=True)
class SweepRow:
    f1_threshold: float
    precision: float
    recall: float
    f1: float
    accuracy: float
    baseline_f1: float
    baseline_accuracy: float
    prevalence: float


@dataclass
class DomainClassification:
    f1_threshold: float
    pr_curve: list[PRPoint]
    operating_point: Optional[tuple[float, float]]  # (precision, recall)
    sweep: list[SweepRow]
    prevalence: float
    degenerate: bool = False

    @property
    def average_precision(self) -> Optional[float]:
        """Step-wise area under the PR curve."""
        if self.degenerate or not self.pr_curve:
            return None
        pts = sorted(self.pr_curve, key=lambda p: p.threshold, reverse=True)
        ap, prev_r = 0.0, 0.0
        for p in pts:
            ap += (p.recall - prev_r) * p.precision
            prev_r = p.recall
        return ap


def _classify(positive, scores, threshold):
    pred = scores >= threshold
    tp = int(np.sum(pred & positive))
    fp = int(np.sum(pred & ~positive))
    fn = int(np.sum(~pred & positive))
    tn = int(np.sum(~pred & ~positive))
    return tp, fp, fn, tn


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else math.nan
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fn else math.nan
    return precision, recall, f1


def pr_curve(positive, scores) -> list[PRPoint]:
    """Precision/recall of ``scores >= t`` for every distinct score plus +-inf.

    Zero predicted positives counts as precision 1.
    """
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(positive.sum())
    thresholds = np.concatenate([[-np.inf], np.unique(scores), [np.inf]])
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    cum_tp = np.concatenate([[0], np.cumsum(positive[order])])
    # number of scores >= t
    n_sel = len(scores) - np.searchsorted(s_sorted[::-1], thresholds, side="left")
    out = []
    for t, k in zip(thresholds, n_sel):
        tp = int(cum_tp[k])
        precision = tp / k if k else 1.0
        recall = tp / n_pos if n_pos else math.nan
        out.append(PRPoint(float(t), recall, precision))
    return out


def domain_classification(y_true, y_pred, f1_threshold: float = 0.5,
                          sweep_thresholds=DEFAULT_SWEEP_THRESHOLDS) -> DomainClassification:
    """Threshold true and predicted F1 into reliable / unreliable images.

    The PR curve varies the decision threshold on predicted F1 with the
    positive class fixed at ``y_true >= f1_threshold``.  The sweep moves both
    thresholds together.  Baselines: always-positive (F1) and majority class
    (accuracy).
    """
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape or yt.ndim != 1 or yt.size == 0:
        raise DataError("need two equal-length non-empty vectors")
    positive = yt >= f1_threshold
    prevalence = float(positive.mean())
    degenerate = positive.all() or not positive.any()
    if degenerate:
        curve, op = [], None
    else:
        curve = pr_curve(positive, yp)
        tp, fp, fn, _ = _classify(positive, yp, f1_threshold)
        p, r, _ = _prf(tp, fp, fn)
        op = (p, r)
    sweep = []
    for t in sweep_thresholds:
        pos = yt >= t
        tp, fp, fn, tn = _classify(pos, yp, t)
        p, r, f1 = _prf(tp, fp, fn)
        prev = float(pos.mean())
        base_f1 = 2 * prev / (1 + prev) if prev > 0 else math.nan
        sweep.append(SweepRow(float(t), p, r, f1, (tp + tn) / yt.size, base_f1,
                              max(prev, 1 - prev), prev))
    return DomainClassification(f1_threshold, curve, op, sweep, prevalence, bool(degenerate))


# ---------------------------------------------------------------------------
# report files


def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def write_cv_report(result: CVResult, out_dir, ids: Sequence[str], f1_threshold: float = 0.5,
                    edges=DEFAULT_CONFUSION_EDGES,
                    sweep_thresholds=DEFAULT_SWEEP_THRESHOLDS) -> DomainClassification:
    """Write metrics, parity, confusion, PR curve and threshold sweep CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["subset", "rmse", "mae", "r2", "nrmse", "nmae", "n"]
    rows = [["All data", *result.overall.row()]]
    for lab, rep in result.per_group.items():
        rows.append([lab, *rep.row()])
    if result.group_average is not None:
        kind = "grouped" if result.spec.kind == "grouped" else "random"
        rows.append([f"Average of {kind} splits", *result.group_average.row()])
    _write(out / "metrics.csv", header, rows)

    groups = result.groups or [""] * len(ids)
    parity = []
    for r, preds in enumerate(result.predictions):
        for i, rid in enumerate(ids):
            parity.append([str(r), rid, groups[i], result.y_true[i], preds[i]])
    _write(out / "parity.csv", ["repeat", "id", "group", "y_true", "y_pred"], parity)

    yt, yp = result.pooled()
    cm = confusion(yt, yp, edges)
    cm_rows = []
    for i in range(len(cm.edges) - 1):
        for j in range(len(cm.edges) - 1):
            cm_rows.append([cm.edges[i], cm.edges[i + 1], cm.edges[j], cm.edges[j + 1],
                            int(cm.counts[i, j])])
    _write(out / "confusion.csv", ["true_lo", "true_hi", "pred_lo", "pred_hi", "count"], cm_rows)

    dc = domain_classification(yt, yp, f1_threshold, sweep_thresholds)
    pr_rows = [[p.threshold, p.recall, p.precision] for p in dc.pr_curve]
    if dc.operating_point is not None:
        pr_rows.append(["operating_point", dc.operating_point[1], dc.operating_point[0]])
    _write(out / "pr_curve.csv", ["threshold", "recall", "precision"], pr_rows)
    _write(out / "sweep.csv",
           ["f1_threshold", "precision", "recall", "f1", "accuracy",
            "baseline_f1", "baseline_accuracy", "prevalence"],
           [[s.f1_threshold, s.precision, s.recall, s.f1, s.accuracy,
             s.baseline_f1, s.baseline_accuracy, s.prevalence] for s in dc.sweep])
    return dc
