"""Feature rankings (impurity-based and permutation) and the top-k selection sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .features import FEATURE_INDEX, FEATURE_NAMES
from .forest import ForestModel, ForestParams, predict_matrix


@dataclass(frozen=True)
class ImportanceReport:
    method: str
    scores: dict[str, float]
    ranking: list[str]

    def top(self, k: int) -> list[str]:
        return self.ranking[:k]


def _rank(scores: dict[str, float]) -> list[str]:
    # descending score, canonical feature order on ties
    def key(name):
        return (-scores[name], FEATURE_INDEX.get(name, len(FEATURE_NAMES)), name)
    return sorted(scores, key=key)


def mdi_importance(model: ForestModel) -> ImportanceReport:
    """Mean decrease in impurity, summed over all trees and normalized to 1."""
    totals = np.zeros(model.n_features)
    for tree in model.trees:
        if tree.impurity_decrease is None:
            raise DataError("model has no recorded split statistics")
        internal = tree.feature >= 0
        np.add.at(totals, tree.feature[internal], tree.impurity_decrease[internal])
    s = totals.sum()
    if s > 0:
        totals = totals / s
    scores = {name: float(v) for name, v in zip(model.selected_features, totals)}
    return ImportanceReport("mdi", scores, _rank(scores))


def _rmse(y, p):
    return float(np.sqrt(np.mean((p - y) ** 2)))


def permutation_importance(model: ForestModel, X_test, y_test, repeats: int = 5,
                           seed: int = 0) -> ImportanceReport:
    """Mean increase in held-out RMSE when one column is shuffled.

    ``X_test`` holds raw rows in the model's feature order.  Each repeat
    draws one permutation shared by all columns, so a feature's score with
    ``repeats=1`` uses the first permutation of a ``repeats=10`` run.
    """
    X = np.asarray(X_test, dtype=np.float64)
    y = np.asarray(y_test, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("permutation importance needs a non-empty test set")
    if X.shape[0] != y.shape[0]:
        raise DataError("X_test and y_test lengths differ")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    baseline = _rmse(y, predict_matrix(model, X))
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(X.shape[0]) for _ in range(repeats)]
    scores = {}
    for j, name in enumerate(model.selected_features):
        deltas = []
        for perm in perms:
            Xp = X.copy()
            Xp[:, j] = X[perm, j]
            deltas.append(_rmse(y, predict_matrix(model, Xp)) - baseline)
        scores[name] = float(np.mean(deltas))
    return ImportanceReport("permutation", scores, _rank(scores))


@dataclass
class SelectionSweep:
    ks: list[int]
    rmse: list[float]
    mae: list[float]
    r2: list[Optional[float]]
    chosen_k: int
    chosen_features: list[str]
    ranking: list[str] = field(default_factory=list)


def sweep_top_k(X, y, ranking: Sequence[str], k_range=range(5, 19), *, groups=None,
                split=None, params: ForestParams = ForestParams(), seed: int = 0,
                feature_names: Sequence[str] = FEATURE_NAMES, target_name: str = "f1",
                threads: int = 1) -> SelectionSweep:
    """Cross-validate a forest on the top-k ranked features for every k.

    ``X`` has columns in ``feature_names`` order.  The chosen k has the
    lowest RMSE, the smaller k on ties.
    """
    from .evaluation import SplitSpec, cross_validate

    split = split or SplitSpec()
    ranking = list(ranking)
    if set(ranking) != set(feature_names):
        raise DataError("ranking must cover every feature exactly once")
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1 or ks[-1] > len(feature_names):
        raise DataError(f"k must lie in [1, {len(feature_names)}], got {ks}")
    X = np.asarray(X, dtype=np.float64)
    col = {n: i for i, n in enumerate(feature_names)}
    rmse, mae, r2 = [], [], []
    for k in ks:
        names = ranking[:k]
        Xk = X[:, [col[n] for n in names]]
        res = cross_validate(Xk, y, groups, split, params, feature_names=names,
                             target_name=target_name, threads=threads)
        rmse.append(res.overall.rmse)
        mae.append(res.overall.mae)
        r2.append(res.overall.r2)
    best = min(range(len(ks)), key=lambda i: (rmse[i], ks[i]))
    return SelectionSweep(ks, rmse, mae, r2, ks[best], ranking[:ks[best]], ranking)


def write_importance(report: ImportanceReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "feature", "score", "method"])
        for i, name in enumerate(report.ranking, start=1):
            w.writerow([i, name, repr(report.scores[name]), report.method])


def write_sweep(sweep: SelectionSweep, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "rmse", "mae", "r2", "chosen", "features"])
        for k, a, b, c in zip(sweep.ks, sweep.rmse, sweep.mae, sweep.r2):
            w.writerow([k, repr(a), repr(b), "nan" if c is None else repr(c),
                        int(k == sweep.chosen_k), ";".join(sweep.ranking[:k])])
