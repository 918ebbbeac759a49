"""CART regression trees and a bagged random-forest regressor.

Trees are stored as flat node arrays in creation order.  A node with
``feature == -1`` is a leaf; otherwise rows with ``x[feature] <= threshold``
go to ``left`` and the rest to ``right``.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ModelFileError
from .features import FEATURE_NAMES, FeatureVector, Standardizer, fit_standardizer, transform

MODEL_FORMAT = "detscore-forest"
MODEL_VERSION = 1
TARGETS = ("f1", "precision", "recall")


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    # "all" or "third" (p/3 candidate features per split, at least one)
    max_features: str = "all"
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_features not in ("all", "third"):
            raise ValueError(f"max_features must be 'all' or 'third', got {self.max_features!r}")


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    # Weighted impurity decrease (parent SSE minus children SSE) per internal node.
    impurity_decrease: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for each row of standardized ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r, n, fa = rows[active], node[active], f[active]
            go_left = X[r, fa] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass
class ForestModel:
    trees: list[Tree]
    standardizer: Standardizer
    selected_features: list[str]
    params: ForestParams = field(default_factory=ForestParams)
    seed: int = 0
    target_name: str = "f1"

    @property
    def n_features(self) -> int:
        return len(self.selected_features)


# ---------------------------------------------------------------------------
# tree growing


def best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int], min_samples_leaf: int = 1):
    """Best variance-reducing split of one node.

    Returns ``(feature, threshold, gain)`` or ``None`` when no valid split
    with positive gain exists.  ``gain`` is the drop in summed squared error.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    m = y.shape[0]
    if m < 2 * min_samples_leaf:
        return None
    features = np.asarray(sorted(features), dtype=np.int64)
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    yc = y - y.mean()
    ys = yc[order]
    full = np.cumsum(ys, axis=0)
    tot = full[-1]
    csum = full[:-1]
    csq = np.cumsum(ys * ys, axis=0)[:-1]
    tot_sq = float(np.dot(yc, yc))
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    sse_left = csq - csum * csum / n_left
    sse_right = (tot_sq - csq) - (tot - csum) ** 2 / n_right
    gain = tot_sq - sse_left - sse_right

    valid = xs[:-1] < xs[1:]
    if min_samples_leaf > 1:
        pos = np.arange(1, m)[:, None]
        valid &= (pos >= min_samples_leaf) & (m - pos >= min_samples_leaf)
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()  # feature-major, threshold ascending within a feature
    k = int(np.argmax(flat))
    g = flat[k]
    if not np.isfinite(g) or g <= 0:
        return None
    col, i = divmod(k, m - 1)
    lo, hi = xs[i, col], xs[i + 1, col]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(features[col]), float(thr), float(g)


def fit_tree(X, y, rng: Optional[np.random.Generator] = None, params: ForestParams = ForestParams()) -> Tree:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if y.shape[0] == 0:
        raise DataError("cannot fit a tree on empty input")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in training data")
    n_features = X.shape[1]
    if params.max_features == "third":
        if rng is None:
            raise ValueError("max_features='third' needs an rng")
        n_try = max(1, n_features // 3)
    else:
        n_try = n_features

    feature, threshold, left, right, value, n_samples, decrease = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        n_samples.append(len(idx))
        decrease.append(0.0)
        return len(feature) - 1

    root = new_node(np.arange(y.shape[0]))
    stack = [(root, np.arange(y.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if (len(idx) < params.min_samples_split
                or (params.max_depth is not None and depth >= params.max_depth)
                or yn.max() == yn.min()):
            continue
        if n_try < n_features:
            cand = rng.choice(n_features, size=n_try, replace=False)
        else:
            cand = range(n_features)
        split = best_split(X[idx], yn, cand, params.min_samples_leaf)
        if split is None:
            continue
        f, thr, gain = split
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node], decrease[node] = f, thr, gain
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        n_samples=np.array(n_samples, dtype=np.int64),
        impurity_decrease=np.array(decrease, dtype=np.float64),
    )


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Independent stream for one tree, keyed by (seed, tree index)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(tree_index),)))


def _build_one(Xs, y, params, seed, t):
    rng = tree_rng(seed, t)
    if params.bootstrap:
        sample = rng.integers(0, y.shape[0], size=y.shape[0])
        return fit_tree(Xs[sample], y[sample], rng, params)
    return fit_tree(Xs, y, rng, params)


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0, *,
               feature_names: Sequence[str] = FEATURE_NAMES, target_name: str = "f1",
               threads: int = 1) -> ForestModel:
    """Fit a standardizer on ``X`` then ``params.n_trees`` trees on bootstrap samples.

    ``X`` holds raw (unstandardized) values for ``feature_names`` in that
    column order.  The result does not depend on ``threads``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise DataError(f"need at least 2 training rows, got {X.shape[0]}")
    if X.shape[1] != len(feature_names):
        raise DataError(f"X has {X.shape[1]} columns but {len(feature_names)} feature names")
    if target_name not in TARGETS:
        raise DataError(f"unknown target {target_name!r}")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    std = fit_standardizer(X)
    Xs = transform(std, X)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda t: _build_one(Xs, y, params, seed, t), range(params.n_trees)))
    else:
        trees = [_build_one(Xs, y, params, seed, t) for t in range(params.n_trees)]
    return ForestModel(trees, std, list(feature_names), params, int(seed), target_name)


# ---------------------------------------------------------------------------
# prediction


def predict_matrix(model: ForestModel, X) -> np.ndarray:
    """Predictions for raw rows whose columns follow ``model.selected_features``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DataError(f"expected {model.n_features} columns, got {X.shape[1]}")
    Xs = transform(model.standardizer, X)
    total = np.zeros(X.shape[0])
    # sequential accumulation keeps each row's sum independent of batch shape
    for tree in model.trees:
        total += tree.predict(Xs)
    return total / len(model.trees)


def predict(model: ForestModel, x) -> float:
    """Prediction for one image; ``x`` is a FeatureVector or a name->value mapping."""
    if isinstance(x, FeatureVector):
        row = x.select(model.selected_features)
    else:
        missing = [n for n in model.selected_features if n not in x]
        if missing:
            raise DataError(f"missing feature(s) {missing}")
        row = np.array([x[n] for n in model.selected_features], dtype=np.float64)
    return float(predict_matrix(model, row[None, :])[0])


def predict_vectors(model: ForestModel, vectors: Sequence[FeatureVector]) -> np.ndarray:
    if not vectors:
        return np.empty(0)
    return predict_matrix(model, np.vstack([v.select(model.selected_features) for v in vectors]))


# ---------------------------------------------------------------------------
# serialization

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value", "n_samples", "impurity_decrease")


def model_to_dict(model: ForestModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "target_name": model.target_name,
        "seed": model.seed,
        "params": asdict(model.params),
        "selected_features": list(model.selected_features),
        "standardizer": {"mean": model.standardizer.mean.tolist(),
                         "scale": model.standardizer.scale.tolist()},
        "trees": [{name: getattr(t, name).tolist() for name in _TREE_FIELDS} for t in model.trees],
    }


def model_to_bytes(model: ForestModel) -> bytes:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_checksum(model: ForestModel) -> str:
    return hashlib.sha256(model_to_bytes(model)).hexdigest()


def model_from_dict(doc) -> ForestModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFileError("not a forest model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFileError(f"unsupported model format version {doc.get('version')!r} "
                             f"(this build reads version {MODEL_VERSION})")
    try:
        std = Standardizer(np.array(doc["standardizer"]["mean"], dtype=np.float64),
                           np.array(doc["standardizer"]["scale"], dtype=np.float64))
        trees = []
        for raw in doc["trees"]:
            arrays = {}
            for name in _TREE_FIELDS:
                dtype = np.float64 if name in ("threshold", "value", "impurity_decrease") else np.int64
                arrays[name] = np.array(raw[name], dtype=dtype)
            sizes = {a.shape for a in arrays.values()}
            if len(sizes) != 1 or not next(iter(sizes)) or len(next(iter(sizes))) != 1:
                raise ModelFileError("tree arrays have inconsistent lengths")
            trees.append(Tree(**arrays))
        model = ForestModel(trees, std, list(doc["selected_features"]),
                            ForestParams(**doc["params"]), int(doc["seed"]), doc["target_name"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"corrupt model file: {exc}") from exc
    if not trees or std.mean.shape[0] != model.n_features:
        raise ModelFileError("corrupt model file: inconsistent contents")
    return model


def save_model(model: ForestModel, path) -> None:
    try:
        Path(path).write_bytes(model_to_bytes(model))
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def load_model(path) -> ForestModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_bytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt model file {path}: {exc}") from exc
    return model_from_dict(doc)
