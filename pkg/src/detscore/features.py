"""Label-free per-image features computed from detector output, and z-scoring.

All sums use ``math.fsum`` so the result does not depend on the order of
the detection list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .detection import MatchConfig, retained
from .errors import DataError, GeometryError, NotFittedError
from .ingest import BoundingBox, Detection, ImageRecord, polygon_area

CONFIDENCE_BIN_EDGES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

FEATURE_NAMES = (
    "counts_0.1", "counts_0.2", "counts_0.3", "counts_0.4", "counts_0.5",
    "counts_0.6", "counts_0.7", "counts_0.8", "counts_0.9",
    "area_ratio",
    "avg_conf", "std_conf",
    "avg_frac_size", "std_frac_size",
    "avg_circularity", "std_circularity",
    "n_defects",
    "image_conf",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


class FeatureVector:
    """The 18 canonical features of one image, indexable by name."""

    __slots__ = ("values",)
    names = FEATURE_NAMES

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(FEATURE_NAMES),):
            raise DataError(f"expected {len(FEATURE_NAMES)} feature values, got shape {values.shape}")
        self.values = values

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "FeatureVector":
        missing = [n for n in FEATURE_NAMES if n not in mapping]
        if missing:
            raise DataError(f"missing feature(s): {missing}")
        return cls([mapping[n] for n in FEATURE_NAMES])

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_INDEX[name]])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(FEATURE_NAMES, self.values)}

    def select(self, names: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.values[FEATURE_INDEX[n]] for n in names])
        except KeyError as exc:
            raise DataError(f"unknown feature name {exc.args[0]!r}") from None

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __repr__(self):
        inner = ", ".join(f"{n}={v!r}" for n, v in self.as_dict().items())
        return f"FeatureVector({inner})"


@dataclass(frozen=True)
class FeatureOptions:
    # "linear": sqrt(box area / image area); "area": box area / image area
    size_mode: str = "linear"
    # "fraction": bin count / retained count; "raw": bin count
    count_mode: str = "fraction"
    # "polygon": use the outline when present; "box": always use the box ellipse
    shape_source: str = "polygon"

    def __post_init__(self):
        if self.size_mode not in ("linear", "area"):
            raise ValueError(f"size_mode must be 'linear' or 'area', got {self.size_mode!r}")
        if self.count_mode not in ("fraction", "raw"):
            raise ValueError(f"count_mode must be 'fraction' or 'raw', got {self.count_mode!r}")
        if self.shape_source not in ("polygon", "box"):
            raise ValueError(f"shape_source must be 'polygon' or 'box', got {self.shape_source!r}")


def confidence_histogram(scores: Iterable[float], count_mode: str = "fraction") -> list[float]:
    """Share of scores in [0.1,0.2), ..., [0.8,0.9), [0.9,1.0].

    Scores under 0.1 (only possible with a lowered confidence threshold) go
    to the first bin.
    """
    counts = [0] * len(CONFIDENCE_BIN_EDGES)
    n = 0
    for s in scores:
        i = int(np.searchsorted(CONFIDENCE_BIN_EDGES, s, side="right")) - 1
        counts[max(i, 0)] += 1
        n += 1
    if n == 0 or count_mode == "raw":
        return [float(c) for c in counts]
    return [c / n for c in counts]


def polygon_perimeter(polygon: Sequence[tuple[float, float]]) -> float:
    n = len(polygon)
    return math.fsum(
        math.hypot(polygon[(i + 1) % n][0] - polygon[i][0], polygon[(i + 1) % n][1] - polygon[i][1])
        for i in range(n)
    )


def ellipse_perimeter(a: float, b: float) -> float:
    """Ramanujan's approximation for semi-axes ``a`` and ``b``."""
    return math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))


def heywood_circularity(polygon=None, box: Optional[BoundingBox] = None) -> float:
    """Perimeter over the circumference of the equal-area circle.

    Without a polygon the box's inscribed ellipse stands in for the shape.
    """
    if polygon is not None:
        if len(polygon) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        area = polygon_area(polygon)
        if area <= 0:
            raise GeometryError("polygon has zero area")
        perimeter = polygon_perimeter(polygon)
    elif box is not None:
        if box.w <= 0 or box.h <= 0:
            raise GeometryError("box has zero area")
        a, b = box.w / 2, box.h / 2
        area = math.pi * a * b
        perimeter = ellipse_perimeter(a, b)
    else:
        raise GeometryError("need a polygon or a box")
    return perimeter / (2 * math.sqrt(math.pi * area))


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def features_from_detections(detections: Sequence[Detection], width: float, height: float,
                             options: FeatureOptions = FeatureOptions()) -> FeatureVector:
    """Features of already-thresholded detections on a ``width`` x ``height`` image."""
    n = len(detections)
    if n == 0:
        return FeatureVector(np.zeros(len(FEATURE_NAMES)))
    image_area = width * height
    use_polygon = options.shape_source == "polygon"

    scores = [d.score for d in detections]
    areas = [polygon_area(d.polygon) if d.polygon is not None else d.box.area for d in detections]
    if options.size_mode == "linear":
        sizes = [math.sqrt(d.box.area) / math.sqrt(image_area) for d in detections]
    else:
        sizes = [d.box.area / image_area for d in detections]
    circ = [heywood_circularity(d.polygon if use_polygon else None, d.box) for d in detections]

    avg_conf, std_conf = _mean_std(scores)
    avg_size, std_size = _mean_std(sizes)
    avg_circ, std_circ = _mean_std(circ)
    total_area = math.fsum(areas)
    values = confidence_histogram(scores, options.count_mode) + [
        total_area / image_area,
        avg_conf, std_conf,
        avg_size, std_size,
        avg_circ, std_circ,
        float(n),
        math.fsum(s * a for s, a in zip(scores, areas)) / total_area,
    ]
    return FeatureVector(values)


def extract_features(record: ImageRecord, cfg: MatchConfig = MatchConfig(),
                     options: FeatureOptions = FeatureOptions()) -> FeatureVector:
    kept = retained(record.detections, cfg.confidence_threshold)
    return features_from_detections(kept, record.width, record.height, options)


def feature_matrix(vectors: Iterable[FeatureVector], names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
    rows = [v.select(names) for v in vectors]
    if not rows:
        return np.empty((0, len(names)))
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Standardizer)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.scale, other.scale))


def fit_standardizer(rows) -> Standardizer:
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("standardizer needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("standardizer input has non-finite values")
    return Standardizer(X.mean(axis=0), X.std(axis=0))


def transform(std: Optional[Standardizer], rows) -> np.ndarray:
    """Z-score ``rows`` with a fitted standardizer; zero-variance columns map to 0."""
    if std is None:
        raise NotFittedError("standardizer must be fitted before transform")
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != std.mean.shape[0]:
        raise DataError(f"column mismatch: standardizer has {std.mean.shape[0]} columns, "
                        f"input has shape {X.shape}")
    safe = np.where(std.scale > 0, std.scale, 1.0)
    out = (X - std.mean) / safe
    out[:, std.scale == 0] = 0.0
    return out
