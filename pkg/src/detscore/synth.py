"""Seeded synthetic (ground truth, detections) generator.

Objects are faceted near-circular polygons.  A simulated detector finds each
object with probability ``1 - p_fn``, jitters its box, and scores it from a
high-mean Beta; it also adds Poisson(``lambda_fp``) spurious boxes scored
from a low-mean Beta.  Scores are mapped onto [0.1, 1] so no true detection
falls under the default confidence threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .detection import MatchConfig, match_image
from .errors import DataError
from .ingest import BoundingBox, Dataset, Detection, GroundTruthObject, ImageRecord


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 100
    width: float = 1024.0
    height: float = 1024.0
    objects_lambda: float = 6.0
    # fractional linear size, log-uniform in [size_min, size_max]
    size_min: float = 0.02
    size_max: float = 0.12
    p_fn: float = 0.1
    lambda_fp: float = 0.5
    jitter: float = 2.0  # pixels, std of box-edge noise
    tp_conf_a: float = 8.0
    tp_conf_b: float = 2.0
    fp_conf_a: float = 2.0
    fp_conf_b: float = 6.0
    polygons: bool = True
    group: str = "synthetic"
    id_prefix: str = "img"
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if not 0.0 <= self.p_fn <= 1.0:
            raise ValueError("p_fn must lie in [0, 1]")
        for name in ("objects_lambda", "lambda_fp", "jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.size_min <= self.size_max < 1:
            raise ValueError("need 0 < size_min <= size_max < 1")
        for name in ("tp_conf_a", "tp_conf_b", "fp_conf_a", "fp_conf_b", "width", "height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth option(s): {sorted(unknown)}")
        return cls(**d)


def _faceted_polygon(rng, cx, cy, rx, ry, n_vertices):
    # evenly spread angles with radial wobble keep the polygon simple
    angles = np.linspace(0, 2 * math.pi, n_vertices, endpoint=False) + rng.uniform(0, 2 * math.pi)
    radius = rng.uniform(0.85, 1.0, n_vertices)
    return tuple((float(cx + rx * r * math.cos(a)), float(cy + ry * r * math.sin(a)))
                 for a, r in zip(angles, radius))


def _polygon_box(polygon):
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    return BoundingBox(min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))


def _sample_shape(rng, cfg):
    """One object: (box, polygon-or-None), fully inside the image."""
    frac = math.exp(rng.uniform(math.log(cfg.size_min), math.log(cfg.size_max)))
    side = frac * math.sqrt(cfg.width * cfg.height)
    aspect = math.exp(rng.uniform(-0.25, 0.25))
    w = min(side * aspect, cfg.width * 0.9)
    h = min(side / aspect, cfg.height * 0.9)
    cx = rng.uniform(w / 2, cfg.width - w / 2)
    cy = rng.uniform(h / 2, cfg.height - h / 2)
    if cfg.polygons:
        poly = _faceted_polygon(rng, cx, cy, w / 2, h / 2, int(rng.integers(8, 17)))
        return _polygon_box(poly), poly
    return BoundingBox(cx - w / 2, cy - h / 2, w, h), None


def _score(rng, a, b):
    return float(0.1 + 0.9 * rng.beta(a, b))


def _jittered(rng, box, poly, cfg):
    if cfg.jitter == 0:
        return box, poly
    dx, dy = rng.normal(0, cfg.jitter, 2)
    x1 = min(max(box.x + dx, 0.0), cfg.width - 2.0)
    y1 = min(max(box.y + dy, 0.0), cfg.height - 2.0)
    w = min(max(box.w + rng.normal(0, cfg.jitter), 2.0), cfg.width - x1)
    h = min(max(box.h + rng.normal(0, cfg.jitter), 2.0), cfg.height - y1)
    new = BoundingBox(x1, y1, w, h)
    if poly is None:
        return new, None
    # map the outline affinely into the jittered box
    sx, sy = new.w / box.w, new.h / box.h
    moved = tuple((new.x + (px - box.x) * sx, new.y + (py - box.y) * sy) for px, py in poly)
    return _polygon_box(moved), moved


def generate_image(rng: np.random.Generator, cfg: SynthConfig, image_id: str) -> ImageRecord:
    gts = []
    for _ in range(int(rng.poisson(cfg.objects_lambda))):
        box, poly = _sample_shape(rng, cfg)
        gts.append(GroundTruthObject(box, poly))
    dets = []
    for gt in gts:
        if rng.uniform() < cfg.p_fn:
            continue
        box, poly = _jittered(rng, gt.box, gt.polygon, cfg)
        dets.append(Detection(box, _score(rng, cfg.tp_conf_a, cfg.tp_conf_b), poly))
    for _ in range(int(rng.poisson(cfg.lambda_fp))):
        box, poly = _sample_shape(rng, cfg)
        dets.append(Detection(box, _score(rng, cfg.fp_conf_a, cfg.fp_conf_b), poly))
    order = rng.permutation(len(dets))
    dets = [dets[i] for i in order]
    return ImageRecord(image_id, float(cfg.width), float(cfg.height), cfg.group,
                       tuple(dets), tuple(gts))


def generate(cfg: SynthConfig) -> Dataset:
    images = []
    for i in range(cfg.n_images):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
        images.append(generate_image(rng, cfg, f"{cfg.id_prefix}_{i:05d}"))
    return Dataset(tuple(images), f"synthetic seed={cfg.seed}")


# ---------------------------------------------------------------------------
# regression benchmark


@dataclass(frozen=True)
class FidelityLevel:
    """Knob ranges for one group; each image draws a difficulty u ~ U(0, 1)
    and interpolates every knob between its ``easy`` and ``hard`` value."""

    name: str
    p_fn: tuple[float, float]
    lambda_fp: tuple[float, float]
    jitter: tuple[float, float] = (1.0, 1.0)
    tp_conf_a: tuple[float, float] = (8.0, 8.0)
    fp_conf_a: tuple[float, float] = (2.0, 2.0)
    n_images: int = 200


DEFAULT_LEVELS = (
    FidelityLevel("high", p_fn=(0.0, 0.3), lambda_fp=(0.0, 1.5), jitter=(1.0, 3.0),
                  tp_conf_a=(12.0, 6.0)),
    FidelityLevel("mid", p_fn=(0.15, 0.6), lambda_fp=(0.5, 4.0), jitter=(2.0, 6.0),
                  tp_conf_a=(8.0, 3.0)),
    FidelityLevel("low", p_fn=(0.45, 0.95), lambda_fp=(2.0, 8.0), jitter=(4.0, 10.0),
                  tp_conf_a=(4.0, 1.5)),
)


def _lerp(pair, u):
    return pair[0] + (pair[1] - pair[0]) * u


def generate_regression_benchmark(base: SynthConfig = SynthConfig(),
                                  levels: Sequence[FidelityLevel] = DEFAULT_LEVELS,
                                  min_per_bin: int = 10,
                                  match: MatchConfig = MatchConfig()) -> Dataset:
    """Dataset whose true per-image F1 spans [0, 1]; group label = fidelity level.

    Raises ``DataError`` if the levels are fewer than three or indistinct, or
    if some 0.2-wide F1 bin gets fewer than ``min_per_bin`` images.
    """
    if len(levels) < 3:
        raise DataError(f"need at least 3 fidelity levels, got {len(levels)}")
    knobs = ("p_fn", "lambda_fp", "jitter", "tp_conf_a", "fp_conf_a")
    if all(len({v for l in levels for v in getattr(l, k)}) == 1 for k in knobs):
        raise DataError("degenerate span: fidelity levels have no knob gradient")
    images = []
    for li, level in enumerate(levels):
        for i in range(level.n_images):
            rng = np.random.default_rng(np.random.SeedSequence(base.seed, spawn_key=(li, i)))
            u = rng.uniform()
            cfg = replace(
                base,
                p_fn=_lerp(level.p_fn, u),
                lambda_fp=_lerp(level.lambda_fp, u),
                jitter=_lerp(level.jitter, u),
                tp_conf_a=_lerp(level.tp_conf_a, u),
                fp_conf_a=_lerp(level.fp_conf_a, u),
                group=level.name,
            )
            images.append(generate_image(rng, cfg, f"{level.name}_{i:05d}"))
    ds = Dataset(tuple(images), f"synthetic benchmark seed={base.seed}")
    f1 = np.array([match_image(r, match).f1 for r in ds.images])
    counts = np.histogram(np.clip(f1, 0, 1), bins=[0, 0.2, 0.4, 0.6, 0.8, 1.0000001])[0]
    if counts.min() < min_per_bin:
        raise DataError(f"F1 bins under-filled ({counts.tolist()}); "
                        f"need >= {min_per_bin} per 0.2-wide bin")
    return ds


def shifted_levels(levels: Sequence[FidelityLevel] = DEFAULT_LEVELS) -> tuple[FidelityLevel, ...]:
    """Benchmark variant whose last group has an over-confident detector.

    Spurious boxes in that group score like true ones, so its feature/F1
    relation differs from the other groups.
    """
    out = list(levels)
    last = out[-1]
    out[-1] = replace(last, name=f"{last.name}_shifted", fp_conf_a=(8.0, 8.0))
    return tuple(out)


def config_to_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
