import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from detscore.ingest import BoundingBox, Detection, GroundTruthObject, ImageRecord  # noqa: E402


def box(x, y, w, h):
    return BoundingBox(float(x), float(y), float(w), float(h))


def det(x, y, w, h, score, polygon=None):
    return Detection(box(x, y, w, h), float(score), polygon)


def gt(x, y, w, h):
    return GroundTruthObject(box(x, y, w, h))


def record(dets=(), gts=(), width=100.0, height=100.0, rid="img", group="g"):
    return ImageRecord(rid, float(width), float(height), group, tuple(dets),
                       None if gts is None else tuple(gts))


def random_record(rng, n_max=8, width=640.0, height=480.0, rid="r", polygons=True):
    """Random record with detections (some with polygons) fully inside the image."""
    dets = []
    for _ in range(int(rng.integers(0, n_max + 1))):
        w = float(rng.uniform(2, width / 4))
        h = float(rng.uniform(2, height / 4))
        x = float(rng.uniform(0, width - w))
        y = float(rng.uniform(0, height - h))
        poly = None
        if polygons and rng.uniform() < 0.5:
            k = int(rng.integers(3, 12))
            ang = np.linspace(0, 2 * np.pi, k, endpoint=False)
            r = rng.uniform(0.6, 1.0, k)
            poly = tuple((float(x + w / 2 + w / 2 * rr * np.cos(a)),
                          float(y + h / 2 + h / 2 * rr * np.sin(a))) for a, rr in zip(ang, r))
        dets.append(det(x, y, w, h, float(rng.uniform(0, 1)), poly))
    return record(dets, (), width, height, rid)


def random_instance(rng, max_boxes=6):
    ng, nd = int(rng.integers(0, max_boxes + 1)), int(rng.integers(0, max_boxes + 1))
    gts = [(float(rng.uniform(0, 80)), float(rng.uniform(0, 80)),
            float(rng.uniform(5, 25)), float(rng.uniform(5, 25))) for _ in range(ng)]
    dets = []
    for _ in range(nd):
        if gts and rng.uniform() < 0.7:
            g = gts[rng.integers(len(gts))]
            b = (max(0.0, g[0] + rng.normal(0, 6)), max(0.0, g[1] + rng.normal(0, 6)),
                 g[2] * rng.uniform(0.6, 1.5), g[3] * rng.uniform(0.6, 1.5))
        else:
            b = (float(rng.uniform(0, 80)), float(rng.uniform(0, 80)),
                 float(rng.uniform(5, 25)), float(rng.uniform(5, 25)))
        dets.append((*b, float(rng.uniform(0, 1))))
    return gts, dets


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
