import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box, det, random_record, record
from detscore.detection import MatchConfig
from detscore.errors import DataError, GeometryError, NotFittedError
from detscore.features import (FEATURE_NAMES, FeatureOptions, FeatureVector, confidence_histogram,
                               extract_features, features_from_detections, fit_standardizer,
                               heywood_circularity, transform)
from detscore.ingest import Detection, ImageRecord
from oracles import direct_features


def test_canonical_header():
    assert ",".join(FEATURE_NAMES) == (
        "counts_0.1,counts_0.2,counts_0.3,counts_0.4,counts_0.5,counts_0.6,counts_0.7,"
        "counts_0.8,counts_0.9,area_ratio,avg_conf,std_conf,avg_frac_size,std_frac_size,"
        "avg_circularity,std_circularity,n_defects,image_conf")


def test_histogram_direct_binning():
    h = confidence_histogram([0.15, 0.95, 0.92])
    assert h[0] == pytest.approx(1 / 3) and h[8] == pytest.approx(2 / 3)
    assert h[1:8] == [0.0] * 7


def test_histogram_empty():
    assert confidence_histogram([]) == [0.0] * 9


def test_histogram_edges_are_left_closed():
    h = confidence_histogram([0.1, 0.2, 0.3, 0.6, 0.7, 0.9, 1.0], count_mode="raw")
    assert h == [1, 1, 1, 0, 0, 1, 1, 0, 2]


def test_histogram_raw_counts():
    assert confidence_histogram([0.15, 0.95, 0.92], count_mode="raw")[8] == 2.0


def test_histogram_uniform_scores_near_one_ninth():
    rng = np.random.default_rng(2024)
    h = confidence_histogram(rng.uniform(0.1, 1.0, 1000))
    sigma = math.sqrt((1 / 9) * (8 / 9) / 1000)
    for frac in h:
        assert abs(frac - 1 / 9) < 3 * sigma


def test_circularity_of_near_circle():
    poly = [(math.cos(2 * math.pi * k / 360), math.sin(2 * math.pi * k / 360)) for k in range(360)]
    assert heywood_circularity(poly) == pytest.approx(1.0, abs=1e-4)


def test_circularity_of_unit_square():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert heywood_circularity(sq) == pytest.approx(4 / (2 * math.sqrt(math.pi)), abs=1e-12)
    assert heywood_circularity(sq) == pytest.approx(1.1284, abs=1e-4)


def test_circularity_box_fallback_square_is_circle():
    assert heywood_circularity(box=box(3, 3, 7, 7)) == pytest.approx(1.0, abs=1e-6)


def test_circularity_box_fallback_elongated_exceeds_one():
    assert heywood_circularity(box=box(0, 0, 40, 5)) > 1.2


def test_circularity_degenerate_polygon():
    with pytest.raises(GeometryError):
        heywood_circularity([(0, 0), (1, 1), (2, 2)])


def test_zero_detections_all_zero():
    fv = extract_features(record([det(0, 0, 5, 5, 0.05)], None))
    assert np.all(fv.values == 0) and fv["n_defects"] == 0


def test_single_full_image_detection():
    fv = extract_features(record([det(0, 0, 100, 100, 0.9)], None))
    assert fv["area_ratio"] == 1.0
    assert fv["avg_conf"] == 0.9 and fv["std_conf"] == 0.0
    assert fv["avg_frac_size"] == 1.0
    assert fv["image_conf"] == pytest.approx(0.9, abs=1e-15)
    assert fv["counts_0.9"] == 1.0
    assert fv["n_defects"] == 1.0


def test_polygon_area_used_for_area_ratio():
    tri = ((0.0, 0.0), (10.0, 0.0), (0.0, 10.0))
    fv = extract_features(record([det(0, 0, 10, 10, 0.5, tri)], None))
    assert fv["area_ratio"] == pytest.approx(50 / 10000)
    fv = extract_features(record([det(0, 0, 10, 10, 0.5)], None))
    assert fv["area_ratio"] == pytest.approx(100 / 10000)


def test_area_size_mode():
    fv = extract_features(record([det(0, 0, 50, 50, 0.5)], None), options=FeatureOptions(size_mode="area"))
    assert fv["avg_frac_size"] == pytest.approx(0.25)
    fv = extract_features(record([det(0, 0, 50, 50, 0.5)], None))
    assert fv["avg_frac_size"] == pytest.approx(0.5)


def test_box_shape_source_ignores_polygon():
    tri = ((0.0, 0.0), (10.0, 0.0), (0.0, 10.0))
    fv = extract_features(record([det(0, 0, 10, 10, 0.5, tri)], None),
                          options=FeatureOptions(shape_source="box"))
    assert fv["avg_circularity"] == pytest.approx(1.0, abs=1e-6)


def test_ground_truth_not_read():
    a = record([det(1, 1, 5, 5, 0.7)], None)
    b = record([det(1, 1, 5, 5, 0.7)], [])
    assert extract_features(a) == extract_features(b)


@pytest.mark.parametrize("seed", range(20))
def test_matches_direct_formulas(seed):
    rng = np.random.default_rng(seed)
    rec = random_record(rng)
    fv = extract_features(rec)
    ref = direct_features([(d.box.x, d.box.y, d.box.w, d.box.h, d.score, d.polygon)
                           for d in rec.detections], rec.width, rec.height)
    for name in FEATURE_NAMES:
        assert fv[name] == pytest.approx(ref[name], rel=1e-9, abs=1e-9), name


def _permuted(rec, perm):
    return ImageRecord(rec.id, rec.width, rec.height, rec.group,
                       tuple(rec.detections[i] for i in perm), rec.ground_truth)


def _scaled(rec, k):
    dets = []
    for d in rec.detections:
        poly = None if d.polygon is None else tuple((x * k, y * k) for x, y in d.polygon)
        dets.append(Detection(d.box.scaled(k), d.score, poly))
    return ImageRecord(rec.id, rec.width * k, rec.height * k, rec.group, tuple(dets), rec.ground_truth)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    rec = random_record(rng)
    perm = rng.permutation(len(rec.detections))
    assert extract_features(_permuted(rec, perm)) == extract_features(rec)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.25, 0.5, 2.0, 4.0]))
@settings(max_examples=100, deadline=None)
def test_scale_covariance(seed, k):
    rng = np.random.default_rng(seed)
    rec = random_record(rng)
    a, b = extract_features(rec), extract_features(_scaled(rec, k))
    for name in ("area_ratio", "avg_frac_size", "std_frac_size", "avg_conf", "std_conf",
                 "image_conf", "n_defects", *FEATURE_NAMES[:9]):
        assert a[name] == b[name], name


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_bins_sum_to_one(seed):
    rec = random_record(np.random.default_rng(seed))
    fv = extract_features(rec)
    s = sum(fv.values[:9])
    if fv["n_defects"] > 0:
        assert s == pytest.approx(1.0, abs=1e-12)
    else:
        assert s == 0.0
    assert np.all(np.isfinite(fv.values))


def test_lower_confidence_threshold_keeps_more():
    rec = record([det(0, 0, 5, 5, 0.05), det(10, 10, 5, 5, 0.5)], None)
    assert extract_features(rec, MatchConfig(confidence_threshold=0.0))["n_defects"] == 2
    assert extract_features(rec)["n_defects"] == 1


def test_feature_vector_construction():
    with pytest.raises(DataError):
        FeatureVector(np.zeros(5))
    fv = FeatureVector.from_mapping({n: float(i) for i, n in enumerate(FEATURE_NAMES)})
    assert fv["image_conf"] == 17.0
    assert list(fv.select(["n_defects", "counts_0.1"])) == [16.0, 0.0]


# standardizer


def test_standardize_known_column():
    std = fit_standardizer([[1.0], [2.0], [3.0]])
    out = transform(std, [[1.0], [2.0], [3.0]])[:, 0]
    s = math.sqrt(2 / 3)
    assert out == pytest.approx([-1 / s, 0.0, 1 / s], abs=1e-12)
    assert out[2] == pytest.approx(1.2247, abs=1e-4)


def test_constant_column_maps_to_zero():
    std = fit_standardizer([[5.0, 1.0], [5.0, 2.0]])
    assert np.all(transform(std, [[5.0, 0.0], [7.0, 3.0]])[:, 0] == 0.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_standardized_moments(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4)) * rng.uniform(0, 5, 4) + rng.normal(size=4)
    X[:, 3] = 2.0
    Z = transform(fit_standardizer(X), X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-10)
    sd = Z.std(axis=0)
    assert np.allclose(sd[:3], 1.0) and sd[3] == 0.0


def test_transform_before_fit():
    with pytest.raises(NotFittedError):
        transform(None, [[1.0]])


def test_column_mismatch():
    with pytest.raises(DataError):
        transform(fit_standardizer([[1.0, 2.0]]), [[1.0]])


def test_fit_on_train_only_differs_from_fit_on_all():
    train = np.array([[0.0], [1.0], [2.0]])
    test = np.array([[10.0], [12.0]])
    a = transform(fit_standardizer(train), test)
    b = transform(fit_standardizer(np.vstack([train, test])), test)
    assert not np.allclose(a, b)
