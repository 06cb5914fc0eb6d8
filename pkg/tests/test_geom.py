"""Geometry primitives against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointsoup import geom


def brute_knn(points, queries, k):
    d2 = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    idx = np.arange(points.shape[0])[None, :].repeat(queries.shape[0], 0)
    order = np.lexsort((idx, d2), axis=1)[:, :k]
    return order


def brute_fps(points, m, start=0):
    chosen = [start]
    d = ((points - points[start]) ** 2).sum(-1)
    for _ in range(m - 1):
        nxt = int(np.argmax(d))  # first max wins ties
        chosen.append(nxt)
        d = np.minimum(d, ((points - points[nxt]) ** 2).sum(-1))
    return np.array(chosen)


def brute_mean_nn(points):
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    nnd = np.sort(np.sqrt(d2.min(axis=1)))
    return float(nnd.sum() / nnd.shape[0])


def brute_chamfer(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def _cloud(rng, n, ties):
    if ties:
        return rng.integers(0, 12, size=(n, 3)).astype(np.float64)
    return rng.uniform(-5, 5, size=(n, 3))


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("ties", [False, True])
def test_knn_matches_brute_force(seed, ties):
    rng = np.random.default_rng(seed)
    pts = _cloud(rng, int(rng.integers(3, 200)), ties)
    q = _cloud(rng, 37, ties)
    k = int(rng.integers(1, len(pts) + 1))
    np.testing.assert_array_equal(geom.knn(pts, q, k), brute_knn(pts, q, k))


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("ties", [False, True])
def test_fps_matches_brute_force(seed, ties):
    rng = np.random.default_rng(10 + seed)
    pts = _cloud(rng, int(rng.integers(2, 150)), ties)
    m = int(rng.integers(1, len(pts) + 1))
    np.testing.assert_array_equal(
        geom.farthest_point_sample(pts, m), brute_fps(pts, m))


@pytest.mark.parametrize("seed", range(4))
def test_mean_nn_and_chamfer_match_brute_force(seed):
    rng = np.random.default_rng(20 + seed)
    a = _cloud(rng, 120, seed % 2 == 0)
    b = _cloud(rng, 90, False)
    assert geom.mean_nn_distance(a) == pytest.approx(
        brute_mean_nn(a), rel=1e-12)
    assert geom.chamfer_distance(a, b) == pytest.approx(
        brute_chamfer(a, b), rel=1e-12)


def test_self_query_rank_zero():
    rng = np.random.default_rng(5)
    pts = rng.uniform(size=(50, 3))
    idx = geom.knn(pts, pts, 3)
    np.testing.assert_array_equal(idx[:, 0], np.arange(50))


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e6,
                 allow_nan=False, allow_infinity=False),
       st.integers(min_value=0, max_value=2**31))
def test_mean_nn_distance_scales_linearly(s, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, size=(40, 3))
    base = geom.mean_nn_distance(pts)
    assert geom.mean_nn_distance(pts * s) == pytest.approx(
        s * base, rel=1e-12)


def test_mean_nn_distance_permutation_bit_exact():
    rng = np.random.default_rng(8)
    pts = rng.uniform(size=(200, 3))
    d = geom.mean_nn_distance(pts)
    for _ in range(5):
        perm = rng.permutation(200)
        assert geom.mean_nn_distance(pts[perm]) == d


def test_point_cloud_validation_and_immutability():
    with pytest.raises(ValueError):
        geom.as_points(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        geom.as_points(np.array([[np.nan, 0, 0]]))
    pc = geom.PointCloud(np.zeros((4, 3)))
    with pytest.raises(AttributeError):
        pc.points = np.ones((4, 3))
    assert not pc.points.flags.writeable


def test_random_sample_seeded_and_unique():
    pts = np.arange(300, dtype=np.float64).reshape(100, 3)
    a = geom.random_sample(pts, 20, seed=4)
    b = geom.random_sample(pts, 20, seed=4)
    np.testing.assert_array_equal(a, b)
    assert len(set(a.tolist())) == 20


def test_d1_psnr_identical_clouds_is_infinite():
    pts = np.random.default_rng(0).uniform(0, 1023, size=(64, 3))
    assert geom.d1_psnr(pts, pts) == np.inf
    worse = geom.d1_psnr(pts, pts + 5.0)
    assert np.isfinite(worse)


def test_chamfer_zero_on_identical_clouds():
    pts = np.random.default_rng(1).uniform(size=(33, 3))
    assert geom.chamfer_distance(pts, pts) == 0.0
