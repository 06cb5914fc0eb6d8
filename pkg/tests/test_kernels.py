"""Backend parity: the compiled kernels must be indistinguishable from
the pure-Python reference, byte for byte and index for index."""

import numpy as np
import pytest

from pointsoup import kernels
from pointsoup.kernels import _fallback

native = pytest.importorskip(
    "pointsoup.kernels._native", reason="compiled kernels not built")


def _clouds(seed):
    rng = np.random.default_rng(seed)
    yield rng.uniform(0, 1000, size=(257, 3))
    # integer grid forces distance ties, the tie-break stressor
    yield rng.integers(0, 8, size=(400, 3)).astype(np.float64)
    yield np.repeat(rng.integers(0, 5, size=(40, 3)), 5, axis=0).astype(float)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kdtree_matches_fallback(seed):
    rng = np.random.default_rng(seed + 100)
    for pts in _clouds(seed):
        q = rng.uniform(-1, 1001, size=(64, 3))
        q = np.concatenate([q, pts[:16]], axis=0)  # on-point queries
        for k in (1, 4, 17):
            k = min(k, len(pts))
            ni, nd = native.KDTree(pts).query(q, k)
            fi, fd = _fallback.KDTree(pts).query(q, k)
            np.testing.assert_array_equal(ni, fi)
            np.testing.assert_allclose(nd, fd, rtol=0, atol=0)


@pytest.mark.parametrize("seed", [0, 1])
def test_fps_matches_fallback(seed):
    for pts in _clouds(seed):
        for m in (1, 2, 7, len(pts)):
            np.testing.assert_array_equal(
                native.farthest_points(pts, m),
                _fallback.farthest_points(pts, m))


def test_self_knn_matches_fallback():
    rng = np.random.default_rng(3)
    wins = rng.integers(0, 6, size=(9, 32, 3)).astype(np.float64)
    np.testing.assert_array_equal(
        native.self_knn_batch(wins, 8), _fallback.self_knn_batch(wins, 8))


def _random_models(rng, n_symbols):
    """Random per-symbol CDF slices with escape buckets."""
    widths = rng.integers(2, 20, size=n_symbols)
    offsets = np.zeros(n_symbols + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(widths + 1)
    cdf = np.zeros(offsets[-1], dtype=np.uint32)
    for i in range(n_symbols):
        w = int(widths[i])
        pmf = rng.integers(1, 1000, size=w + 1).astype(np.float64)
        freq = np.floor(pmf / pmf.sum() * kernels.TOTAL).astype(np.int64)
        freq = np.maximum(freq, 1)
        freq[0] += kernels.TOTAL - freq.sum()
        cdf[offsets[i]:offsets[i + 1]] = np.cumsum(freq)
    lows = rng.integers(-50, 50, size=n_symbols).astype(np.int64)
    return cdf, offsets, lows, widths


@pytest.mark.parametrize("seed", range(4))
def test_symbol_coder_matches_fallback(seed):
    rng = np.random.default_rng(seed + 7)
    n = int(rng.integers(1, 400))
    cdf, offsets, lows, widths = _random_models(rng, n)
    symbols = lows + rng.integers(0, widths)
    symbols[rng.random(n) < 0.1] = rng.integers(-2**31, 2**31)  # escapes
    blob_n = native.encode_symbols(symbols, cdf, offsets, lows)
    blob_f = _fallback.encode_symbols(symbols, cdf, offsets, lows)
    assert blob_n == blob_f
    np.testing.assert_array_equal(
        native.decode_symbols(blob_n, cdf, offsets, lows), symbols)
    np.testing.assert_array_equal(
        _fallback.decode_symbols(blob_n, cdf, offsets, lows), symbols)


@pytest.mark.parametrize("seed", range(3))
def test_adaptive_bit_coder_matches_fallback(seed):
    rng = np.random.default_rng(seed + 40)
    n = int(rng.integers(1, 6000))
    n_ctx = int(rng.integers(1, 12))
    bits = (rng.random(n) < 0.3).astype(np.uint8)
    ctx = rng.integers(0, n_ctx, size=n)
    blob_n = native.encode_bits_adaptive(bits, ctx, n_ctx)
    blob_f = _fallback.encode_bits_adaptive(bits, ctx, n_ctx)
    assert blob_n == blob_f
    np.testing.assert_array_equal(
        native.decode_bits_adaptive(blob_n, ctx, n_ctx), bits)
    np.testing.assert_array_equal(
        _fallback.decode_bits_adaptive(blob_n, ctx, n_ctx), bits)


def test_selected_backend_is_native_by_default():
    assert kernels.BACKEND in ("native", "python")
    assert native.BACKEND == "native"


def test_empty_symbol_stream_round_trip():
    cdf = np.array([kernels.TOTAL], dtype=np.uint32)
    offsets = np.array([0], dtype=np.int64)
    lows = np.zeros(0, dtype=np.int64)
    for mod in (native, _fallback):
        blob = mod.encode_symbols(np.zeros(0, dtype=np.int64)[:0],
                                  cdf[:0], offsets, lows)
        out = mod.decode_symbols(blob, cdf[:0], offsets, lows)
        assert out.shape == (0,)
