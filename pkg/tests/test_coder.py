"""Entropy-coding layer: CDF quantization, symbol streams, bone streams."""

import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointsoup import coder
from pointsoup.kernels import TOTAL


class TestQuantizeCdf:
    def test_uniform_pmf_splits_evenly(self):
        cdf = coder.quantize_cdf(np.full(4, 0.25))
        np.testing.assert_array_equal(np.diff(cdf), [TOTAL // 4] * 4)
        assert cdf[0] == 0

    @given(st.integers(min_value=0, max_value=2**31),
           st.integers(min_value=2, max_value=300))
    @settings(max_examples=60, deadline=None)
    def test_always_valid(self, seed, width):
        rng = np.random.default_rng(seed)
        pmf = rng.random(width) ** 4  # spiky, exercises tiny buckets
        cdf = coder.quantize_cdf(pmf / pmf.sum())
        assert cdf.shape == (width + 1,)
        assert cdf[0] == 0 and cdf[-1] == TOTAL
        assert np.diff(cdf).min() >= 1
        assert cdf.dtype == np.uint32

    def test_zero_probability_bucket_still_codable(self):
        cdf = coder.quantize_cdf(np.array([1.0, 0.0, 0.0]))
        assert np.diff(cdf).min() >= 1

    def test_largest_remainder_prefers_bigger_buckets(self):
        freq = np.diff(coder.quantize_cdf(np.array([0.5, 0.3, 0.2])))
        assert freq[0] > freq[1] > freq[2]


class TestSymbolStream:
    def _models(self, rng, n):
        mu = rng.normal(0, 20, size=n)
        b = rng.uniform(0.3, 15, size=n)
        return coder.laplace_models(mu, b)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_in_window(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 800))
        mu = rng.normal(0, 20, size=n)
        b = rng.uniform(0.3, 15, size=n)
        models = coder.laplace_models(mu, b)
        symbols = np.rint(rng.laplace(mu, b)).astype(np.int64)
        blob = coder.encode_symbols(symbols, models)
        np.testing.assert_array_equal(
            coder.decode_symbols(blob, models), symbols)

    def test_escape_round_trip_extremes(self):
        models = coder.laplace_models(np.zeros(4), np.full(4, 1.0))
        symbols = np.array([2**31 - 1, -2**31, 10**6, 0], dtype=np.int64)
        blob = coder.encode_symbols(symbols, models)
        np.testing.assert_array_equal(
            coder.decode_symbols(blob, models), symbols)

    def test_coded_length_near_entropy(self):
        rng = np.random.default_rng(3)
        n = 20000
        mu, b = np.zeros(n), np.full(n, 4.0)
        symbols = np.rint(rng.laplace(mu, b)).astype(np.int64)
        models = coder.laplace_models(mu, b)
        blob = coder.encode_symbols(symbols, models)
        # exact discrete mass of round(Laplace(0, 4)) on the integers
        xs = np.arange(-200, 201)

        def cdfl(x):
            z = x / 4.0
            return np.where(z < 0, 0.5 * np.exp(z), 1 - 0.5 * np.exp(-z))

        pmf = cdfl(xs + 0.5) - cdfl(xs - 0.5)
        ideal = -np.log2(pmf[np.searchsorted(xs, symbols)]).sum()
        assert len(blob) * 8 <= ideal * 1.01 + 64

    def test_feature_stream_multi_block_round_trip(self):
        rng = np.random.default_rng(9)
        n = coder.BLOCK_SYMBOLS + 1234
        mu = rng.normal(0, 5, size=n)
        b = rng.uniform(0.4, 3, size=n)
        models = coder.laplace_models(mu, b)
        symbols = np.rint(rng.laplace(mu, b)).astype(np.int64)
        blob = coder.encode_feature_stream(symbols, models)
        np.testing.assert_array_equal(
            coder.decode_feature_stream(blob, models), symbols)

    def test_feature_stream_detects_tampering(self):
        rng = np.random.default_rng(10)
        models = self._models(rng, 500)
        symbols = rng.integers(-5, 5, size=500)
        blob = bytearray(coder.encode_feature_stream(symbols, models))
        blob[len(blob) // 2] ^= 0x40
        with pytest.raises(coder.DecodeError):
            coder.decode_feature_stream(bytes(blob), models)

    def test_feature_stream_structural_errors(self):
        rng = np.random.default_rng(11)
        models = self._models(rng, 64)
        blob = coder.encode_feature_stream(
            rng.integers(-3, 3, size=64), models)
        with pytest.raises(coder.DecodeError, match="checksum"):
            coder.decode_feature_stream(blob[:7], models)
        # forge a valid checksum over a truncated payload
        cut = blob[:-4][: len(blob) // 2]
        forged = cut + struct.pack("<I", zlib.crc32(cut))
        with pytest.raises(coder.DecodeError, match="block"):
            coder.decode_feature_stream(forged, models)
        extra = blob[:-4] + b"xx"
        forged = extra + struct.pack("<I", zlib.crc32(extra))
        with pytest.raises(coder.DecodeError, match="trailing"):
            coder.decode_feature_stream(forged, models)


class TestBoneStream:
    @pytest.mark.parametrize("m", [1, 2, 8, 100])
    def test_round_trip_is_morton_sorted(self, m):
        rng = np.random.default_rng(m)
        pts = rng.integers(0, 1024, size=(m, 3)).astype(np.float64)
        out = coder.decode_bones(coder.encode_bones(pts))
        key = coder.morton_key(out.astype(np.int64))
        assert (np.diff(key) >= 0).all()
        assert sorted(map(tuple, out.tolist())) == sorted(
            map(tuple, pts.astype(np.int64).tolist()))

    def test_cube_corners_deterministic(self):
        corners = np.array([[x, y, z] for x in (0, 1023) for y in (0, 1023)
                            for z in (0, 1023)], dtype=np.float64)
        a = coder.encode_bones(corners)
        b = coder.encode_bones(corners[::-1].copy())
        assert a == b
        np.testing.assert_array_equal(
            coder.decode_bones(a), coder.decode_bones(b))

    def test_single_origin_bone(self):
        out = coder.decode_bones(coder.encode_bones(np.zeros((1, 3))))
        np.testing.assert_array_equal(out, np.zeros((1, 3), dtype=np.int64))

    def test_compressed_size_under_30_bpp(self):
        rng = np.random.default_rng(0)
        pts = rng.integers(0, 1024, size=(4096, 3)).astype(np.float64)
        blob = coder.encode_bones(pts)
        assert len(blob) * 8 / 4096 < 30.0

    def test_crc_detects_body_corruption(self):
        pts = np.random.default_rng(1).integers(
            0, 1024, size=(50, 3)).astype(np.float64)
        blob = bytearray(coder.encode_bones(pts))
        blob[10] ^= 0x01
        with pytest.raises(coder.DecodeError):
            coder.decode_bones(bytes(blob))

    def test_rejects_off_grid_and_bad_depth(self):
        with pytest.raises(ValueError):
            coder.encode_bones(np.array([[0.5, 0, 0]]))
        with pytest.raises(ValueError):
            coder.encode_bones(np.array([[2000.0, 0, 0]]), depth=10)
        with pytest.raises(ValueError):
            coder.encode_bones(np.zeros((1, 3)), depth=17)

    def test_short_stream_is_structured_error(self):
        with pytest.raises(coder.DecodeError):
            coder.decode_bones(b"\x01\x02")


def test_morton_order_is_stable_for_duplicates():
    pts = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 1]], dtype=np.int64)
    np.testing.assert_array_equal(coder.morton_order(pts), [1, 0, 2])


def test_laplace_models_window_widths():
    models = coder.laplace_models(np.zeros(3),
                                  np.array([0.01, 1.0, 1000.0]))
    sizes = np.diff(models.offsets)
    # W = clip(ceil(12 b), 4, 512); 2W+1 regular buckets + escape, and
    # each cumulative table stores buckets+1 entries (leading zero)
    np.testing.assert_array_equal(sizes, [2 * 4 + 3, 2 * 12 + 3,
                                          2 * 512 + 3])
