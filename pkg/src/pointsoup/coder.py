"""Entropy coding layer: symbol models, feature streams, and the bone codec.

Everything here is integer-exact once models are built: the model tables
are quantized to 16-bit CDFs, so encoder and decoder agree bit-for-bit
as long as they derive models from identical inputs.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from pointsoup import kernels

TOTAL = kernels.TOTAL

# Per-symbol alphabet half-width: wide enough that the Laplacian tail
# beyond it is far below one 1/65536 frequency step, capped to bound
# table memory (outliers escape-code losslessly).
_WIDTH_FLOOR = 4
_WIDTH_CAP = 512

# Feature symbols are arithmetic-coded in independent fixed-size blocks
# so model tables for huge frames never materialize at once.
BLOCK_SYMBOLS = 1 << 16

_ZIGZAG_BITS_PAD = 1  # deltas of depth-bit values need depth+1 bits


class DecodeError(ValueError):
    """Raised when a substream fails structural or checksum validation."""


def quantize_cdf(pmf) -> np.ndarray:
    """Quantize one pmf to an integer CDF with total 2**16.

    Every bucket gets frequency >= 1; the remaining mass is split
    proportionally with largest-remainder rounding (ties favor the
    smaller index). Returns the cumulative table, length len(pmf)+1.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or pmf.size == 0:
        raise ValueError("pmf must be a non-empty 1-D sequence")
    if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
        raise ValueError("pmf entries must be finite and non-negative")
    freq = _quantize_rows(pmf[None, :])[0]
    cdf = np.zeros(pmf.size + 1, dtype=np.uint32)
    np.cumsum(freq, out=cdf[1:])
    return cdf


def _quantize_rows(pmf: np.ndarray) -> np.ndarray:
    """Row-wise largest-remainder CDF quantization; pmf is (S, nb) float64."""
    s, nb = pmf.shape
    if nb > TOTAL:
        raise ValueError(f"alphabet of {nb} symbols exceeds total {TOTAL}")
    target = TOTAL - nb
    rowsum = pmf.sum(axis=1, keepdims=True)
    rowsum[rowsum <= 0] = 1.0
    raw = pmf * (target / rowsum)
    base = np.floor(raw)
    rem = raw - base
    base = base.astype(np.int64)
    left = target - base.sum(axis=1)
    rank = np.argsort(-rem, axis=1, kind="stable")
    bump = (np.arange(nb)[None, :] < left[:, None]).astype(np.int64)
    add = np.zeros((s, nb), dtype=np.int64)
    np.put_along_axis(add, rank, bump, axis=1)
    return (base + add + 1).astype(np.uint32)


def _laplace_bin_pmf(mu: np.ndarray, b: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """P(x) = F(x+1/2 - mu) - F(x-1/2 - mu) under a Laplacian CDF F."""
    u1 = xs + 0.5 - mu
    u2 = xs - 0.5 - mu
    s1 = np.sign(u1)
    s2 = np.sign(u2)
    e1 = np.exp(-np.abs(u1) / b)
    e2 = np.exp(-np.abs(u2) / b)
    return 0.5 * (s1 - s2) - 0.5 * (s1 * e1 - s2 * e2)


class SymbolModels:
    """Flattened per-symbol CDF tables ready for the coder kernels.

    `cdf[offsets[i]:offsets[i+1]]` is symbol i's cumulative table whose
    final bucket is the escape symbol; `lows[i]` is the integer value of
    its first regular bucket.
    """

    __slots__ = ("cdf", "offsets", "lows")

    def __init__(self, cdf, offsets, lows):
        self.cdf = cdf
        self.offsets = offsets
        self.lows = lows

    def __len__(self):
        return self.lows.shape[0]


def laplace_models(mu, b) -> SymbolModels:
    """Build per-symbol models from Laplacian parameters.

    Deterministic in every detail (window widths, pmf evaluation, CDF
    rounding), which is what lets encoder and decoder derive identical
    tables from identical (mu, b).
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if mu.shape != b.shape:
        raise ValueError("mu and b must have identical shapes")
    s = mu.shape[0]
    center = np.rint(mu)
    width = np.clip(np.ceil(12.0 * b), _WIDTH_FLOOR, _WIDTH_CAP).astype(np.int64)
    nbuckets = 2 * width + 2  # symmetric window plus the escape bucket
    offsets = np.zeros(s + 1, dtype=np.int64)
    np.cumsum(nbuckets + 1, out=offsets[1:])
    cdf = np.empty(offsets[-1], dtype=np.uint32)
    lows = (center - width).astype(np.int64)
    for w in np.unique(width):
        rows = np.nonzero(width == w)[0]
        xs = center[rows, None] + np.arange(-w, w + 1, dtype=np.float64)[None, :]
        pmf = _laplace_bin_pmf(mu[rows, None], b[rows, None], xs)
        np.maximum(pmf, 0.0, out=pmf)
        escape = np.maximum(1.0 - pmf.sum(axis=1, keepdims=True), 0.0)
        freq = _quantize_rows(np.concatenate([pmf, escape], axis=1))
        tables = np.zeros((rows.size, 2 * w + 3), dtype=np.uint32)
        np.cumsum(freq, axis=1, out=tables[:, 1:])
        starts = offsets[rows]
        idx = starts[:, None] + np.arange(2 * w + 3)[None, :]
        cdf[idx.reshape(-1)] = tables.reshape(-1)
    return SymbolModels(cdf, offsets, lows)


def encode_symbols(symbols, models: SymbolModels) -> bytes:
    """Arithmetic-code one symbol per model slice into a single stream."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.shape[0] != len(models):
        raise ValueError("symbol count does not match model count")
    return kernels.encode_symbols(symbols, models.cdf, models.offsets,
                                  models.lows)


def decode_symbols(data: bytes, models: SymbolModels) -> np.ndarray:
    """Exact inverse of encode_symbols given identical models."""
    return kernels.decode_symbols(data, models.cdf, models.offsets,
                                  models.lows)


def encode_feature_stream(symbols, models: SymbolModels) -> bytes:
    """Arithmetic-code the symbol sequence in BLOCK_SYMBOLS blocks."""
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.shape[0] != len(models):
        raise ValueError("symbol count does not match model count")
    parts = []
    for s in range(0, symbols.shape[0], BLOCK_SYMBOLS):
        e = min(symbols.shape[0], s + BLOCK_SYMBOLS)
        off = models.offsets[s:e + 1]
        blob = kernels.encode_symbols(
            symbols[s:e], models.cdf[off[0]:off[-1]], off - off[0], models.lows[s:e])
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_feature_stream(data: bytes, models: SymbolModels) -> np.ndarray:
    """Inverse of encode_feature_stream; validates lengths and checksum."""
    if len(data) < 4:
        raise DecodeError("feature substream truncated")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise DecodeError("feature substream checksum mismatch")
    s_total = len(models)
    out = np.empty(s_total, dtype=np.int64)
    pos = 0
    for s in range(0, s_total, BLOCK_SYMBOLS):
        e = min(s_total, s + BLOCK_SYMBOLS)
        if pos + 4 > len(payload):
            raise DecodeError(f"feature block header missing at byte {pos}")
        (blen,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        if pos + blen > len(payload):
            raise DecodeError(f"feature block truncated at byte {pos}")
        off = models.offsets[s:e + 1]
        out[s:e] = kernels.decode_symbols(
            payload[pos:pos + blen], models.cdf[off[0]:off[-1]],
            off - off[0], models.lows[s:e])
        pos += blen
    if pos != len(payload):
        raise DecodeError(f"{len(payload) - pos} trailing bytes in feature substream")
    return out


# ---------------------------------------------------------------------------
# bone codec: Morton order + per-axis zigzag deltas + adaptive binary coding
# ---------------------------------------------------------------------------

def _spread3(v: np.ndarray) -> np.ndarray:
    """Insert two zero bits between the low 21 bits of each value."""
    v = v.astype(np.uint64)
    v &= np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_key(points: np.ndarray) -> np.ndarray:
    """Z-curve key of integer (M, 3) coordinates."""
    p = np.asarray(points, dtype=np.int64)
    return (_spread3(p[:, 0])
            | (_spread3(p[:, 1]) << np.uint64(1))
            | (_spread3(p[:, 2]) << np.uint64(2)))


def morton_order(points: np.ndarray) -> np.ndarray:
    """Permutation sorting integer points along the z-curve (stable)."""
    return np.argsort(morton_key(points), kind="stable")


def _check_grid(points, depth: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"expected a non-empty (M, 3) array, got {pts.shape}")
    if not 1 <= depth <= 16:
        raise ValueError(f"bone depth {depth} out of range [1, 16]")
    ipts = np.rint(pts).astype(np.int64)
    if not np.array_equal(ipts.astype(np.float64), pts):
        raise ValueError("bone coordinates are off the integer grid")
    if ipts.min() < 0 or ipts.max() > (1 << depth) - 1:
        raise ValueError(f"bone coordinates exceed the {depth}-bit grid")
    return ipts


def encode_bones(points, depth: int = 10) -> bytes:
    """Losslessly encode integer grid points; order normalized to Morton."""
    ipts = _check_grid(points, depth)
    m = ipts.shape[0]
    spts = ipts[morton_order(ipts)]
    head = struct.pack("<IB", m, depth) + struct.pack("<3H", *spts[0])
    nbits = depth + _ZIGZAG_BITS_PAD
    if m > 1:
        delta = np.diff(spts, axis=0)
        zz = ((delta << 1) ^ (delta >> 63)).astype(np.uint64)
        shifts = np.arange(nbits - 1, -1, -1, dtype=np.uint64)
        bits = ((zz[:, :, None] >> shifts[None, None, :]) & np.uint64(1)
                ).astype(np.uint8).reshape(-1)
        ctx = np.broadcast_to(
            (np.arange(3)[:, None] * nbits + np.arange(nbits)[None, :])[None],
            (m - 1, 3, nbits)).reshape(-1).astype(np.int64)
        coded = kernels.encode_bits_adaptive(bits, ctx, 3 * nbits)
    else:
        coded = b""
    body = head + struct.pack("<I", len(coded)) + coded
    return body + struct.pack("<I", zlib.crc32(body))


def decode_bones(stream: bytes) -> np.ndarray:
    """Inverse of encode_bones; returns Morton-ordered integer points."""
    if len(stream) < 15:
        raise DecodeError("bone substream truncated")
    body, (crc,) = stream[:-4], struct.unpack("<I", stream[-4:])
    if zlib.crc32(body) != crc:
        raise DecodeError("bone substream checksum mismatch")
    m, depth = struct.unpack_from("<IB", body, 0)
    if m < 1 or not 1 <= depth <= 16:
        raise DecodeError(f"bad bone substream header (M={m}, depth={depth})")
    first = np.array(struct.unpack_from("<3H", body, 5), dtype=np.int64)
    (clen,) = struct.unpack_from("<I", body, 11)
    if 15 + clen != len(body):
        raise DecodeError("bone substream length mismatch")
    pts = np.empty((m, 3), dtype=np.int64)
    pts[0] = first
    if m > 1:
        nbits = depth + _ZIGZAG_BITS_PAD
        ctx = np.broadcast_to(
            (np.arange(3)[:, None] * nbits + np.arange(nbits)[None, :])[None],
            (m - 1, 3, nbits)).reshape(-1).astype(np.int64)
        bits = kernels.decode_bits_adaptive(body[15:], ctx, 3 * nbits)
        shifts = np.arange(nbits - 1, -1, -1, dtype=np.uint64)
        zz = (bits.reshape(m - 1, 3, nbits).astype(np.uint64)
              << shifts[None, None, :]).sum(axis=2).astype(np.int64)
        delta = (zz >> 1) ^ -(zz & 1)
        np.cumsum(delta, axis=0, out=pts[1:])
        pts[1:] += first
    hi = (1 << depth) - 1
    if pts.min() < 0 or pts.max() > hi:
        raise DecodeError("decoded bone coordinates exceed the grid")
    return pts
