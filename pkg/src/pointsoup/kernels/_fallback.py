"""Pure-Python kernel implementations.

Mirrors the compiled extension (`_native`) exactly: identical neighbor
ordering, identical selection rules, and byte-identical coder output.
Used when the extension is not built, and as the slow half of the
kernel benchmark.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# Arithmetic coder geometry: 32-bit state, all totals fixed at 2**16.
_STATE_BITS = 32
_MASK = (1 << _STATE_BITS) - 1
_TOP = 1 << (_STATE_BITS - 1)
_SECOND = _TOP >> 1
TOTAL = 1 << 16

# Adaptive binary contexts: halve counts once they reach this total.
_CTX_RESCALE = 4096


def _as_points(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {a.shape}")
    return a


class KDTree:
    """Exact k-NN search over a fixed point set.

    The fallback keeps no tree at all; queries run as a chunked
    brute-force scan. Neighbor order is ascending squared distance
    with ties broken by the smaller point index.
    """

    def __init__(self, points):
        self.points = _as_points(points)
        if self.points.shape[0] < 1:
            raise ValueError("cannot index an empty point set")

    def __len__(self):
        return self.points.shape[0]

    @property
    def data(self):
        return self.points

    def query(self, queries, k):
        queries = _as_points(queries)
        n = self.points.shape[0]
        if not 1 <= k <= n:
            raise ValueError(f"k={k} out of range for a {n}-point set")
        q = queries.shape[0]
        idx = np.empty((q, k), dtype=np.int64)
        d2 = np.empty((q, k), dtype=np.float64)
        # Bound the (chunk, n) distance matrix to ~32 MB.
        chunk = max(1, int(4e6) // max(n, 1))
        cols = np.arange(n)
        for s in range(0, q, chunk):
            e = min(q, s + chunk)
            diff = queries[s:e, None, :] - self.points[None, :, :]
            dist = np.sum(diff * diff, axis=-1)
            for r in range(dist.shape[0]):
                order = np.lexsort((cols, dist[r]))[:k]
                idx[s + r] = order
                d2[s + r] = dist[r, order]
        return idx, d2


def farthest_points(points, m, start=0):
    """Greedy max-min selection of m indices; ties favor the smaller index."""
    points = _as_points(points)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m={m} out of range for {n} points")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    mind2 = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, m):
        # np.argmax returns the first (= smallest-index) maximum.
        nxt = int(np.argmax(mind2))
        chosen[i] = nxt
        diff = points - points[nxt]
        np.minimum(mind2, np.sum(diff * diff, axis=1), out=mind2)
    return chosen


def self_knn_batch(windows, k):
    """Per-window self k-NN (self included at rank 0, index tie-break).

    windows: (B, K, 3) float64. Returns (B, K, k) int64.
    """
    w = np.ascontiguousarray(windows, dtype=np.float64)
    if w.ndim != 3 or w.shape[2] != 3:
        raise ValueError(f"expected (B, K, 3), got {w.shape}")
    b, kk, _ = w.shape
    if not 1 <= k <= kk:
        raise ValueError(f"k={k} out of range for window size {kk}")
    out = np.empty((b, kk, k), dtype=np.int64)
    cols = np.arange(kk)
    for i in range(b):
        diff = w[i, :, None, :] - w[i, None, :, :]
        dist = np.sum(diff * diff, axis=-1)
        for r in range(kk):
            out[i, r] = np.lexsort((cols, dist[r]))[:k]
    return out


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, bit):
        self.acc = (self.acc << 1) | bit
        self.nbits += 1
        if self.nbits == 8:
            self.buf.append(self.acc)
            self.acc = 0
            self.nbits = 0

    def getvalue(self):
        if self.nbits:
            self.buf.append(self.acc << (8 - self.nbits))
            self.acc = 0
            self.nbits = 0
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def read(self):
        # Past end of stream reads return 0; the final code bits of a
        # well-formed stream never need them to be anything else.
        if self.nbits == 0:
            if self.pos < len(self.data):
                self.acc = self.data[self.pos]
                self.pos += 1
            else:
                self.acc = 0
            self.nbits = 8
        self.nbits -= 1
        return (self.acc >> self.nbits) & 1


class _Encoder:
    def __init__(self):
        self.low = 0
        self.high = _MASK
        self.pending = 0
        self.out = _BitWriter()

    def encode(self, c_lo, c_hi):
        span = self.high - self.low + 1
        low = self.low
        self.high = low + (c_hi * span) // TOTAL - 1
        self.low = low + (c_lo * span) // TOTAL
        while True:
            if (self.low ^ self.high) & _TOP == 0:
                bit = self.low >> (_STATE_BITS - 1)
                self.out.write(bit)
                inv = bit ^ 1
                for _ in range(self.pending):
                    self.out.write(inv)
                self.pending = 0
                self.low = (self.low << 1) & _MASK
                self.high = ((self.high << 1) & _MASK) | 1
            elif self.low & ~self.high & _SECOND:
                self.pending += 1
                self.low = (self.low << 1) & (_MASK >> 1)
                self.high = ((self.high << 1) & (_MASK >> 1)) | _TOP | 1
            else:
                break

    def finish(self):
        # A 1 bit followed by implicit zeros always lands inside [low, high].
        self.out.write(1)
        return self.out.getvalue()


class _Decoder:
    def __init__(self, data):
        self.low = 0
        self.high = _MASK
        self.inp = _BitReader(data)
        self.code = 0
        for _ in range(_STATE_BITS):
            self.code = (self.code << 1) | self.inp.read()

    def target(self):
        span = self.high - self.low + 1
        return ((self.code - self.low + 1) * TOTAL - 1) // span

    def consume(self, c_lo, c_hi):
        span = self.high - self.low + 1
        low = self.low
        self.high = low + (c_hi * span) // TOTAL - 1
        self.low = low + (c_lo * span) // TOTAL
        while True:
            if (self.low ^ self.high) & _TOP == 0:
                pass
            elif self.low & ~self.high & _SECOND:
                # drop the agreed second bit; the shared shift below then
                # reproduces the encoder's underflow update exactly
                self.code ^= _SECOND
                self.low ^= _SECOND
                self.high ^= _SECOND
            else:
                break
            self.low = (self.low << 1) & _MASK
            self.high = ((self.high << 1) & _MASK) | 1
            self.code = ((self.code << 1) & _MASK) | self.inp.read()


def _check_models(symbols, cdf, offsets, lows):
    if symbols is not None:
        symbols = np.ascontiguousarray(symbols, dtype=np.int64)
    cdf = np.ascontiguousarray(cdf, dtype=np.uint32)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    lows = np.ascontiguousarray(lows, dtype=np.int64)
    s = symbols.shape[0] if symbols is not None else offsets.shape[0] - 1
    if offsets.shape[0] != s + 1 or lows.shape[0] != s:
        raise ValueError("model table sizes do not match the symbol count")
    return symbols, cdf, offsets, lows


def encode_symbols(symbols, cdf, offsets, lows):
    """Arithmetic-code `symbols[i]` under its own CDF slice.

    Slice i is `cdf[offsets[i]:offsets[i+1]]`, a cumulative table whose
    last bucket is the escape symbol; values outside the slice alphabet
    are escape-coded as a raw little-endian int32.
    """
    symbols, cdf, offsets, lows = _check_models(symbols, cdf, offsets, lows)
    enc = _Encoder()
    for i in range(symbols.shape[0]):
        o = int(offsets[i])
        nbuckets = int(offsets[i + 1]) - o - 1
        a = int(symbols[i]) - int(lows[i])
        if 0 <= a < nbuckets - 1:
            enc.encode(int(cdf[o + a]), int(cdf[o + a + 1]))
        else:
            enc.encode(int(cdf[o + nbuckets - 1]), int(cdf[o + nbuckets]))
            raw = int(symbols[i]) & 0xFFFFFFFF
            for shift in (0, 8, 16, 24):
                byte = (raw >> shift) & 0xFF
                enc.encode(byte << 8, (byte + 1) << 8)
    return enc.finish()


def decode_symbols(data, cdf, offsets, lows):
    _, cdf, offsets, lows = _check_models(None, cdf, offsets, lows)
    s = offsets.shape[0] - 1
    dec = _Decoder(data)
    symbols = np.empty(s, dtype=np.int64)
    for i in range(s):
        o = int(offsets[i])
        nbuckets = int(offsets[i + 1]) - o - 1
        val = dec.target()
        lo, hi = 0, nbuckets
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if int(cdf[o + mid]) > val:
                hi = mid
            else:
                lo = mid
        dec.consume(int(cdf[o + lo]), int(cdf[o + lo + 1]))
        if lo == nbuckets - 1:
            raw = 0
            for shift in (0, 8, 16, 24):
                byte = dec.target() >> 8
                dec.consume(byte << 8, (byte + 1) << 8)
                raw |= byte << shift
            if raw >= 1 << 31:
                raw -= 1 << 32
            symbols[i] = raw
        else:
            symbols[i] = lo + int(lows[i])
    return symbols


def _ctx_freq(c0, c1):
    f1 = (c1 << 16) // (c0 + c1)
    if f1 < 1:
        f1 = 1
    elif f1 > TOTAL - 1:
        f1 = TOTAL - 1
    return TOTAL - f1


def encode_bits_adaptive(bits, ctx, n_ctx):
    """Binary arithmetic coding with per-context adaptive counts."""
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    ctx = np.ascontiguousarray(ctx, dtype=np.int64)
    if bits.shape != ctx.shape:
        raise ValueError("bits and ctx must have identical shapes")
    c0 = [1] * n_ctx
    c1 = [1] * n_ctx
    enc = _Encoder()
    for i in range(bits.shape[0]):
        c = int(ctx[i])
        f0 = _ctx_freq(c0[c], c1[c])
        if bits[i]:
            enc.encode(f0, TOTAL)
            c1[c] += 1
        else:
            enc.encode(0, f0)
            c0[c] += 1
        if c0[c] + c1[c] >= _CTX_RESCALE:
            c0[c] = (c0[c] + 1) >> 1
            c1[c] = (c1[c] + 1) >> 1
    return enc.finish()


def decode_bits_adaptive(data, ctx, n_ctx):
    ctx = np.ascontiguousarray(ctx, dtype=np.int64)
    c0 = [1] * n_ctx
    c1 = [1] * n_ctx
    dec = _Decoder(data)
    bits = np.empty(ctx.shape[0], dtype=np.uint8)
    for i in range(ctx.shape[0]):
        c = int(ctx[i])
        f0 = _ctx_freq(c0[c], c1[c])
        bit = dec.target() >= f0
        if bit:
            dec.consume(f0, TOTAL)
            c1[c] += 1
        else:
            dec.consume(0, f0)
            c0[c] += 1
        bits[i] = bit
        if c0[c] + c1[c] >= _CTX_RESCALE:
            c0[c] = (c0[c] + 1) >> 1
            c1[c] = (c1[c] + 1) >> 1
    return bits
