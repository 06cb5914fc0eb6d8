# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: exact k-NN, farthest-point selection, arithmetic coding.

Byte- and index-compatible with `_fallback`; the test suite asserts parity.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t, uint64_t
from libc.stdlib cimport free, malloc

cnp.import_array()

BACKEND = "native"

DEF STATE_BITS = 32
DEF TOTAL_BITS = 16
cdef uint64_t MASK = (<uint64_t> 1 << STATE_BITS) - 1
cdef uint64_t TOP = <uint64_t> 1 << (STATE_BITS - 1)
cdef uint64_t SECOND = <uint64_t> 1 << (STATE_BITS - 2)
cdef uint64_t C_TOTAL = <uint64_t> 1 << TOTAL_BITS
TOTAL = C_TOTAL

DEF CTX_RESCALE = 4096
DEF LEAF_SIZE = 16


# ---------------------------------------------------------------------------
# bounded max-heap keyed by (squared distance, index), lexicographic
# ---------------------------------------------------------------------------

cdef inline bint _worse(double d2a, int64_t ia, double d2b, int64_t ib) nogil:
    return d2a > d2b or (d2a == d2b and ia > ib)


cdef inline void _heap_offer(double* hd2, int64_t* hidx, int* size, int cap,
                             double d2, int64_t idx) nogil:
    cdef int pos, child
    cdef double td
    cdef int64_t ti
    if size[0] < cap:
        pos = size[0]
        hd2[pos] = d2
        hidx[pos] = idx
        size[0] += 1
        while pos > 0:
            if _worse(hd2[pos], hidx[pos], hd2[(pos - 1) >> 1], hidx[(pos - 1) >> 1]):
                td = hd2[pos]; hd2[pos] = hd2[(pos - 1) >> 1]; hd2[(pos - 1) >> 1] = td
                ti = hidx[pos]; hidx[pos] = hidx[(pos - 1) >> 1]; hidx[(pos - 1) >> 1] = ti
                pos = (pos - 1) >> 1
            else:
                break
        return
    if not _worse(hd2[0], hidx[0], d2, idx):
        return
    hd2[0] = d2
    hidx[0] = idx
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size[0]:
            break
        if child + 1 < size[0] and _worse(hd2[child + 1], hidx[child + 1], hd2[child], hidx[child]):
            child += 1
        if _worse(hd2[child], hidx[child], hd2[pos], hidx[pos]):
            td = hd2[pos]; hd2[pos] = hd2[child]; hd2[child] = td
            ti = hidx[pos]; hidx[pos] = hidx[child]; hidx[child] = ti
            pos = child
        else:
            break


cdef inline void _heap_sort(double* hd2, int64_t* hidx, int size) nogil:
    # Pop the max repeatedly to the tail: ascending (d2, idx) order remains.
    cdef int n = size, pos, child
    cdef double td
    cdef int64_t ti
    while n > 1:
        n -= 1
        td = hd2[0]; hd2[0] = hd2[n]; hd2[n] = td
        ti = hidx[0]; hidx[0] = hidx[n]; hidx[n] = ti
        pos = 0
        while True:
            child = 2 * pos + 1
            if child >= n:
                break
            if child + 1 < n and _worse(hd2[child + 1], hidx[child + 1], hd2[child], hidx[child]):
                child += 1
            if _worse(hd2[child], hidx[child], hd2[pos], hidx[pos]):
                td = hd2[pos]; hd2[pos] = hd2[child]; hd2[child] = td
                ti = hidx[pos]; hidx[pos] = hidx[child]; hidx[child] = ti
                pos = child
            else:
                break


cdef inline double _sqdist(const double* a, const double* b) nogil:
    cdef double dx = a[0] - b[0]
    cdef double dy = a[1] - b[1]
    cdef double dz = a[2] - b[2]
    return dx * dx + dy * dy + dz * dz


# ---------------------------------------------------------------------------
# KD-tree
# ---------------------------------------------------------------------------

cdef int _partition_select(int64_t* perm, const double* pts, int dim,
                           int lo, int hi, int target) nogil:
    # Quickselect inside perm[lo:hi] so perm[target] holds the value-ranked
    # element along `dim`, smaller-or-equal values left of it.
    cdef int l, r, m
    cdef double pivot
    cdef int64_t tmp
    while hi - lo > 1:
        m = (lo + hi) >> 1
        # median-of-three pivot
        pivot = pts[perm[m] * 3 + dim]
        if pts[perm[lo] * 3 + dim] > pivot:
            tmp = perm[lo]; perm[lo] = perm[m]; perm[m] = tmp
        if pts[perm[lo] * 3 + dim] > pts[perm[hi - 1] * 3 + dim]:
            tmp = perm[lo]; perm[lo] = perm[hi - 1]; perm[hi - 1] = tmp
        if pts[perm[m] * 3 + dim] > pts[perm[hi - 1] * 3 + dim]:
            tmp = perm[m]; perm[m] = perm[hi - 1]; perm[hi - 1] = tmp
        pivot = pts[perm[m] * 3 + dim]
        l = lo
        r = hi - 1
        while l <= r:
            while pts[perm[l] * 3 + dim] < pivot:
                l += 1
            while pts[perm[r] * 3 + dim] > pivot:
                r -= 1
            if l <= r:
                tmp = perm[l]; perm[l] = perm[r]; perm[r] = tmp
                l += 1
                r -= 1
        if target <= r:
            hi = r + 1
        elif target >= l:
            lo = l
        else:
            return 0
    return 0


cdef struct Node:
    int32_t dim      # -1 for leaf
    double split
    int32_t left
    int32_t right
    int32_t start
    int32_t end


cdef class KDTree:
    """Median-split KD-tree with brute-force-identical neighbor ordering."""

    cdef double[:, ::1] points
    cdef int64_t[::1] perm
    cdef Node* nodes
    cdef int n_nodes
    cdef int n

    def __cinit__(self, *args, **kwargs):
        self.nodes = NULL

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        self.n = pts.shape[0]
        self.perm = np.arange(self.n, dtype=np.int64)
        cdef int cap = 8 * (self.n // LEAF_SIZE + 1) + 64
        self.nodes = <Node*> malloc(cap * sizeof(Node))
        if self.nodes == NULL:
            raise MemoryError()
        self.n_nodes = 0
        self._build(0, self.n, cap)

    def __dealloc__(self):
        if self.nodes != NULL:
            free(self.nodes)

    def __len__(self):
        return self.n

    @property
    def data(self):
        return np.asarray(self.points)

    cdef int _build(self, int start, int end, int cap) except -1:
        # Iterative construction with an explicit stack of (start, end, slot).
        cdef list stack = [(start, end, -1, 0)]
        cdef int s, e, parent, side, node_id, mid, dim, d, i
        cdef double lo, hi, ext, best
        cdef const double* pts = &self.points[0, 0]
        cdef int64_t* perm = &self.perm[0]
        while stack:
            s, e, parent, side = stack.pop()
            node_id = self.n_nodes
            if node_id >= cap:
                raise MemoryError("kd-tree node budget exceeded")
            self.n_nodes += 1
            if parent >= 0:
                if side == 0:
                    self.nodes[parent].left = node_id
                else:
                    self.nodes[parent].right = node_id
            if e - s <= LEAF_SIZE:
                self.nodes[node_id].dim = -1
                self.nodes[node_id].start = s
                self.nodes[node_id].end = e
                continue
            dim = 0
            best = -1.0
            for d in range(3):
                lo = pts[perm[s] * 3 + d]
                hi = lo
                for i in range(s + 1, e):
                    if pts[perm[i] * 3 + d] < lo:
                        lo = pts[perm[i] * 3 + d]
                    elif pts[perm[i] * 3 + d] > hi:
                        hi = pts[perm[i] * 3 + d]
                ext = hi - lo
                if ext > best:
                    best = ext
                    dim = d
            mid = (s + e) >> 1
            _partition_select(perm, pts, dim, s, e, mid)
            self.nodes[node_id].dim = dim
            self.nodes[node_id].split = pts[perm[mid] * 3 + dim]
            self.nodes[node_id].start = s
            self.nodes[node_id].end = e
            # children are filled in when popped; push right then left
            stack.append((mid, e, node_id, 1))
            stack.append((s, mid, node_id, 0))
        return 0

    def query(self, queries, int k):
        q_arr = np.ascontiguousarray(queries, dtype=np.float64)
        if q_arr.ndim != 2 or q_arr.shape[1] != 3:
            raise ValueError(f"expected an (N, 3) array, got shape {q_arr.shape}")
        if not 1 <= k <= self.n:
            raise ValueError(f"k={k} out of range for a {self.n}-point set")
        cdef double[:, ::1] q = q_arr
        cdef int nq = q.shape[0]
        idx_arr = np.empty((nq, k), dtype=np.int64)
        d2_arr = np.empty((nq, k), dtype=np.float64)
        cdef int64_t[:, ::1] idx = idx_arr
        cdef double[:, ::1] d2 = d2_arr
        cdef double* hd2 = <double*> malloc(k * sizeof(double))
        cdef int64_t* hidx = <int64_t*> malloc(k * sizeof(int64_t))
        # stack entries: node id + its plane-distance lower bound
        cdef int stack_cap = 2 * self.n_nodes + 64
        cdef int32_t* nstack = <int32_t*> malloc(stack_cap * sizeof(int32_t))
        cdef double* dstack = <double*> malloc(stack_cap * sizeof(double))
        if hd2 == NULL or hidx == NULL or nstack == NULL or dstack == NULL:
            free(hd2); free(hidx); free(nstack); free(dstack)
            raise MemoryError()
        cdef int qi, size, sp, nid, i, j
        cdef double pd2, diff, dd
        cdef const double* pts = &self.points[0, 0]
        cdef const int64_t* perm = &self.perm[0]
        cdef const double* qp
        with nogil:
            for qi in range(nq):
                qp = &q[qi, 0]
                size = 0
                sp = 0
                nstack[sp] = 0
                dstack[sp] = 0.0
                sp += 1
                while sp > 0:
                    sp -= 1
                    nid = nstack[sp]
                    pd2 = dstack[sp]
                    if size == k and pd2 > hd2[0]:
                        # a tie (pd2 == worst) must still be visited: the far
                        # side may hold an equal distance with a smaller index
                        continue
                    if self.nodes[nid].dim < 0:
                        for i in range(self.nodes[nid].start, self.nodes[nid].end):
                            j = <int> perm[i]
                            dd = _sqdist(qp, pts + j * 3)
                            _heap_offer(hd2, hidx, &size, k, dd, j)
                        continue
                    diff = qp[self.nodes[nid].dim] - self.nodes[nid].split
                    if diff < 0:
                        nstack[sp] = self.nodes[nid].right
                        dstack[sp] = diff * diff
                        sp += 1
                        nstack[sp] = self.nodes[nid].left
                        dstack[sp] = pd2
                        sp += 1
                    else:
                        nstack[sp] = self.nodes[nid].left
                        dstack[sp] = diff * diff
                        sp += 1
                        nstack[sp] = self.nodes[nid].right
                        dstack[sp] = pd2
                        sp += 1
                _heap_sort(hd2, hidx, size)
                for i in range(k):
                    idx[qi, i] = hidx[i]
                    d2[qi, i] = hd2[i]
        free(hd2)
        free(hidx)
        free(nstack)
        free(dstack)
        return idx_arr, d2_arr


def farthest_points(points, int m, int start=0):
    """Greedy max-min selection of m indices; ties favor the smaller index."""
    pts_arr = np.ascontiguousarray(points, dtype=np.float64)
    if pts_arr.ndim != 2 or pts_arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {pts_arr.shape}")
    cdef int n = pts_arr.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m={m} out of range for {n} points")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    cdef double[:, ::1] pts = pts_arr
    out_arr = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    mind2_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mind2 = mind2_arr
    cdef int i, j, nxt
    cdef double dd, best
    cdef const double* base = &pts[0, 0]
    with nogil:
        out[0] = start
        for j in range(n):
            mind2[j] = _sqdist(base + j * 3, base + start * 3)
        for i in range(1, m):
            nxt = 0
            best = mind2[0]
            for j in range(1, n):
                if mind2[j] > best:
                    best = mind2[j]
                    nxt = j
            out[i] = nxt
            for j in range(n):
                dd = _sqdist(base + j * 3, base + nxt * 3)
                if dd < mind2[j]:
                    mind2[j] = dd
    return out_arr


def self_knn_batch(windows, int k):
    """Per-window self k-NN (self included at rank 0, index tie-break)."""
    w_arr = np.ascontiguousarray(windows, dtype=np.float64)
    if w_arr.ndim != 3 or w_arr.shape[2] != 3:
        raise ValueError(f"expected (B, K, 3), got {w_arr.shape}")
    cdef int b = w_arr.shape[0]
    cdef int kk = w_arr.shape[1]
    if not 1 <= k <= kk:
        raise ValueError(f"k={k} out of range for window size {kk}")
    cdef double[:, :, ::1] w = w_arr
    out_arr = np.empty((b, kk, k), dtype=np.int64)
    cdef int64_t[:, :, ::1] out = out_arr
    cdef double* hd2 = <double*> malloc(k * sizeof(double))
    cdef int64_t* hidx = <int64_t*> malloc(k * sizeof(int64_t))
    if hd2 == NULL or hidx == NULL:
        free(hd2); free(hidx)
        raise MemoryError()
    cdef int i, r, c, size, j
    cdef double dd
    with nogil:
        for i in range(b):
            for r in range(kk):
                size = 0
                for c in range(kk):
                    dd = _sqdist(&w[i, r, 0], &w[i, c, 0])
                    _heap_offer(hd2, hidx, &size, k, dd, c)
                _heap_sort(hd2, hidx, size)
                for j in range(k):
                    out[i, r, j] = hidx[j]
    free(hd2)
    free(hidx)
    return out_arr


# ---------------------------------------------------------------------------
# arithmetic coder
# ---------------------------------------------------------------------------

cdef struct Enc:
    uint64_t low
    uint64_t high
    uint64_t pending
    uint64_t acc
    int nbits


cdef inline void _put_bit(Enc* e, bytearray buf, int bit):
    e.acc = (e.acc << 1) | <uint64_t> bit
    e.nbits += 1
    if e.nbits == 8:
        buf.append(<uint8_t> e.acc)
        e.acc = 0
        e.nbits = 0


cdef inline void _enc_step(Enc* e, bytearray buf, uint64_t c_lo, uint64_t c_hi):
    cdef uint64_t span = e.high - e.low + 1
    cdef uint64_t low = e.low
    cdef int bit
    cdef uint64_t i
    e.high = low + (c_hi * span >> TOTAL_BITS) - 1
    e.low = low + (c_lo * span >> TOTAL_BITS)
    while True:
        if ((e.low ^ e.high) & TOP) == 0:
            bit = <int> (e.low >> (STATE_BITS - 1))
            _put_bit(e, buf, bit)
            for i in range(e.pending):
                _put_bit(e, buf, bit ^ 1)
            e.pending = 0
            e.low = (e.low << 1) & MASK
            e.high = ((e.high << 1) & MASK) | 1
        elif (e.low & ~e.high & SECOND) != 0:
            e.pending += 1
            e.low = (e.low << 1) & (MASK >> 1)
            e.high = ((e.high << 1) & (MASK >> 1)) | TOP | 1
        else:
            break


cdef inline bytes _enc_finish(Enc* e, bytearray buf):
    _put_bit(e, buf, 1)
    if e.nbits:
        buf.append(<uint8_t> (e.acc << (8 - e.nbits)))
        e.acc = 0
        e.nbits = 0
    return bytes(buf)


cdef struct Dec:
    uint64_t low
    uint64_t high
    uint64_t code
    uint64_t acc
    int nbits
    Py_ssize_t pos


cdef inline int _get_bit(Dec* d, const uint8_t* data, Py_ssize_t size) nogil:
    if d.nbits == 0:
        if d.pos < size:
            d.acc = data[d.pos]
            d.pos += 1
        else:
            d.acc = 0
        d.nbits = 8
    d.nbits -= 1
    return <int> ((d.acc >> d.nbits) & 1)


cdef inline void _dec_init(Dec* d, const uint8_t* data, Py_ssize_t size) nogil:
    cdef int i
    d.low = 0
    d.high = MASK
    d.code = 0
    d.acc = 0
    d.nbits = 0
    d.pos = 0
    for i in range(STATE_BITS):
        d.code = (d.code << 1) | <uint64_t> _get_bit(d, data, size)


cdef inline uint64_t _dec_target(Dec* d) nogil:
    cdef uint64_t span = d.high - d.low + 1
    return ((d.code - d.low + 1) * C_TOTAL - 1) / span


cdef inline void _dec_consume(Dec* d, const uint8_t* data, Py_ssize_t size,
                              uint64_t c_lo, uint64_t c_hi) nogil:
    cdef uint64_t span = d.high - d.low + 1
    cdef uint64_t low = d.low
    d.high = low + (c_hi * span >> TOTAL_BITS) - 1
    d.low = low + (c_lo * span >> TOTAL_BITS)
    while True:
        if ((d.low ^ d.high) & TOP) == 0:
            pass
        elif (d.low & ~d.high & SECOND) != 0:
            d.code ^= SECOND
            d.low ^= SECOND
            d.high ^= SECOND
        else:
            break
        d.low = (d.low << 1) & MASK
        d.high = ((d.high << 1) & MASK) | 1
        d.code = ((d.code << 1) & MASK) | <uint64_t> _get_bit(d, data, size)


def encode_symbols(symbols, cdf, offsets, lows):
    """Arithmetic-code `symbols[i]` under its own CDF slice.

    Slice i is `cdf[offsets[i]:offsets[i+1]]`, a cumulative table whose
    last bucket is the escape symbol; values outside the slice alphabet
    are escape-coded as a raw little-endian int32.
    """
    cdef int64_t[::1] sym = np.ascontiguousarray(symbols, dtype=np.int64)
    cdef uint32_t[::1] c = np.ascontiguousarray(cdf, dtype=np.uint32)
    cdef int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef int64_t[::1] lo = np.ascontiguousarray(lows, dtype=np.int64)
    cdef Py_ssize_t s = sym.shape[0]
    if off.shape[0] != s + 1 or lo.shape[0] != s:
        raise ValueError("model table sizes do not match the symbol count")
    cdef Enc e
    e.low = 0; e.high = MASK; e.pending = 0; e.acc = 0; e.nbits = 0
    buf = bytearray()
    cdef Py_ssize_t i
    cdef int64_t o, nbuckets, a
    cdef uint64_t raw, byte
    cdef int shift
    for i in range(s):
        o = off[i]
        nbuckets = off[i + 1] - o - 1
        a = sym[i] - lo[i]
        if 0 <= a < nbuckets - 1:
            _enc_step(&e, buf, c[o + a], c[o + a + 1])
        else:
            _enc_step(&e, buf, c[o + nbuckets - 1], c[o + nbuckets])
            raw = <uint64_t> (sym[i] & 0xFFFFFFFF)
            for shift in range(0, 32, 8):
                byte = (raw >> shift) & 0xFF
                _enc_step(&e, buf, byte << 8, (byte + 1) << 8)
    return _enc_finish(&e, buf)


def decode_symbols(data, cdf, offsets, lows):
    cdef const uint8_t[::1] dat = data
    cdef uint32_t[::1] c = np.ascontiguousarray(cdf, dtype=np.uint32)
    cdef int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef int64_t[::1] lo = np.ascontiguousarray(lows, dtype=np.int64)
    cdef Py_ssize_t s = off.shape[0] - 1
    if lo.shape[0] != s:
        raise ValueError("model table sizes do not match the symbol count")
    out_arr = np.empty(s, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef Dec d
    cdef const uint8_t* ptr = NULL
    cdef Py_ssize_t size = dat.shape[0]
    if size > 0:
        ptr = &dat[0]
    cdef Py_ssize_t i
    cdef int64_t o, nbuckets, l, h, mid, raw
    cdef uint64_t val, byte
    cdef int shift
    with nogil:
        _dec_init(&d, ptr, size)
        for i in range(s):
            o = off[i]
            nbuckets = off[i + 1] - o - 1
            val = _dec_target(&d)
            l = 0
            h = nbuckets
            while h - l > 1:
                mid = (l + h) >> 1
                if <uint64_t> c[o + mid] > val:
                    h = mid
                else:
                    l = mid
            _dec_consume(&d, ptr, size, c[o + l], c[o + l + 1])
            if l == nbuckets - 1:
                raw = 0
                for shift in range(0, 32, 8):
                    byte = _dec_target(&d) >> 8
                    _dec_consume(&d, ptr, size, byte << 8, (byte + 1) << 8)
                    raw |= (<int64_t> byte) << shift
                if raw >= (<int64_t> 1 << 31):
                    raw -= <int64_t> 1 << 32
                out[i] = raw
            else:
                out[i] = l + lo[i]
    return out_arr


cdef inline uint64_t _ctx_f0(uint32_t c0, uint32_t c1) nogil:
    cdef uint64_t f1 = ((<uint64_t> c1) << TOTAL_BITS) / (c0 + c1)
    if f1 < 1:
        f1 = 1
    elif f1 > C_TOTAL - 1:
        f1 = C_TOTAL - 1
    return C_TOTAL - f1


def encode_bits_adaptive(bits, ctx, int n_ctx):
    """Binary arithmetic coding with per-context adaptive counts."""
    cdef uint8_t[::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef int64_t[::1] cx = np.ascontiguousarray(ctx, dtype=np.int64)
    if b.shape[0] != cx.shape[0]:
        raise ValueError("bits and ctx must have identical shapes")
    counts_arr = np.ones((n_ctx, 2), dtype=np.uint32)
    cdef uint32_t[:, ::1] counts = counts_arr
    cdef Enc e
    e.low = 0; e.high = MASK; e.pending = 0; e.acc = 0; e.nbits = 0
    buf = bytearray()
    cdef Py_ssize_t i
    cdef int64_t c
    cdef uint64_t f0
    for i in range(b.shape[0]):
        c = cx[i]
        f0 = _ctx_f0(counts[c, 0], counts[c, 1])
        if b[i]:
            _enc_step(&e, buf, f0, C_TOTAL)
            counts[c, 1] += 1
        else:
            _enc_step(&e, buf, 0, f0)
            counts[c, 0] += 1
        if counts[c, 0] + counts[c, 1] >= CTX_RESCALE:
            counts[c, 0] = (counts[c, 0] + 1) >> 1
            counts[c, 1] = (counts[c, 1] + 1) >> 1
    return _enc_finish(&e, buf)


def decode_bits_adaptive(data, ctx, int n_ctx):
    cdef const uint8_t[::1] dat = data
    cdef int64_t[::1] cx = np.ascontiguousarray(ctx, dtype=np.int64)
    counts_arr = np.ones((n_ctx, 2), dtype=np.uint32)
    cdef uint32_t[:, ::1] counts = counts_arr
    out_arr = np.empty(cx.shape[0], dtype=np.uint8)
    cdef uint8_t[::1] out = out_arr
    cdef Dec d
    cdef const uint8_t* ptr = NULL
    cdef Py_ssize_t size = dat.shape[0]
    if size > 0:
        ptr = &dat[0]
    cdef Py_ssize_t i
    cdef int64_t c
    cdef uint64_t f0
    cdef int bit
    with nogil:
        _dec_init(&d, ptr, size)
        for i in range(cx.shape[0]):
            c = cx[i]
            f0 = _ctx_f0(counts[c, 0], counts[c, 1])
            bit = _dec_target(&d) >= f0
            if bit:
                _dec_consume(&d, ptr, size, f0, C_TOTAL)
                counts[c, 1] += 1
            else:
                _dec_consume(&d, ptr, size, 0, f0)
                counts[c, 0] += 1
            out[i] = <uint8_t> bit
            if counts[c, 0] + counts[c, 1] >= CTX_RESCALE:
                counts[c, 0] = (counts[c, 0] + 1) >> 1
                counts[c, 1] = (counts[c, 1] + 1) >> 1
    return out_arr
