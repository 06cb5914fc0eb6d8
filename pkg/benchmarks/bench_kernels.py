"""Kernel backend shootout: compiled extension vs pure-Python fallback.

Times the hot paths (KD-tree queries, FPS, window self-KNN, arithmetic
coding) on identical inputs and verifies both backends return identical
results while it is at it.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pointsoup.kernels import _fallback

try:
    from pointsoup.kernels import _native
except ImportError:
    _native = None

from pointsoup import coder


def _time(fn, repeats: int) -> tuple[float, object]:
    best, result = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def _cases(n: int, rng: np.random.Generator):
    pts = rng.uniform(0.0, 1024.0, size=(n, 3))
    queries = rng.uniform(0.0, 1024.0, size=(n // 4, 3))
    m = max(2, n // 64)
    windows = rng.normal(size=(n // 128 or 1, 128, 3))
    mu = rng.uniform(-20.0, 20.0, size=n)
    b = rng.uniform(0.1, 20.0, size=n)
    models = coder.laplace_models(mu, b)
    syms = np.rint(mu + rng.laplace(0.0, b)).astype(np.int64)
    bits = (rng.random(8 * n) < 0.3).astype(np.uint8)
    ctx = rng.integers(0, 64, size=8 * n).astype(np.int64)

    def knn(impl):
        return impl.KDTree(pts).query(queries, 16)[0]

    def fps(impl):
        return impl.farthest_points(pts, m, 0)

    def self_knn(impl):
        return impl.self_knn_batch(windows, 16)

    def sym_code(impl):
        blob = impl.encode_symbols(syms, models.cdf, models.offsets,
                                   models.lows)
        return impl.decode_symbols(blob, models.cdf, models.offsets,
                                   models.lows)

    def bit_code(impl):
        blob = impl.encode_bits_adaptive(bits, ctx, 64)
        return impl.decode_bits_adaptive(blob, ctx, 64)

    return [("kdtree query", knn), ("farthest points", fps),
            ("window self-knn", self_knn), ("symbol coder", sym_code),
            ("adaptive bit coder", bit_code)]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000, help="point count")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in _cases(args.n, rng):
        py_s, py_out = _time(lambda: fn(_fallback), args.repeats)
        if _native is None:
            rows.append((name, None, py_s, None))
            continue
        nat_s, nat_out = _time(lambda: fn(_native), args.repeats)
        if not np.array_equal(np.asarray(nat_out), np.asarray(py_out)):
            raise SystemExit(f"backend mismatch on {name!r}")
        rows.append((name, nat_s, py_s, py_s / nat_s))

    print(f"n={args.n}  repeats={args.repeats} (best-of)")
    print(f"{'kernel':<20} {'native s':>10} {'python s':>10} {'speedup':>8}")
    for name, nat_s, py_s, speedup in rows:
        nat = f"{nat_s:.4f}" if nat_s is not None else "n/a"
        sp = f"{speedup:.1f}x" if speedup is not None else "-"
        print(f"{name:<20} {nat:>10} {py_s:>10.4f} {sp:>8}")
    if _native is None:
        print("compiled extension not available; python fallback only")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
