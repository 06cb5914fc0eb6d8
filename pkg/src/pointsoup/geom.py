"""Point cloud containers, sampling primitives, and evaluation metrics."""

from __future__ import annotations

import numpy as np

from pointsoup import kernels


def as_points(cloud) -> np.ndarray:
    """Coerce a PointCloud or array-like into a validated (N, 3) float64 array."""
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.ascontiguousarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {pts.shape}")
    if pts.shape[0] < 1:
        raise ValueError("point cloud is empty")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


class PointCloud:
    """An immutable N×3 coordinate set, N ≥ 1, all coordinates finite."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = as_points(points)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __setattr__(self, name, value):
        raise AttributeError("PointCloud is immutable")

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"


class SpatialIndex:
    """Exact k-NN index over one cloud.

    Answers match brute force under the ordering (ascending squared
    distance, then ascending point index).
    """

    __slots__ = ("points", "_tree")

    def __init__(self, cloud):
        self.points = as_points(cloud)
        self._tree = kernels.KDTree(self.points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries, k: int):
        """Return (indices, sq_distances), each (Q, k)."""
        q = as_points(queries)
        return self._tree.query(q, k)


def build_index(cloud) -> SpatialIndex:
    return SpatialIndex(cloud)


def knn(index, queries, k: int) -> np.ndarray:
    """Indices (Q, k) of the k nearest indexed points to each query.

    A query that is itself a member of the indexed cloud matches itself
    at rank 0, which is what window construction relies on.
    """
    if not isinstance(index, SpatialIndex):
        index = SpatialIndex(index)
    idx, _ = index.query(queries, k)
    return idx


def random_sample(cloud, m: int, seed: int) -> np.ndarray:
    """m distinct indices drawn uniformly without replacement."""
    pts = as_points(cloud)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m={m} out of range for {n} points")
    rng = np.random.default_rng(seed)
    return rng.choice(n, size=m, replace=False).astype(np.int64)


def farthest_point_sample(cloud, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min index selection; ties pick the smaller index."""
    pts = as_points(cloud)
    return kernels.farthest_points(pts, m, start)


def mean_nn_distance(cloud) -> float:
    """Mean distance from each point to its nearest other point.

    The per-point distances are sorted before averaging so the result is
    bit-identical under any permutation of the input; encoder and decoder
    rely on computing the same density from differently ordered bones.
    """
    pts = as_points(cloud)
    if pts.shape[0] < 2:
        raise ValueError("mean_nn_distance needs at least 2 points")
    idx, d2 = kernels.KDTree(pts).query(pts, 2)
    # Rank 0 is the point itself (distance 0, index tie-break); with
    # duplicate coordinates rank 1 may still be distance 0, which is the
    # true nearest-other distance.
    nnd = np.sort(np.sqrt(d2[:, 1]))
    return float(nnd.sum() / nnd.shape[0])


def _directed_sq_means(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    _, d2_ab = kernels.KDTree(b).query(a, 1)
    _, d2_ba = kernels.KDTree(a).query(b, 1)
    return float(np.mean(d2_ab)), float(np.mean(d2_ba))


def chamfer_distance(a, b) -> float:
    """Symmetric sum of the two directed means of squared NN distances."""
    pa, pb = as_points(a), as_points(b)
    m_ab, m_ba = _directed_sq_means(pa, pb)
    return m_ab + m_ba


def d1_psnr(a, b, peak: float = 1023.0) -> float:
    """Point-to-point PSNR, 10·log10(3·peak² / MSE); +inf when MSE = 0."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    pa, pb = as_points(a), as_points(b)
    m_ab, m_ba = _directed_sq_means(pa, pb)
    mse = 0.5 * (m_ab + m_ba)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(3.0 * peak * peak / mse))
