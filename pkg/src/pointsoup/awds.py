"""Encoder analysis stage: bones, aligned windows, window aggregation.

A cloud is summarized by M bone points (two-stage sampling), each bone
carrying one skin feature aggregated from its aligned K-point window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pointsoup import geom, kernels, nn

# Windows are aggregated in fixed-size batches; constant so repeated
# runs produce identical float results.
_WINDOW_CHUNK = 512


@dataclass(frozen=True)
class Bones:
    """FPS-selected skeleton points with their density d."""

    points: np.ndarray  # (M, 3) float64
    d: float            # mean nearest-neighbor distance over the bones

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"bad bone array shape {self.points.shape}")
        if not (np.isfinite(self.d) and self.d > 0):
            raise ValueError(f"bone density must be positive, got {self.d}")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class AlignedWindowSet:
    """Per-bone aligned neighborhoods: row 0 of every window is the bone."""

    windows: np.ndarray  # (M, K, 3) float64, (P[idx] - bone) / d
    indices: np.ndarray  # (M, K) int64 into the source cloud

    def __len__(self) -> int:
        return self.windows.shape[0]


def make_bones(points: np.ndarray) -> Bones:
    """Wrap a bone coordinate array, computing its density."""
    pts = geom.as_points(points)
    if pts.shape[0] < 2:
        raise ValueError("a skeleton needs at least 2 bones")
    return Bones(points=pts, d=geom.mean_nn_distance(pts))


def sample_bones(cloud, m: int, seed: int) -> Bones:
    """Two-stage skeleton sampling: seeded RPS prefilter, then FPS.

    The prefilter caps FPS cost at 16·m candidates; when the cloud is
    already that small the prefilter draws every point and the result
    is plain FPS.
    """
    pts = geom.as_points(cloud)
    n = pts.shape[0]
    if not 2 <= m <= n:
        raise ValueError(f"m={m} out of range for {n} points")
    n_sub = min(n, 16 * m)
    # Sorted so a full draw is the identity (pure FPS) and FPS tie-breaks
    # follow original index order.
    sub_idx = np.sort(geom.random_sample(pts, n_sub, seed))
    sub = pts[sub_idx]
    sel = kernels.farthest_points(sub, m, 0)
    return make_bones(pts[sub_idx[sel]])


def build_aligned_windows(cloud, bones: Bones, k: int) -> AlignedWindowSet:
    """K nearest input points per bone, shifted to the bone and scaled by 1/d."""
    pts = geom.as_points(cloud)
    if k > pts.shape[0]:
        raise ValueError(f"window size {k} exceeds cloud size {pts.shape[0]}")
    idx, _ = kernels.KDTree(pts).query(bones.points, k)
    windows = (pts[idx] - bones.points[:, None, :]) / bones.d
    return AlignedWindowSet(windows=windows, indices=idx)


class AwdsEncoder(nn.Module):
    """Window aggregation network: mini-embedding, attention, max-pool."""

    def __init__(self, channels: int, k_m: int, n_blocks: int,
                 rng: np.random.Generator):
        self.mini = nn.GraphConv([3, 64, channels], rng)
        self.attn = [nn.AttentionBlock(channels, rng) for _ in range(n_blocks)]
        self._k_m = k_m

    def aggregate(self, windows: np.ndarray) -> nn.Tensor:
        """Aggregate aligned windows (B, K, 3) into skin features (B, C)."""
        if windows.ndim != 3 or windows.shape[2] != 3:
            raise ValueError(f"expected (B, K, 3) windows, got {windows.shape}")
        k = windows.shape[1]
        k_m = min(self._k_m, k)
        nbr = kernels.self_knn_batch(windows, k_m)
        b = np.arange(windows.shape[0])[:, None, None]
        groups = nn.Tensor(windows[b, nbr].astype(nn.default_dtype()))
        aligned = nn.Tensor(windows.astype(nn.default_dtype()))
        feats = self.mini(groups)
        for blk in self.attn:
            feats = blk(feats, aligned)
        return feats.amax(axis=1)


def aggregate_window(encoder: AwdsEncoder, window: np.ndarray) -> np.ndarray:
    """Single-window convenience wrapper: (K, 3) -> (C,) feature."""
    window = np.asarray(window, dtype=np.float64)
    with nn.no_grad():
        return encoder.aggregate(window[None]).data[0]


def awds_encode(cloud, k: int, encoder: AwdsEncoder, seed: int):
    """Full analysis pass: returns (Bones, AlignedWindowSet, features (M, C))."""
    pts = geom.as_points(cloud)
    n = pts.shape[0]
    if n < k:
        raise ValueError(f"cloud of {n} points is smaller than window size {k}")
    m = max(2, (2 * n) // k)
    bones = sample_bones(pts, m, seed)
    wins = build_aligned_windows(pts, bones, k)
    chunks = []
    with nn.no_grad():
        for s in range(0, len(wins), _WINDOW_CHUNK):
            chunk = wins.windows[s:s + _WINDOW_CHUNK]
            chunks.append(encoder.aggregate(chunk).data)
    feats = np.concatenate(chunks, axis=0)
    return bones, wins, feats
