"""Cross-scale entropy stage over dilated bone windows.

Feature distributions are predicted purely from decoded bone geometry,
so the decoder can rebuild the exact same entropy models before reading
a single feature symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pointsoup import kernels, nn
from pointsoup.awds import Bones

_SCALE_FLOOR = 1e-9
_PROB_FLOOR = 1e-9

# Fixed forward batch: encoder and decoder must run parameter estimation
# with identical array shapes to get identical float32 results.
_PARAM_CHUNK = 4096


@dataclass(frozen=True)
class DilatedWindows:
    """Per-bone neighborhoods over the bone set itself (self at rank 0)."""

    indices: np.ndarray  # (M, k) int64 into the bones
    rel: np.ndarray      # (M, k, 3) float64, (neighbor - center) / d

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def build_dilated_windows(bones: Bones, k: int) -> DilatedWindows:
    """k-NN of every bone over the bones; k clamps to M for tiny skeletons."""
    m = len(bones)
    k = min(k, m)
    idx, _ = kernels.KDTree(bones.points).query(bones.points, k)
    rel = (bones.points[idx] - bones.points[:, None, :]) / bones.d
    return DilatedWindows(indices=idx, rel=rel)


def quantize(f: np.ndarray) -> np.ndarray:
    """Round half away from zero to int64 (quantization step 1)."""
    f = np.asarray(f, dtype=np.float64)
    return np.trunc(f + np.copysign(0.5, f)).astype(np.int64)


def add_noise(f: nn.Tensor, rng: np.random.Generator) -> nn.Tensor:
    """Training-time quantization proxy: additive i.i.d. U(-1/2, 1/2)."""
    return f + nn.Tensor(rng.uniform(-0.5, 0.5, size=f.shape))


class EntropyModel(nn.Module):
    """GraphConv + regression head mapping dilated windows to (mu, b)."""

    def __init__(self, channels: int, n_compact: int, rng: np.random.Generator):
        self.conv = nn.GraphConv([3, 64, channels], rng)
        self.head = nn.MLP([channels, channels, 2 * n_compact], rng)
        self._c = n_compact

    def __call__(self, rel: nn.Tensor):
        """rel (M, k, 3) -> (mu (M, c), b (M, c)) with b > 0."""
        out = self.head(self.conv(rel))
        mu = out[..., :self._c]
        b = out[..., self._c:].softplus() + _SCALE_FLOOR
        return mu, b

    def estimate_params(self, dw: DilatedWindows):
        """Inference path: fixed-chunk evaluation, returns float32 arrays."""
        mus, bs = [], []
        with nn.no_grad():
            for s in range(0, len(dw), _PARAM_CHUNK):
                rel = nn.Tensor(dw.rel[s:s + _PARAM_CHUNK].astype(nn.default_dtype()))
                mu, b = self(rel)
                mus.append(mu.data)
                bs.append(b.data)
        return np.concatenate(mus, axis=0), np.concatenate(bs, axis=0)


class Compaction(nn.Module):
    """The C->c bottleneck and its c->C inverse (single affine maps)."""

    def __init__(self, channels: int, n_compact: int, rng: np.random.Generator):
        self.compact = nn.Linear(channels, n_compact, rng)
        self.stretch = nn.Linear(n_compact, channels, rng)


def likelihood(x, mu: nn.Tensor, b: nn.Tensor) -> nn.Tensor:
    """P(x) = CDF_L(x + 1/2) - CDF_L(x - 1/2), floored at 1e-9.

    Written via sign decomposition so no exponential ever overflows:
    F(t) = 1/2 + sign(t)·(1 - e^(-|t|/b))/2. The sign factors are treated
    as constants under differentiation (correct almost everywhere).
    """
    x = x if isinstance(x, nn.Tensor) else nn.Tensor(x)
    u1 = x - mu + 0.5
    u2 = x - mu - 0.5
    s1 = np.sign(u1.data)
    s2 = np.sign(u2.data)
    e1 = (u1.abs() * b.reciprocal() * -1.0).exp()
    e2 = (u2.abs() * b.reciprocal() * -1.0).exp()
    p = nn.Tensor(0.5 * (s1 - s2)) - (e1 * (0.5 * s1) - e2 * (0.5 * s2))
    return p.clip_min(_PROB_FLOOR)


def rate(p: nn.Tensor, n_points: int) -> nn.Tensor:
    """Expected bits per input point: -(1/N)·sum log2 P."""
    if n_points < 1:
        raise ValueError("n_points must be positive")
    return p.log().sum() * (-1.0 / (np.log(2.0) * n_points))
