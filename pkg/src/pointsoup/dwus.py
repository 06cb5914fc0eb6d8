"""Decoder synthesis stage: feature refinement, folding, inverse align.

Reuses the dilated windows already built for entropy modeling, so the
decoder never touches the dense input-scale geometry.
"""

from __future__ import annotations

import numpy as np

from pointsoup import nn
from pointsoup.awds import Bones
from pointsoup.dwem import DilatedWindows

# Decoder-side folding runs in fixed-size window batches: constant so
# repeated decodes are byte-identical and memory stays bounded.
_FOLD_CHUNK = 4096


class DwusDecoder(nn.Module):
    """Refinement GraphConv plus the two folding networks."""

    def __init__(self, channels: int, r_max: int, grid_dim: int, u: int,
                 rng: np.random.Generator):
        self.refine = nn.GraphConv([channels + 3, channels, channels], rng)
        self.fold1 = nn.MLP([channels, 512, r_max * grid_dim], rng)
        self.fold2 = nn.MLP([grid_dim + channels, 256, 128, 3 * u], rng)
        self.r_max = r_max
        self.grid_dim = grid_dim
        self.u = u


def refine_features(dec: DwusDecoder, feats: nn.Tensor,
                    dw: DilatedWindows) -> nn.Tensor:
    """Residual GraphConv over gathered neighbor features (C+3 channels)."""
    if feats.shape[0] != len(dw):
        raise ValueError("feature count does not match dilated windows")
    nbr = nn.gather(feats, dw.indices)
    rel = nn.Tensor(dw.rel.astype(nn.default_dtype()))
    return feats + dec.refine(nn.concat([nbr, rel], axis=-1))


def grid_rows(dec: DwusDecoder, r: int, mode: str, rng=None) -> np.ndarray:
    """Row selection into the folding grid: strided at infer, seeded at train."""
    if not 1 <= r <= dec.r_max:
        raise ValueError(f"R={r} out of range [1, {dec.r_max}]")
    if mode == "infer":
        return (np.arange(r, dtype=np.int64) * dec.r_max) // r
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode row sampling needs an rng")
        return np.sort(rng.choice(dec.r_max, size=r, replace=False))
    raise ValueError(f"unknown folding mode {mode!r}")


def fold_generate(dec: DwusDecoder, feats: nn.Tensor, r: int,
                  mode: str = "infer", rng=None) -> nn.Tensor:
    """Fold features (M, C) into aligned coordinates (M, R·u, 3).

    Folding-1 expands each feature to an R_max×D grid; R rows are
    selected, each concatenated with the source feature; Folding-2 maps
    every row to u points.
    """
    m, c = feats.shape
    rows = grid_rows(dec, r, mode, rng)
    grid = dec.fold1(feats).reshape(m, dec.r_max, dec.grid_dim)[:, rows, :]
    ctx = feats.reshape(m, 1, c).expand((m, r, c))
    out = dec.fold2(nn.concat([grid, ctx], axis=-1))
    return out.reshape(m, r * dec.u, 3)


def inverse_align(aligned: np.ndarray, bones: Bones) -> np.ndarray:
    """Map per-window aligned coordinates back to the input frame."""
    a = np.asarray(aligned, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] != len(bones):
        raise ValueError(f"bad aligned window shape {a.shape}")
    if len(bones) < 2:
        raise ValueError("inverse alignment needs at least 2 bones")
    pts = a * bones.d + bones.points[:, None, :]
    return pts.reshape(-1, 3)


def dwus_decode(dec: DwusDecoder, feats: np.ndarray, bones: Bones,
                dw: DilatedWindows, k: int, r_div: int = 4) -> np.ndarray:
    """Full synthesis pass: refine, fold (infer mode), inverse align."""
    r = max(1, k // r_div)
    dtype = nn.default_dtype()
    all_feats = np.asarray(feats, dtype=dtype)
    if all_feats.shape[0] != len(dw):
        raise ValueError("feature count does not match dilated windows")
    out = []
    with nn.no_grad():
        for s in range(0, len(dw), _FOLD_CHUNK):
            e = min(len(dw), s + _FOLD_CHUNK)
            # neighbor indices are global, so gather from the full matrix
            group = np.concatenate(
                [all_feats[dw.indices[s:e]], dw.rel[s:e].astype(dtype)], axis=-1)
            refined = nn.Tensor(all_feats[s:e]) + dec.refine(nn.Tensor(group))
            out.append(fold_generate(dec, refined, r, "infer").data)
    aligned = np.concatenate(out, axis=0)
    return inverse_align(aligned, bones)
