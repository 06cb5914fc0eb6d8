"""Desk-scale training: synthetic surfaces, rate-distortion loss, Adam loop.

Training bypasses the bone coder entirely. Bones are lossless, so the
decoder-side structures (dilated windows, density) are identical either
way and skipping the coder just saves time. Quantization is replaced by
additive uniform noise so the rate term stays differentiable; index
selection (FPS, KNN) is treated as constant structure within a step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from pointsoup import awds, codec, dwem, dwus, geom, nn

SHAPE_NAMES = ("sphere", "box", "plane", "swissroll")
GRID_MAX = 1023.0


class TrainingDiverged(RuntimeError):
    """Loss left the reals. Carries a diagnostic snapshot dict."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lam: float = 1e-4
    lr: float = 5e-4
    batch_size: int = 1
    K: int = 128
    seed: int = 0
    n_clouds: int = 12
    min_points: int = 1024
    max_points: int = 8192
    log_every: int = 50

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")


def _unit_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _surface_sphere(rng, n):
    return _unit_sphere(rng, n)


def _surface_box(rng, n):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face % 3
    side = np.where(face < 3, -1.0, 1.0)
    for a in range(3):
        sel = axis == a
        others = [i for i in range(3) if i != a]
        pts[sel, a] = side[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _surface_plane(rng, n):
    """Flat sheet with a few circular holes punched out."""
    holes = rng.uniform(-0.7, 0.7, size=(3, 2))
    radii = rng.uniform(0.1, 0.25, size=3)
    pts = np.empty((0, 2))
    while pts.shape[0] < n:
        cand = rng.uniform(-1.0, 1.0, size=(2 * n, 2))
        d = np.linalg.norm(cand[:, None, :] - holes[None, :, :], axis=-1)
        cand = cand[(d > radii[None, :]).all(axis=1)]
        if cand.shape[0] == 0:
            raise ValueError("degenerate plane spec: holes cover the surface")
        pts = np.concatenate([pts, cand], axis=0)
    pts = pts[:n]
    z = 0.05 * np.sin(3.0 * pts[:, 0]) * np.cos(2.0 * pts[:, 1])
    return np.column_stack([pts, z])


def _surface_swissroll(rng, n):
    t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    y = rng.uniform(-1.0, 1.0, size=n)
    roll = np.column_stack([t * np.cos(t), 10.0 * y, t * np.sin(t)])
    return roll / np.abs(roll).max()


_SURFACES = {
    "sphere": _surface_sphere,
    "box": _surface_box,
    "plane": _surface_plane,
    "swissroll": _surface_swissroll,
}


def generate_synthetic(spec, seed: int) -> np.ndarray:
    """Sample a seeded cloud from a parametric surface, on the 10-bit grid.

    spec is a shape name or a (name, n_points) pair.
    """
    if isinstance(spec, str):
        name, n = spec, 4096
    else:
        name, n = spec
    if name not in _SURFACES:
        raise ValueError(f"unknown shape {name!r}; choose from {SHAPE_NAMES}")
    n = int(n)
    if n < 8:
        raise ValueError("spec must request at least 8 points")
    rng = np.random.default_rng(seed)
    raw = _SURFACES[name](rng, n)
    lo = raw.min(axis=0)
    extent = (raw.max(axis=0) - lo).max()
    if extent <= 0:
        raise ValueError(f"degenerate {name!r} spec: zero-extent surface")
    return np.rint((raw - lo) / extent * GRID_MAX)


@dataclass(frozen=True)
class TrainExample:
    """Weight-independent per-cloud structure, built once and reused."""

    points: np.ndarray
    bones: awds.Bones
    windows: np.ndarray
    dw: dwem.DilatedWindows


def prepare_example(points, k: int, dilated_k: int, seed: int) -> TrainExample:
    pts = geom.as_points(points)
    bones = awds.sample_bones(pts, codec.choose_M(pts.shape[0], k), seed)
    wins = awds.build_aligned_windows(pts, bones, k)
    dw = dwem.build_dilated_windows(bones, dilated_k)
    return TrainExample(pts, bones, wins.windows, dw)


def chamfer_loss(points: np.ndarray, rec: nn.Tensor) -> nn.Tensor:
    """Differentiable symmetric chamfer; NN indices held constant."""
    rec_np = rec.data
    idx_ab = geom.knn(rec_np, points, 1)[:, 0]
    idx_ba = geom.knn(points, rec_np, 1)[:, 0]
    ref = nn.Tensor(points.astype(rec.data.dtype))
    d_ab = ref - rec[idx_ab]
    d_ba = rec - ref[idx_ba]
    return (d_ab * d_ab).sum(axis=-1).mean() + (d_ba * d_ba).sum(axis=-1).mean()


def loss(points, rec, rate_bpp, lam: float):
    """Rate-distortion objective: chamfer + lambda * bits-per-point."""
    pts = geom.as_points(points)
    if isinstance(rec, nn.Tensor):
        return chamfer_loss(pts, rec) + rate_bpp * lam
    cd = geom.chamfer_distance(pts, rec)
    return cd + lam * (rate_bpp.item() if isinstance(rate_bpp, nn.Tensor)
                       else float(rate_bpp))


def _forward(model: codec.PointsoupModel, ex: TrainExample,
             rng: np.random.Generator):
    """Noise-path forward pass; returns (rec Tensor, rate Tensor)."""
    cfg = model.cfg
    feats = model.awds.aggregate(ex.windows)
    f = model.dwem.compaction.compact(feats)
    f_noisy = dwem.add_noise(f, rng)

    dtype = nn.default_dtype()
    mu, b = model.dwem.entropy(nn.Tensor(ex.dw.rel.astype(dtype)))
    p = dwem.likelihood(f_noisy, mu, b)
    rate_bpp = dwem.rate(p, ex.points.shape[0])

    skin = model.dwem.compaction.stretch(f_noisy)
    refined = dwus.refine_features(model.dwus, skin, ex.dw)
    r = codec.choose_R(ex.windows.shape[1], cfg.r)
    aligned = dwus.fold_generate(model.dwus, refined, r, "train", rng)
    centers = nn.Tensor(ex.bones.points[:, None, :].astype(dtype))
    rec = aligned * ex.bones.d + centers
    return rec.reshape(len(ex.bones) * r * cfg.u, 3), rate_bpp


def train_step(model: codec.PointsoupModel, ex: TrainExample,
               opt: nn.Adam, lam: float, rng: np.random.Generator,
               step: int = 0) -> dict:
    """One noise-path forward/backward/Adam update. Returns metrics."""
    model.zero_grad()
    rec, rate_bpp = _forward(model, ex, rng)
    # catch broken weights before chamfer's KNN rejects the NaN cloud
    if not (np.all(np.isfinite(rec.data)) and np.isfinite(rate_bpp.item())):
        raise TrainingDiverged(
            f"non-finite reconstruction at step {step}",
            {"step": step, "rate_bpp": float(rate_bpp.item()),
             "n_points": int(ex.points.shape[0]), "m": len(ex.bones)})
    total = loss(ex.points, rec, rate_bpp, lam)
    cd = float(total.item() - lam * rate_bpp.item())
    metrics = {"step": step, "loss": float(total.item()), "cd": cd,
               "rate_bpp": float(rate_bpp.item())}
    if not np.isfinite(total.item()):
        raise TrainingDiverged(
            f"non-finite loss at step {step}", {**metrics,
            "n_points": int(ex.points.shape[0]), "m": len(ex.bones)})
    total.backward()
    opt.step()
    return metrics


def build_dataset(cfg: TrainConfig) -> list[np.ndarray]:
    """Seeded mixed-shape clouds; sizes spread over [min_points, max_points]."""
    rng = np.random.default_rng(cfg.seed)
    clouds = []
    for i in range(cfg.n_clouds):
        name = SHAPE_NAMES[i % len(SHAPE_NAMES)]
        n = int(rng.integers(cfg.min_points, cfg.max_points + 1))
        clouds.append(generate_synthetic((name, n), int(rng.integers(2**31))))
    return clouds


def train(model: codec.PointsoupModel, cfg: TrainConfig,
          out_path=None, log=None) -> list[dict]:
    """Run the loop over a synthetic dataset; returns the metric trace.

    Per-cloud structures are cached across steps: they depend only on
    geometry and the sampling seed, never on weights.
    """
    clouds = build_dataset(cfg)
    examples = [prepare_example(c, cfg.K, model.cfg.k, cfg.seed + i)
                for i, c in enumerate(clouds)]
    opt = nn.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for step in range(1, cfg.steps + 1):
        ex = examples[(step - 1) % len(examples)]
        metrics = train_step(model, ex, opt, cfg.lam, rng, step)
        trace.append(metrics)
        if log is not None and (step % cfg.log_every == 0 or step == 1):
            log(f"step {step:5d}  loss {metrics['loss']:.4f}  "
                f"cd {metrics['cd']:.4f}  rate {metrics['rate_bpp']:.4f}")
    if out_path is not None:
        save_checkpoint(out_path, model, cfg, trace)
    return trace


def save_checkpoint(path, model: codec.PointsoupModel, cfg: TrainConfig,
                    trace: list[dict]) -> None:
    """Weights archive plus a JSON sidecar with config and metric trace."""
    codec.save_model(path, model, extra={"steps": len(trace)})
    meta = {
        "train_config": {f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
        "model_config": model.cfg.to_dict(),
        "steps": len(trace),
        "final": trace[-1] if trace else None,
        "trace": trace,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=1)
