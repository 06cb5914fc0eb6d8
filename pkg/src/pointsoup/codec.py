"""End-to-end codec: configuration, model assembly, bitstream container.

The wire format (all little-endian):
  magic "PSUP" | version u8 | flags u8 | bone-codec-id u8 | bone-depth u8
  | N u64 | K u16 | M u32 | c u8 | u u8 | reserved u16
  | bone-len u32 | feat-len u32 | bone bytes | feature bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from pointsoup import awds, coder, dwem, dwus, geom, nn
from pointsoup.coder import DecodeError

MAGIC = b"PSUP"
VERSION = 1
BONE_CODEC_MORTON_DELTA = 1
FLAG_CRC = 1  # substreams carry CRC32 trailers

_HEADER = struct.Struct("<4sBBBBQHIBBHII")
HEADER_SIZE = _HEADER.size  # 34 bytes


class NumericError(ValueError):
    """Raised when encoding hits values the format cannot carry."""


@dataclass(frozen=True)
class CodecConfig:
    """All rate and architecture knobs. K is the only per-frame choice."""

    K: int = 128          # window size (rate knob)
    C: int = 128          # skin feature channels
    c: int = 16           # compact feature channels
    k: int = 8            # dilated window size
    k_m: int = 16         # intra-window mini-embedding neighborhood
    L: int = 2            # attention blocks
    r: int = 4            # R = K // r folding rows
    u: int = 2            # points per folding row
    r_max: int = 64       # folding grid rows available
    grid_dim: int = 8     # folding grid channels
    rps_factor: int = 16  # prefilter size multiplier for FPS
    bone_depth: int = 10  # grid bit depth for bone coding

    def __post_init__(self):
        if not 16 <= self.K <= self.r_max * self.r:
            raise ValueError(
                f"K={self.K} outside [16, {self.r_max * self.r}]")
        for name in ("C", "c", "k", "k_m", "L", "r", "u", "r_max",
                     "grid_dim", "rps_factor", "bone_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 1 <= self.bone_depth <= 16:
            raise ValueError("bone_depth must be in [1, 16]")

    def with_k(self, k: int) -> "CodecConfig":
        return replace(self, K=k)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**{k: int(v) for k, v in d.items()})


def choose_M(n: int, k: int) -> int:
    """Skeleton size M = floor(2N/K), never below 2."""
    if k > n:
        raise ValueError(f"window size {k} exceeds point count {n}")
    return max(2, (2 * n) // k)


def choose_R(k: int, r_div: int = 4) -> int:
    """Folding rows R = floor(K/r), never below 1."""
    return max(1, k // r_div)


class PointsoupModel(nn.Module):
    """All learnable stages under one parameter namespace."""

    def __init__(self, cfg: CodecConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.awds = awds.AwdsEncoder(cfg.C, cfg.k_m, cfg.L, rng)
        self.dwem = _DwemStage(cfg, rng)
        self.dwus = dwus.DwusDecoder(cfg.C, cfg.r_max, cfg.grid_dim, cfg.u, rng)
        self.cfg = cfg


class _DwemStage(nn.Module):
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        self.compaction = dwem.Compaction(cfg.C, cfg.c, rng)
        self.entropy = dwem.EntropyModel(cfg.C, cfg.c, rng)


def save_model(path, model: PointsoupModel, extra: dict | None = None) -> None:
    cfg = model.cfg.to_dict()
    if extra:
        cfg = {**cfg, "extra": extra}
    nn.save_weights(path, model.state(), cfg)


def load_model(path) -> PointsoupModel:
    cfg_dict, state = nn.load_weights(path)
    cfg_dict = dict(cfg_dict)
    cfg_dict.pop("extra", None)
    model = PointsoupModel(CodecConfig.from_dict(cfg_dict))
    model.load_state(state)
    return model


@dataclass(frozen=True)
class FrameHeader:
    n: int
    k: int
    m: int
    c: int
    u: int
    bone_depth: int
    bone_len: int
    feat_len: int
    flags: int = FLAG_CRC
    bone_codec: int = BONE_CODEC_MORTON_DELTA
    version: int = VERSION

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, self.flags, self.bone_codec,
                            self.bone_depth, self.n, self.k, self.m, self.c,
                            self.u, 0, self.bone_len, self.feat_len)

    @classmethod
    def parse(cls, blob: bytes) -> "FrameHeader":
        if len(blob) < HEADER_SIZE:
            raise DecodeError(f"frame shorter than header ({len(blob)} bytes)")
        (magic, version, flags, bone_codec, depth, n, k, m, c, u, _res,
         bone_len, feat_len) = _HEADER.unpack_from(blob, 0)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DecodeError(f"unsupported frame version {version}")
        if bone_codec != BONE_CODEC_MORTON_DELTA:
            raise DecodeError(f"unknown bone codec id {bone_codec}")
        hdr = cls(n=n, k=k, m=m, c=c, u=u, bone_depth=depth,
                  bone_len=bone_len, feat_len=feat_len, flags=flags,
                  bone_codec=bone_codec, version=version)
        if n < 1 or k < 1 or c < 1 or u < 1:
            raise DecodeError("degenerate header fields")
        if k > n or m != choose_M(n, k):
            raise DecodeError(f"header M={m} inconsistent with N={n}, K={k}")
        if HEADER_SIZE + bone_len + feat_len != len(blob):
            raise DecodeError("substream lengths do not match frame size")
        return hdr


def _grid_points(cloud, depth: int) -> np.ndarray:
    pts = geom.as_points(cloud)
    hi = (1 << depth) - 1
    if pts.min() < 0 or pts.max() > hi:
        raise ValueError(
            f"coordinates outside [0, {hi}]; normalize the cloud first")
    return pts


def encode(cloud, model: PointsoupModel, k: int | None = None,
           seed: int = 0) -> bytes:
    """Compress a normalized cloud into one frame.

    The entropy models are conditioned on the *decoded* bone stream, so
    the exact arrays the decoder will see drive the encoder's coder.
    """
    cfg = model.cfg if k is None else model.cfg.with_k(k)
    pts = _grid_points(cloud, cfg.bone_depth)
    n = pts.shape[0]
    if n < cfg.K:
        raise ValueError(f"cloud of {n} points is smaller than K={cfg.K}")

    bones, _wins, feats = awds.awds_encode(pts, cfg.K, model.awds, seed)
    bone_stream = coder.encode_bones(bones.points, cfg.bone_depth)

    # Rebuild bones exactly as the decoder will: Morton order, density
    # recomputed. Features follow the same permutation.
    dec_pts = coder.decode_bones(bone_stream)
    order = coder.morton_order(np.rint(bones.points).astype(np.int64))
    dec_bones = awds.make_bones(dec_pts.astype(np.float64))
    if not np.array_equal(dec_bones.points, bones.points[order]):
        raise AssertionError("bone codec round trip broke inside encode")
    feats = feats[order]

    dw = dwem.build_dilated_windows(dec_bones, cfg.k)
    with nn.no_grad():
        f = model.dwem.compaction.compact(nn.Tensor(feats))
    q = dwem.quantize(f.data)
    if np.any(np.abs(q) >= 1 << 31):
        raise NumericError("compact feature magnitude exceeds 32-bit range")
    mu, b = model.dwem.entropy.estimate_params(dw)
    models = coder.laplace_models(mu, b)
    feat_stream = coder.encode_feature_stream(q.reshape(-1), models)

    header = FrameHeader(n=n, k=cfg.K, m=len(dec_bones), c=cfg.c, u=cfg.u,
                         bone_depth=cfg.bone_depth, bone_len=len(bone_stream),
                         feat_len=len(feat_stream))
    return header.pack() + bone_stream + feat_stream


def decode(frame: bytes, model: PointsoupModel) -> np.ndarray:
    """Decompress one frame into an (M·R·u, 3) cloud."""
    hdr = FrameHeader.parse(frame)
    cfg = model.cfg
    if hdr.c != cfg.c or hdr.u != cfg.u:
        raise DecodeError(
            f"frame expects c={hdr.c}, u={hdr.u}; model has c={cfg.c}, u={cfg.u}")
    bone_stream = frame[HEADER_SIZE:HEADER_SIZE + hdr.bone_len]
    feat_stream = frame[HEADER_SIZE + hdr.bone_len:]

    bone_pts = coder.decode_bones(bone_stream)
    if bone_pts.shape[0] != hdr.m:
        raise DecodeError(
            f"bone substream holds {bone_pts.shape[0]} points, header says {hdr.m}")
    bones = awds.make_bones(bone_pts.astype(np.float64))
    dw = dwem.build_dilated_windows(bones, cfg.k)
    mu, b = model.dwem.entropy.estimate_params(dw)
    models = coder.laplace_models(mu, b)
    q = coder.decode_feature_stream(feat_stream, models)
    q = q.reshape(hdr.m, hdr.c).astype(nn.default_dtype())

    with nn.no_grad():
        feats = model.dwem.compaction.stretch(nn.Tensor(q)).data
    return dwus.dwus_decode(model.dwus, feats, bones, dw, hdr.k, cfg.r)


@dataclass(frozen=True)
class BppBreakdown:
    total: float
    bone: float
    feature: float
    header: float


def bits_per_point(frame: bytes) -> BppBreakdown:
    """Bits per input point, split by substream."""
    hdr = FrameHeader.parse(frame)
    scale = 8.0 / hdr.n
    return BppBreakdown(total=len(frame) * scale,
                        bone=hdr.bone_len * scale,
                        feature=hdr.feat_len * scale,
                        header=HEADER_SIZE * scale)


def encode_file(in_path, out_path, model: PointsoupModel,
                k: int | None = None, seed: int = 0) -> bytes:
    from pointsoup import ply

    cloud = ply.read_ply(in_path)
    frame = encode(cloud, model, k=k, seed=seed)
    with open(out_path, "wb") as fh:
        fh.write(frame)
    return frame


def decode_file(in_path, out_path, model: PointsoupModel,
                exact_n: bool = False, fmt: str = "binary") -> np.ndarray:
    from pointsoup import ply

    with open(in_path, "rb") as fh:
        frame = fh.read()
    rec = decode(frame, model)
    if exact_n:
        rec = resample_to(rec, FrameHeader.parse(frame).n)
    ply.write_ply(rec, out_path, fmt=fmt)
    return rec


def resample_to(points: np.ndarray, n: int) -> np.ndarray:
    """Resize a cloud to exactly n points (FPS subsample or tile-pad)."""
    pts = geom.as_points(points)
    if pts.shape[0] == n:
        return pts
    if pts.shape[0] > n:
        from pointsoup import kernels

        return pts[kernels.farthest_points(pts, n, 0)]
    reps = -(-n // pts.shape[0])
    return np.tile(pts, (reps, 1))[:n]
