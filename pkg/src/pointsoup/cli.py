"""Command-line surface: encode, decode, train, eval, info.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 format, 5 numeric. Every failure
prints a single `error: ...` line to stderr. POINTSOUP_THREADS caps the
eval worker count (0 or unset = auto).
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import time

import numpy as np

from pointsoup import codec, coder, geom, nn, ply, train as train_mod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5

K_MIN, K_MAX = 16, 256
EVAL_SCHEMA = ("frame,n,k,m,bpp_total,bpp_bone,bpp_feature,bpp_header,"
               "chamfer,d1_psnr,dec_s")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _worker_count() -> int:
    raw = os.environ.get("POINTSOUP_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"POINTSOUP_THREADS={raw!r} is not an integer")
    if n < 0:
        raise ValueError("POINTSOUP_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def _seed_of(args) -> int:
    if args.seed is None:
        seed = secrets.randbelow(2**31)
        _say(f"seed: {seed} (pass --seed {seed} to reproduce)")
        return seed
    return args.seed


def _load_model(path) -> codec.PointsoupModel:
    try:
        return codec.load_model(path)
    except ValueError as exc:
        raise coder.DecodeError(f"weights archive {path}: {exc}") from None


def _clamp_k(k: int | None) -> int | None:
    if k is None:
        return None
    clamped = min(K_MAX, max(K_MIN, k))
    if clamped != k:
        _say(f"window size {k} clamped to {clamped} (valid range "
             f"[{K_MIN}, {K_MAX}])")
    return clamped


def cmd_encode(args) -> int:
    pts = ply.read_ply(args.input)
    model = _load_model(args.weights)
    seed = _seed_of(args)
    if args.normalize:
        lo = pts.min(axis=0)
        extent = float((pts.max(axis=0) - lo).max())
        if extent <= 0:
            raise ValueError("cannot normalize a zero-extent cloud")
        scale = 1023.0 / extent
        pts = np.clip(np.rint((pts - lo) * scale), 0, 1023)
        sidecar = {"scale": scale, "offset": lo.tolist(),
                   "inverse": "world = grid / scale + offset"}
        with open(args.output + ".norm.json", "w") as fh:
            json.dump(sidecar, fh, indent=1)
    t0 = time.perf_counter()
    frame = codec.encode(pts, model, k=_clamp_k(args.window_size), seed=seed)
    dt = time.perf_counter() - t0
    with open(args.output, "wb") as fh:
        fh.write(frame)
    hdr = codec.FrameHeader.parse(frame)
    bpp = codec.bits_per_point(frame)
    print(f"encoded {args.input}: N={hdr.n} K={hdr.k} M={hdr.m} "
          f"bytes={len(frame)} enc_s={dt:.3f}")
    print(f"bpp total={bpp.total:.4f} bone={bpp.bone:.4f} "
          f"feature={bpp.feature:.4f} header={bpp.header:.4f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    with open(args.input, "rb") as fh:
        frame = fh.read()
    model = _load_model(args.weights)
    t0 = time.perf_counter()
    rec = codec.decode(frame, model)
    dt = time.perf_counter() - t0
    if args.exact_n:
        rec = codec.resample_to(rec, codec.FrameHeader.parse(frame).n)
    ply.write_ply(rec, args.output, fmt="ascii" if args.ascii else "binary")
    print(f"decoded {args.input}: points={rec.shape[0]} dec_s={dt:.3f}")
    return EXIT_OK


def _eval_row(name, frame, model, ref):
    t0 = time.perf_counter()
    rec = codec.decode(frame, model)
    dt = time.perf_counter() - t0
    hdr = codec.FrameHeader.parse(frame)
    bpp = codec.bits_per_point(frame)
    cd = geom.chamfer_distance(ref, rec)
    psnr = geom.d1_psnr(ref, rec)
    return (bpp.total,
            f"{name},{hdr.n},{hdr.k},{hdr.m},{bpp.total:.6f},{bpp.bone:.6f},"
            f"{bpp.feature:.6f},{bpp.header:.6f},{cd:.6f},{psnr:.4f},{dt:.4f}")


def cmd_eval(args) -> int:
    ref = ply.read_ply(args.reference)
    model = _load_model(args.weights)
    frames = []
    for path in args.frames:
        with open(path, "rb") as fh:
            frames.append((path, fh.read()))
    workers = _worker_count()
    if workers > 1 and len(frames) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda nf: _eval_row(nf[0], nf[1], model, ref), frames))
    else:
        rows = [_eval_row(name, frame, model, ref) for name, frame in frames]
    rows.sort(key=lambda r: r[0])
    lines = ["# pointsoup-eval v1", EVAL_SCHEMA] + [r[1] for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _seed_of(args)
    mcfg = codec.CodecConfig(K=args.k)
    tcfg = train_mod.TrainConfig(steps=args.steps, lam=args.rate_lambda,
                                 lr=args.lr, K=args.k, seed=seed,
                                 n_clouds=args.clouds)
    model = codec.PointsoupModel(mcfg, seed=seed)
    log = None if args.quiet else _say
    train_mod.train(model, tcfg, out_path=args.out, log=log)
    print(f"trained {args.steps} steps -> {args.out} "
          f"({model.num_parameters()} parameters)")
    return EXIT_OK


def cmd_info(args) -> int:
    with open(args.path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == codec.MAGIC:
        hdr = codec.FrameHeader.parse(blob)
        bpp = codec.bits_per_point(blob)
        print(f"pointsoup frame v{hdr.version}: N={hdr.n} K={hdr.k} "
              f"M={hdr.m} c={hdr.c} u={hdr.u} depth={hdr.bone_depth}")
        print(f"substreams: bone={hdr.bone_len}B feature={hdr.feat_len}B "
              f"header={codec.HEADER_SIZE}B total={len(blob)}B")
        print(f"bpp total={bpp.total:.4f} bone={bpp.bone:.4f} "
              f"feature={bpp.feature:.4f} header={bpp.header:.4f}")
        return EXIT_OK
    if blob[:4] == nn.WEIGHTS_MAGIC:
        try:
            cfg, state = nn.load_weights(args.path)
        except ValueError as exc:
            raise coder.DecodeError(f"weights archive: {exc}") from None
        n_params = sum(int(np.prod(a.shape)) for a in state.values())
        print(f"pointsoup weights: {n_params} parameters in "
              f"{len(state)} arrays, {len(blob)} bytes")
        print("config: " + json.dumps(cfg, sort_keys=True))
        return EXIT_OK
    raise coder.DecodeError(
        f"{args.path}: unrecognized magic {blob[:4]!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pointsoup",
        description="Learned point-cloud geometry codec.")
    sub = p.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="compress a PLY cloud into a frame")
    enc.add_argument("input")
    enc.add_argument("output")
    enc.add_argument("--weights", required=True)
    enc.add_argument("--window-size", type=int, default=None,
                     help="rate knob K (clamped to [16, 256])")
    enc.add_argument("--seed", type=int, default=None)
    enc.add_argument("--normalize", action="store_true",
                     help="map to the 10-bit grid; writes a .norm.json "
                          "sidecar with the inverse transform")
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="decompress a frame into a PLY")
    dec.add_argument("input")
    dec.add_argument("output")
    dec.add_argument("--weights", required=True)
    dec.add_argument("--exact-n", action="store_true",
                     help="resample output to exactly header N points")
    dec.add_argument("--ascii", action="store_true",
                     help="write ascii PLY instead of binary")
    dec.set_defaults(func=cmd_decode)

    ev = sub.add_parser("eval", help="rate-distortion report for frames")
    ev.add_argument("reference")
    ev.add_argument("frames", nargs="*")
    ev.add_argument("--weights", required=True)
    ev.add_argument("--out", default=None, help="CSV path (default stdout)")
    ev.set_defaults(func=cmd_eval)

    tr = sub.add_parser("train", help="train weights on synthetic surfaces")
    tr.add_argument("--out", required=True)
    tr.add_argument("--steps", type=int, default=2000)
    tr.add_argument("--lambda", dest="rate_lambda", type=float, default=1e-4)
    tr.add_argument("--lr", type=float, default=5e-4)
    tr.add_argument("--k", type=int, default=128)
    tr.add_argument("--clouds", type=int, default=12)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    info = sub.add_parser("info", help="describe a frame or weights archive")
    info.add_argument("path")
    info.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        _say(f"error: {exc}")
        return EXIT_IO
    except (ply.PlyError, coder.DecodeError) as exc:
        _say(f"error: {exc}")
        return EXIT_FORMAT
    except (codec.NumericError, train_mod.TrainingDiverged,
            FloatingPointError) as exc:
        _say(f"error: {exc}")
        return EXIT_NUMERIC
    except ValueError as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
