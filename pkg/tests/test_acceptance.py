"""End-to-end acceptance checks, one test per criterion.

Run with -v to get a pass/fail line per criterion. The trained-weights
criteria (06-09) share the session-scoped 2000-step training fixture.
"""

import time

import numpy as np
import pytest
from test_geom import brute_chamfer, brute_fps, brute_knn, brute_mean_nn

from pointsoup import awds, codec, coder, dwem, dwus, geom, nn, train


def test_criterion_01_coder_exactness():
    # 1e5 randomized (symbols, models) round trips, zero mismatches, <60s
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    done = 0
    while done < 100_000:
        n = 2_000
        mu = rng.uniform(-50.0, 50.0, size=n)
        b = rng.uniform(0.05, 40.0, size=n)
        models = coder.laplace_models(mu, b)
        syms = np.rint(mu + rng.laplace(0.0, b)).astype(np.int64)
        esc = rng.random(n) < 0.02  # force some escape-path symbols
        syms[esc] = rng.integers(-2**31, 2**31, size=int(esc.sum()))
        out = coder.decode_symbols(coder.encode_symbols(syms, models), models)
        assert np.array_equal(out, syms)
        done += n
    assert time.perf_counter() - t0 < 60.0


def test_criterion_02_entropy_tightness():
    # coded length within 1% + 64 bits of the Shannon bound on 1e4 iid draws
    n = 10_000
    mu_v, b_v = 3.3, 4.0
    w = int(np.clip(np.ceil(12.0 * b_v), 4, 512))
    xs = np.rint(mu_v) + np.arange(-w, w + 1, dtype=np.float64)
    pmf = coder._laplace_bin_pmf(np.float64(mu_v), np.float64(b_v), xs)
    pmf = np.maximum(pmf, 0.0)
    pmf /= pmf.sum()
    rng = np.random.default_rng(202)
    symbols = rng.choice(xs.astype(np.int64), size=n, p=pmf)
    models = coder.laplace_models(np.full(n, mu_v), np.full(n, b_v))
    coded_bits = 8 * len(coder.encode_symbols(symbols, models))
    shannon = n * float(-(pmf * np.log2(pmf)).sum())
    ideal = float(-np.log2(pmf[np.searchsorted(xs, symbols)]).sum())
    assert coded_bits <= shannon * 1.01 + 64
    assert coded_bits <= ideal * 1.01 + 64


def test_criterion_03_bone_losslessness():
    # 1e3 random 10-bit bone sets: lossless round trip, density bit-exact
    rng = np.random.default_rng(303)
    for _ in range(1_000):
        m = int(rng.integers(8, 4097))
        pts = np.unique(rng.integers(0, 1024, size=(m, 3)), axis=0)
        while pts.shape[0] < 8:
            pts = np.unique(rng.integers(0, 1024, size=(m, 3)), axis=0)
        stream = coder.encode_bones(pts.astype(np.float64), 10)
        dec = coder.decode_bones(stream)
        order = coder.morton_order(pts)
        assert np.array_equal(dec, pts[order])
        d_enc = awds.make_bones(pts.astype(np.float64)).d
        d_dec = awds.make_bones(dec.astype(np.float64)).d
        assert d_dec == d_enc


def test_criterion_04_gradient_fidelity():
    # analytic vs central finite differences through the full loss on a
    # 64-point cloud; every entry with |grad| > 1e-6 within 1e-3 relative
    t0 = time.perf_counter()
    with nn.precision("float64"):
        cfg = codec.CodecConfig(K=16, C=16, c=4, k=4, k_m=4, L=1,
                                r_max=8, grid_dim=4, u=1)
        model = codec.PointsoupModel(cfg, seed=404)
        pts = train.generate_synthetic(("sphere", 64), seed=404) / 1023.0
        ex = train.prepare_example(pts, cfg.K, cfg.k, seed=0)
        noise = np.random.default_rng(404).uniform(
            -0.5, 0.5, size=(len(ex.bones), cfg.c))
        lam = 1e-2
        r = codec.choose_R(cfg.K, cfg.r)
        centers = ex.bones.points[:, None, :]

        def forward():
            feats = model.awds.aggregate(ex.windows)
            f = model.dwem.compaction.compact(feats) + nn.Tensor(noise)
            mu, b = model.dwem.entropy(nn.Tensor(ex.dw.rel))
            rate = dwem.rate(dwem.likelihood(f, mu, b), pts.shape[0])
            skin = model.dwem.compaction.stretch(f)
            refined = dwus.refine_features(model.dwus, skin, ex.dw)
            aligned = dwus.fold_generate(model.dwus, refined, r, "infer")
            rec = aligned * ex.bones.d + nn.Tensor(centers)
            return rec.reshape(len(ex.bones) * r * cfg.u, 3), rate

        with nn.no_grad():
            rec0, _ = forward()
        # chamfer correspondence frozen at the base parameters so the
        # objective is smooth across the finite-difference stencil
        idx_ab = geom.knn(rec0.data, pts, 1)[:, 0]
        idx_ba = geom.knn(pts, rec0.data, 1)[:, 0]
        ref = nn.Tensor(pts)

        def objective():
            rec, rate = forward()
            d_ab = ref - rec[idx_ab]
            d_ba = rec - ref[idx_ba]
            cd = ((d_ab * d_ab).sum(axis=-1).mean()
                  + (d_ba * d_ba).sum(axis=-1).mean())
            return cd + rate * lam

        total = objective()
        total.backward()
        grads = {name: p.grad.copy() for name, p in model.named_parameters()}

        def central_fd(flat, i, h):
            v = flat[i]
            flat[i] = v + h
            f1 = objective().item()
            flat[i] = v - h
            f2 = objective().item()
            flat[i] = v
            return (f1 - f2) / (2.0 * h)

        checked = 0
        with nn.no_grad():
            for name, p in model.named_parameters():
                flat = p.data.reshape(-1)
                gflat = grads[name].reshape(-1)
                for i in range(flat.size):
                    a = gflat[i]
                    if abs(a) <= 1e-6:
                        continue
                    # shrink the stencil until it stays inside one smooth
                    # piece (max-pool boundaries are kinks); a wrong
                    # gradient disagrees at every step size
                    for h in (3e-5, 1e-5, 3e-6):
                        fd = central_fd(flat, i, h)
                        rel = abs(a - fd) / max(abs(a), abs(fd))
                        if rel < 1e-3:
                            break
                    assert rel < 1e-3, f"{name}[{i}]: {a} vs {fd} (rel {rel})"
                    checked += 1
    assert checked > 1_000
    assert time.perf_counter() - t0 < 600.0


def test_criterion_05_alignment_invariance():
    # skin features insensitive to global translation and uniform scale
    rng = np.random.default_rng(505)
    pts = rng.uniform(0.0, 200.0, size=(600, 3))
    enc = awds.AwdsEncoder(128, 16, 2, np.random.default_rng(5))
    base = awds.awds_encode(pts, 32, enc, seed=7)[2]
    shift = np.array([13.25, -250.0, 77.5])
    for s, t in [(1.0, shift), (0.5, np.zeros(3)), (0.5, shift),
                 (2.0, shift), (10.0, shift)]:
        feats = awds.awds_encode(pts * s + t, 32, enc, seed=7)[2]
        assert np.max(np.abs(feats - base)) < 1e-5


def _held_out_clouds():
    specs = [("sphere", 2048), ("box", 3000), ("plane", 2500),
             ("swissroll", 3500)]
    return [train.generate_synthetic(spec, seed=6000 + i)
            for i, spec in enumerate(specs)]


def _mean_cd(model, clouds):
    cds = []
    for cloud in clouds:
        rec = codec.decode(codec.encode(cloud, model, seed=0), model)
        cds.append(geom.chamfer_distance(cloud, rec))
    return float(np.mean(cds))


def test_criterion_06_training_sanity(trained_bundle, step1_model):
    trace = trained_bundle["trace"]
    assert len(trace) == 2000
    assert all(np.isfinite(m["rate_bpp"]) for m in trace)
    assert trained_bundle["wall_s"] < 7200.0
    held = _held_out_clouds()
    cd_final = _mean_cd(trained_bundle["model"], held)
    cd_step1 = _mean_cd(step1_model, held)
    assert cd_final <= 0.5 * cd_step1


def test_criterion_07_end_to_end_round_trip(trained_bundle):
    model = trained_bundle["model"]
    rng = np.random.default_rng(707)
    for i in range(20):
        n = int(round(1000.0 * 64.0 ** (i / 19.0)))
        name = train.SHAPE_NAMES[i % len(train.SHAPE_NAMES)]
        cloud = train.generate_synthetic((name, n), seed=7000 + i)
        frame = codec.encode(cloud, model, seed=i)
        hdr = codec.FrameHeader.parse(frame)
        assert hdr.n == n
        rec = codec.decode(frame, model)
        assert rec.shape[0] == codec.choose_M(n, 128) * (128 // 4) * 2
        # extent = widest axis span, the same scalar the CLI normalizer
        # and the synthetic generator use; the baseline fills that cube
        lo = cloud.min(axis=0)
        extent = float((cloud.max(axis=0) - lo).max())
        rand = rng.uniform(lo, lo + extent, size=rec.shape)
        assert (geom.chamfer_distance(cloud, rec)
                < geom.chamfer_distance(cloud, rand))


def test_criterion_08_variable_rate_monotonicity(trained_bundle):
    model = trained_bundle["model"]
    cloud = train.generate_synthetic(("sphere", 20_000), seed=808)
    bpps, cds = [], []
    for k in (32, 64, 128, 256):
        frame = codec.encode(cloud, model, k=k, seed=0)
        bpps.append(codec.bits_per_point(frame).feature)
        cds.append(geom.chamfer_distance(cloud, codec.decode(frame, model)))
    assert all(hi > lo for hi, lo in zip(bpps, bpps[1:]))
    inversions = sum(nxt < cur for cur, nxt in zip(cds, cds[1:]))
    assert inversions <= 1, (bpps, cds)


def test_criterion_09_decode_determinism_and_asymmetry(trained_bundle):
    model = trained_bundle["model"]
    cloud = train.generate_synthetic(("sphere", 1_000_000), seed=909)
    t0 = time.perf_counter()
    frame = codec.encode(cloud, model, seed=0)
    enc_s = time.perf_counter() - t0
    t1 = time.perf_counter()
    rec1 = codec.decode(frame, model)
    dec_s = time.perf_counter() - t1
    rec2 = codec.decode(frame, model)
    assert rec1.tobytes() == rec2.tobytes()
    assert dec_s < enc_s, f"decode {dec_s:.2f}s vs encode {enc_s:.2f}s"


def test_criterion_10_compaction_symbol_count_and_decode_time():
    cloud = train.generate_synthetic(("box", 64_000), seed=1010)
    counts, walls, ms = {}, {}, {}
    for c in (16, 128):
        cfg = codec.CodecConfig(c=c)
        model = codec.PointsoupModel(cfg, seed=10)
        frame = codec.encode(cloud, model, seed=0)
        hdr = codec.FrameHeader.parse(frame)
        feat = frame[codec.HEADER_SIZE + hdr.bone_len:]
        bones = awds.make_bones(coder.decode_bones(
            frame[codec.HEADER_SIZE:codec.HEADER_SIZE + hdr.bone_len]
        ).astype(np.float64))
        dw = dwem.build_dilated_windows(bones, cfg.k)
        models = coder.laplace_models(*model.dwem.entropy.estimate_params(dw))
        counts[c] = coder.decode_feature_stream(feat, models).size
        reps = []
        for _ in range(7):
            t0 = time.perf_counter()
            coder.decode_feature_stream(feat, models)
            reps.append(time.perf_counter() - t0)
        walls[c] = float(np.median(reps))
        ms[c] = hdr.m
    assert ms[128] == ms[16]
    assert counts[128] == 8 * counts[16]
    assert walls[128] >= 3.0 * walls[16], walls


def test_criterion_11_oracle_agreement():
    rng = np.random.default_rng(1111)
    for i in range(100):
        n = int(rng.integers(10, 513))
        if i % 3 == 0:  # integer grids exercise tie-breaking
            pts = rng.integers(0, 12, size=(n, 3)).astype(np.float64)
        else:
            pts = rng.uniform(-5.0, 5.0, size=(n, 3))
        queries = rng.uniform(-5.0, 5.0, size=(17, 3))
        k = int(rng.integers(1, 9))
        assert np.array_equal(geom.knn(pts, queries, k),
                              brute_knn(pts, queries, k))
        m = int(rng.integers(2, min(n, 33)))
        assert np.array_equal(geom.farthest_point_sample(pts, m),
                              brute_fps(pts, m))
        want = brute_mean_nn(pts)
        assert abs(geom.mean_nn_distance(pts) - want) <= 1e-12 * max(want, 1.0)
        other = rng.uniform(-5.0, 5.0, size=(int(rng.integers(10, 257)), 3))
        want = brute_chamfer(pts, other)
        assert abs(geom.chamfer_distance(pts, other) - want) <= 1e-12 * want
