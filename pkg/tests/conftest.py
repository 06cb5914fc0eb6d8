"""Shared fixtures. The trained-weights bundle is built once per session
and reused by every test that needs non-random reconstruction quality."""

from __future__ import annotations

import time

import numpy as np
import pytest

from pointsoup import codec, nn, train


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running acceptance checks")


@pytest.fixture(scope="session")
def trained_bundle():
    """One 2000-step training run (lambda=1e-4, lr=5e-4, K=128).

    Returns the final model, a snapshot of the weights after step 1,
    the full metric trace, and the measured wall time.
    """
    cfg = codec.CodecConfig()
    model = codec.PointsoupModel(cfg, seed=11)
    tcfg = train.TrainConfig(steps=2000, lam=1e-4, lr=5e-4, K=128, seed=11,
                             n_clouds=12, min_points=1024, max_points=4096)
    clouds = train.build_dataset(tcfg)
    examples = [train.prepare_example(c, tcfg.K, cfg.k, tcfg.seed + i)
                for i, c in enumerate(clouds)]
    opt = nn.Adam(model.parameters(), lr=tcfg.lr)
    rng = np.random.default_rng(tcfg.seed)
    trace = []
    step1_state = None
    t0 = time.perf_counter()
    for step in range(1, tcfg.steps + 1):
        ex = examples[(step - 1) % len(examples)]
        trace.append(train.train_step(model, ex, opt, tcfg.lam, rng, step))
        if step == 1:
            step1_state = {k: v.copy() for k, v in model.state().items()}
    wall_s = time.perf_counter() - t0
    return {"model": model, "cfg": cfg, "tcfg": tcfg, "trace": trace,
            "step1_state": step1_state, "wall_s": wall_s}


@pytest.fixture(scope="session")
def step1_model(trained_bundle):
    model = codec.PointsoupModel(trained_bundle["cfg"], seed=11)
    model.load_state(trained_bundle["step1_state"])
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def grid_cloud(rng, n, lo=0, hi=1024):
    """Random distinct-ish integer-grid cloud as float64."""
    return rng.integers(lo, hi, size=(n, 3)).astype(np.float64)
