import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsetrack.diagnostics import mcse_mean
from sparsetrack.exceptions import TooFewDraws, TuneExhausted
from sparsetrack.mala import (
    MalaConfig,
    SampleChain,
    SmoothedTarget,
    _tune,
    chain_summaries,
    initial_step,
    load_chain,
    log_accept_ratio,
    mala_run,
    read_chain,
    tune_step,
    write_chain,
)
from sparsetrack.model import ModelSpec, Preconditioner, build_preconditioner
from sparsetrack.rebalance import build_delta_design

from conftest import make_spec, random_design, raw_design


def _gaussian_setup(p=5, seed=0):
    y = np.random.default_rng(seed).standard_normal(p)
    d = raw_design(y, np.eye(p))
    spec = ModelSpec(1.0, math.inf, 0.0, np.ones(p), 1.0, 1.0)
    return d, spec, build_preconditioner(d, spec)


def test_config_validation_and_thin():
    with pytest.raises(ValueError):
        MalaConfig(thin=0)
    with pytest.raises(ValueError):
        MalaConfig(target_accept=1.0)
    with pytest.raises(ValueError):
        MalaConfig(n_samples=0)
    cfg = MalaConfig()
    assert cfg.thin_for("weights") == 1
    assert cfg.thin_for("delta") == 6
    assert MalaConfig(thin=3).thin_for("delta") == 3


def test_initial_step_formula():
    pc = Preconditioner(np.ones(3), 141.5)
    assert initial_step(pc) == pytest.approx(0.9 / (2 * 141.5))
    assert initial_step(pc) == pytest.approx(3.180e-3, rel=1e-3)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=st.floats(-2, 2)), arrays(float, 4, elements=st.floats(-2, 2)),
       st.floats(1e-4, 0.5), st.sampled_from(["weights", "delta"]))
def test_accept_ratio_antisymmetry(w, w2, delta, mode):
    rng = np.random.default_rng(0)
    d = random_design(rng, T=15, p=4, scale=1.0)
    spec = make_spec(d, sigma2=0.5, tau_c=2.0, theta=1.2, mode=mode)
    pc = build_preconditioner(d, spec)
    tgt = SmoothedTarget(d, spec, pc)
    fwd = log_accept_ratio(tgt, w, w2, delta)
    bwd = log_accept_ratio(tgt, w2, w, delta)
    assert fwd == pytest.approx(-bwd, abs=1e-10 * max(1.0, abs(fwd)))


def test_smoothed_target_gradient_finite_differences(rng):
    d = random_design(rng, T=20, p=5, scale=1.0)
    spec = make_spec(d, sigma2=0.5, tau_c=1.0, theta=1.5, mode="delta")
    tgt = SmoothedTarget(d, spec, build_preconditioner(d, spec))
    w = rng.standard_normal(5)
    h = 1e-6
    fd = np.array([(tgt(w + h * e)[0] - tgt(w - h * e)[0]) / (2 * h) for e in np.eye(5)])
    np.testing.assert_allclose(tgt(w)[1], fd, rtol=1e-5, atol=1e-6)


def test_gaussian_moments():
    d, spec, pc = _gaussian_setup()
    cfg = MalaConfig(n_samples=100000, burn_in=2000, seed=11)
    chain = mala_run(d, spec, pc, cfg, np.zeros(5))
    draws = np.asarray(chain.draws)
    for j in range(5):
        assert abs(draws[:, j].mean() - d.y_c[j]) <= 3 * mcse_mean(draws[:, j])
    np.testing.assert_allclose(draws.var(axis=0, ddof=1), 1.0, rtol=0.05)
    assert 0.0 <= chain.accept_rate <= 1.0
    assert np.all(np.isfinite(draws))


@pytest.mark.slow
def test_two_dim_quadratic_stationary_law():
    R = np.array([[1.0, 0.0], [0.8, 0.6], [0.2, 1.1]])
    y = np.array([0.5, -0.3, 1.0])
    d = raw_design(y, R)
    spec = ModelSpec(0.7, math.inf, 0.0, np.ones(2), 1.0, 1.0)
    pc = build_preconditioner(d, spec)
    chain = mala_run(d, spec, pc, MalaConfig(n_samples=1000000, burn_in=1000, seed=5),
                     np.zeros(2))
    draws = np.asarray(chain.draws)
    cov = 0.7 * np.linalg.inv(R.T @ R)
    mean = np.linalg.solve(R.T @ R, R.T @ y)
    for j in range(2):
        assert abs(draws[:, j].mean() - mean[j]) <= 3 * mcse_mean(draws[:, j])
    emp = np.cov(draws.T)
    scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
    assert np.all(np.abs(emp - cov) <= 0.05 * scale)


def test_vanishing_step_accepts_nearly_everything(rng):
    d = random_design(rng, T=30, p=4, scale=1.0)
    spec = make_spec(d, sigma2=0.5, theta=0.0)
    pc = build_preconditioner(d, spec)
    chain = mala_run(d, spec, pc, MalaConfig(n_samples=2000, burn_in=0, step=1e-7), np.zeros(4))
    assert chain.accept_rate >= 0.99


class _StubWalker:
    """Acceptance is a fixed function of the step."""

    def __init__(self, rate):
        self.rate = rate
        self.calls = 0

    def step(self, delta):
        self.calls += 1
        return (self.calls % 1000) < 1000 * self.rate(delta)


def test_tune_no_op_in_band():
    pc = Preconditioner(np.ones(2), 10.0)
    walker = _StubWalker(lambda d: 0.6)
    delta, hist = _tune(walker, pc, MalaConfig())
    assert delta == initial_step(pc)
    assert len(hist) == 1


def test_tune_multiplicative_rule():
    pc = Preconditioner(np.ones(2), 10.0)
    d0 = initial_step(pc)
    walker = _StubWalker(lambda d: 0.9 if d < 1.3 * d0 else 0.6)
    delta, hist = _tune(walker, pc, MalaConfig())
    assert [h[0] for h in hist] == pytest.approx([d0, 1.25 * d0, 1.25 ** 2 * d0])
    assert delta == pytest.approx(1.25 ** 2 * d0)

    walker = _StubWalker(lambda d: 0.1 if d > 0.6 * d0 else 0.55)
    delta, _ = _tune(walker, pc, MalaConfig())
    assert delta == pytest.approx(0.5 * d0)


def test_tune_exhausted_warns():
    pc = Preconditioner(np.ones(2), 10.0)
    with pytest.warns(TuneExhausted):
        delta, hist = _tune(_StubWalker(lambda d: 1.0), pc, MalaConfig(max_tune_rounds=4))
    assert len(hist) == 4
    assert delta == pytest.approx(initial_step(pc) * 1.25 ** 4)


def test_tune_step_on_real_target():
    d, spec, pc = _gaussian_setup()
    delta, hist = tune_step(d, spec, pc, MalaConfig(seed=2))
    lo, hi = 0.5, 0.65
    assert lo <= hist[-1][1] <= hi
    assert delta == hist[-1][0]


def test_deterministic_under_seed():
    d, spec, pc = _gaussian_setup()
    cfg = MalaConfig(n_samples=500, burn_in=100, seed=9)
    a = mala_run(d, spec, pc, cfg, np.zeros(5))
    b = mala_run(d, spec, pc, cfg, np.zeros(5))
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.step_used == b.step_used


def test_potential_trace_has_no_drift():
    d, spec, pc = _gaussian_setup(seed=4)
    chain = mala_run(d, spec, pc, MalaConfig(n_samples=40000, burn_in=2000, seed=4),
                     d.y_c.copy())
    # batch means are close to independent; regress them on batch position
    batches = chain.potential_trace.reshape(40, -1).mean(axis=1)
    x = np.arange(40.0)
    X = np.column_stack([np.ones(40), x])
    coef, res, *_ = np.linalg.lstsq(X, batches, rcond=None)
    s2 = res[0] / (40 - 2)
    se = math.sqrt(s2 / ((x - x.mean()) ** 2).sum())
    assert abs(coef[1]) <= 3 * se


def test_delta_mode_draws_near_sum_zero(rng):
    R = rng.standard_normal((60, 6)) * 0.01
    w_new = rng.dirichlet(np.ones(6))
    y = R @ w_new + 1e-3 * rng.standard_normal(60)
    d = build_delta_design(y, R, np.full(6, 1 / 6))
    spec = make_spec(d, sigma2=1e-6, theta=200.0, mode="delta")
    pc = build_preconditioner(d, spec)
    chain = mala_run(d, spec, pc, MalaConfig(n_samples=3000, burn_in=2000, seed=1), np.zeros(6))
    assert chain.meta["thin"] == 6
    s = np.asarray(chain.draws).sum(axis=1)
    scale = math.sqrt(pc.lambda_pre * pc.metric.sum())
    assert np.max(np.abs(s)) <= 6 * scale


def test_nonfinite_proposals_are_rejected():
    d, spec, pc = _gaussian_setup()
    with np.errstate(over="ignore", invalid="ignore"):
        chain = mala_run(d, spec, pc, MalaConfig(n_samples=5, burn_in=0, step=1e306),
                         np.full(5, 1e10))
    assert chain.meta["n_nonfinite"] > 0
    assert np.all(np.isfinite(chain.draws))


def test_init_validation():
    d, spec, pc = _gaussian_setup()
    with pytest.raises(ValueError):
        mala_run(d, spec, pc, MalaConfig(n_samples=5), np.full(5, np.nan))
    with pytest.raises(ValueError):
        mala_run(d, spec, pc, MalaConfig(n_samples=5), np.zeros(3))


def test_chain_file_roundtrip(tmp_path):
    d, spec, pc = _gaussian_setup()
    path = tmp_path / "c.sptc"
    cfg = MalaConfig(n_samples=50, burn_in=10, seed=np.random.SeedSequence(3, spawn_key=(7,)),
                     chain_path=str(path))
    chain = mala_run(d, spec, pc, cfg, np.zeros(5))
    raw = path.read_bytes()
    assert raw[:4] == b"SPTC"
    assert struct.unpack("<III", raw[4:16]) == (1, 50, 5)
    assert len(raw) == 16 + 8 * 50 * 5
    draws, meta = read_chain(path, mmap=False)
    np.testing.assert_array_equal(draws, np.asarray(chain.draws))
    assert meta["seed"] == {"entropy": 3, "spawn_key": [7]}
    assert meta["thin"] == 1 and meta["burn_in"] == 10
    loaded = load_chain(path)
    assert loaded.step_used == chain.step_used
    assert loaded.mode == "weights"


def test_write_chain_and_bad_magic(tmp_path):
    draws = np.arange(12.0).reshape(4, 3)
    path = write_chain(tmp_path / "x.sptc", draws, {"step": 0.1})
    back, meta = read_chain(path)
    np.testing.assert_array_equal(back, draws)
    assert meta == {"step": 0.1}
    bad = tmp_path / "bad.sptc"
    bad.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        read_chain(bad)


def test_chain_summaries_examples():
    sd, mean = chain_summaries(np.ones((10, 3)))
    np.testing.assert_array_equal(sd, 0.0)
    sd, mean = chain_summaries(np.array([[0.0, 0.0], [2.0, 2.0]]))
    np.testing.assert_allclose(sd, math.sqrt(2))
    np.testing.assert_allclose(mean, 1.0)
    with pytest.raises(TooFewDraws):
        chain_summaries(np.zeros((1, 3)))


def _welford(x):
    n, mean, m2 = 0, np.zeros(x.shape[1]), np.zeros(x.shape[1])
    for row in x:
        n += 1
        delta = row - mean
        mean += delta / n
        m2 += delta * (row - mean)
    return np.sqrt(m2 / (n - 1)), mean


@pytest.mark.parametrize("seed", range(3))
def test_chain_summaries_vs_welford(seed):
    x = np.random.default_rng(seed).standard_normal((1000, 10)) * 3 + 1
    sd, mean = chain_summaries(SampleChain(x, 0.1, 0.5, "weights", np.zeros(1000)), block=97)
    sd_w, mean_w = _welford(x)
    np.testing.assert_allclose(sd, sd_w, rtol=1e-12)
    np.testing.assert_allclose(mean, mean_w, rtol=1e-12, atol=1e-14)
