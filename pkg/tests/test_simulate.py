import io
import math

import numpy as np
import pytest
from scipy import stats

from lmpseq import ConfigError, make_design
from lmpseq.rng import counter_uniforms
from lmpseq.simulate import (SimConfig, estimate, power_curve, power_slope_fd, run_one,
                             simulate_paths, worker_count, write_power_csv)
from lmpseq.thresholds import fixed_sample_design


def test_counter_uniforms_are_uniform_and_keyed():
    reps = np.arange(200_000, dtype=np.uint64)
    u = counter_uniforms(1, reps, 1)
    assert np.all((u > 0) & (u < 1))
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    assert np.array_equal(u, counter_uniforms(1, reps, 1))
    assert not np.array_equal(u, counter_uniforms(2, reps, 1))
    assert not np.array_equal(u, counter_uniforms(1, reps, 2))
    # streams for different steps are uncorrelated
    v = counter_uniforms(1, reps, 2)
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.01


def test_counter_uniforms_do_not_depend_on_batch():
    reps = np.arange(1000, dtype=np.uint64)
    whole = counter_uniforms(5, reps, 3)
    parts = np.concatenate([counter_uniforms(5, reps[:300], 3),
                            counter_uniforms(5, reps[300:], 3)])
    assert np.array_equal(whole, parts)


def test_degenerate_normal_design(norm):
    d = make_design(norm, 0.0, 2.0)
    rep = estimate(d, norm, SimConfig(n_rep=200_000, seed=1))
    assert rep.asn_hat == 1.0 and rep.asn_se == 0.0
    assert abs(rep.alpha_hat - 0.5) < 3 * rep.alpha_se
    assert abs(rep.beta_dot_hat - 1 / math.sqrt(2 * math.pi)) < 3 * rep.beta_dot_se


def test_report_invariants(bern):
    d = make_design(bern, 0.2, 0.1)
    rep = estimate(d, bern, SimConfig(n_rep=5000, seed=2, theta_sim=0.55, theta_asn=0.45))
    assert 0 <= rep.alpha_hat <= 1 and 0 <= rep.power_hat <= 1
    assert rep.asn_hat >= 1
    assert min(rep.alpha_se, rep.asn_se, rep.beta_dot_se, rep.power_se) >= 0
    assert rep.power_hat > rep.alpha_hat
    assert not rep.biased


def test_results_do_not_depend_on_threads(bern, monkeypatch):
    d = make_design(bern, 0.2, 0.05)
    cfg = SimConfig(n_rep=150_000, seed=8)
    monkeypatch.setenv("LMPSEQ_THREADS", "1")
    one = simulate_paths(d, bern, None, cfg)
    monkeypatch.setenv("LMPSEQ_THREADS", "4")
    many = simulate_paths(d, bern, None, SimConfig(n_rep=150_000, seed=8, threads=4))
    for a, b in zip((one.tau, one.reject, one.z_tau), (many.tau, many.reject, many.z_tau)):
        assert np.array_equal(a, b)


def test_worker_count_respects_env(monkeypatch):
    monkeypatch.setenv("LMPSEQ_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.setenv("LMPSEQ_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count(8)


def test_invalid_configs(bern):
    d = make_design(bern, 0.0, 0.1)
    with pytest.raises(ConfigError):
        estimate(d, bern, SimConfig(n_rep=0))
    with pytest.raises(ConfigError):
        estimate(d, bern, SimConfig(n_rep=1000, cap=0))


def test_cap_and_capped_fraction(bern):
    d = make_design(bern, 0.0, 0.02)
    batch = simulate_paths(d, bern, None, SimConfig(n_rep=2000, seed=0, cap=10))
    assert batch.tau.max() == 10
    assert batch.capped.mean() > 0.5
    assert not np.any(batch.reject & batch.capped)
    rep = estimate(d, bern, SimConfig(n_rep=2000, seed=0, cap=10))
    assert rep.biased


def test_capped_tail_is_small(bern):
    d = make_design(bern, 0.2, 0.05)
    batch = simulate_paths(d, bern, None, SimConfig(n_rep=20_000, seed=0, cap=10_000))
    assert batch.capped.mean() < 1e-3


def test_run_one(bern, norm):
    rng = np.random.default_rng(7)
    deg = make_design(norm, 0.0, 2.0)
    for _ in range(20):
        tau, reject, z, capped = run_one(deg, norm, 0.0, rng)
        assert tau == 1 and reject == (z >= 0) and not capped
    d = make_design(bern, 0.0, 0.5)  # boundaries at +-1, so every path stops at once
    for _ in range(20):
        tau, reject, z, capped = run_one(d, bern, 0.5, rng)
        assert tau == 1 and reject == (z >= d.upper)


def test_power_curve_monotone(norm):
    d = make_design(norm, 0.0, 0.2)
    thetas = [-0.2, -0.1, 0.0, 0.1, 0.2]
    rows = power_curve(d, norm, thetas, SimConfig(n_rep=20_000, seed=3))
    for (_, p0, s0), (_, p1, s1) in zip(rows, rows[1:]):
        assert p1 >= p0 - 3 * math.hypot(s0, s1)
    null = estimate(d, norm, SimConfig(n_rep=20_000, seed=3))
    assert rows[2][1] == null.alpha_hat
    buf = io.StringIO()
    write_power_csv(rows, buf)
    assert buf.getvalue().splitlines()[0] == "theta,power,se"


def test_score_identity_matches_finite_difference(bern):
    d = make_design(bern, 0.0, 0.3)
    cfg = SimConfig(n_rep=100_000, seed=11)
    rep = estimate(d, bern, cfg)
    slope, se = power_slope_fd(d, bern, 0.05, cfg)
    assert abs(slope - rep.beta_dot_hat) < 3 * math.hypot(se, rep.beta_dot_se)


def test_fixed_sample_design_simulation(norm):
    f = fixed_sample_design(0.0, 0.1, 4)
    batch = simulate_paths(f, norm, None, SimConfig(n_rep=10_000, seed=0))
    assert np.all(batch.tau == 4)
    assert abs(batch.reject.mean() - 0.5) < 0.02


def test_same_seed_same_report(bern):
    d = make_design(bern, 0.2, 0.1)
    a = estimate(d, bern, SimConfig(n_rep=3000, seed=4))
    b = estimate(d, bern, SimConfig(n_rep=3000, seed=4))
    assert a == b


def test_finite_difference_gap_is_truncation_bias(bern):
    # power is curved over theta0 +- 0.05 for this design; both Monte Carlo
    # estimates match their exact targets, which differ by the O(h^2) term
    from lmpseq.exact import propagate
    d = make_design(bern, 0.0, 0.3)
    exact_slope = propagate(d, bern).beta_dot
    exact_fd = (propagate(d, bern, 0.55).reject_prob
                - propagate(d, bern, 0.45).reject_prob) / 0.1
    assert exact_slope == pytest.approx(2.0, abs=1e-12)
    assert exact_fd == pytest.approx(2.0 / 1.01, abs=1e-12)
    cfg = SimConfig(n_rep=200_000, seed=6)
    rep = estimate(d, bern, cfg)
    slope, se = power_slope_fd(d, bern, 0.05, cfg)
    assert abs(rep.beta_dot_hat - exact_slope) < 3 * rep.beta_dot_se
    assert abs(slope - exact_fd) < 3 * se


def test_quadratic_power_design(bern):
    from lmpseq import bernoulli_mean
    from lmpseq.exact import propagate
    model = bernoulli_mean(0.3)
    d = make_design(model, 0.0, 0.4)
    assert not d.degenerate
    for theta in (0.2, 0.3, 0.45):
        assert propagate(d, model, theta).reject_prob == pytest.approx(
            theta + (1 - theta) * theta, abs=1e-14)
