import io
import math

import numpy as np
import pytest
from scipy import integrate, stats

from lmpseq import ValidationError, bernoulli_mean, make_design, normal_mean, poisson_mean
from lmpseq.dp import backward_induction
from lmpseq.exact import propagate
from lmpseq.lagrange import (Exactness, closed_form_L_triangular, compare_designs,
                             default_competitors, finiteness_probe, fixed_sample_L, objective)
from lmpseq.simulate import SimConfig, estimate
from lmpseq.thresholds import fixed_sample_design, shifted_design


def test_closed_form_examples():
    assert closed_form_L_triangular(1, 0.0, 1.0) == pytest.approx(
        1 - 1 / math.sqrt(2 * math.pi), abs=1e-15)
    assert closed_form_L_triangular(2, 0.0, 1.0) == pytest.approx(
        2 - math.sqrt(5) / math.sqrt(2 * math.pi), abs=1e-15)
    assert closed_form_L_triangular(2, 0.0, 1.0) == pytest.approx(1.1079, abs=1e-4)
    assert min(closed_form_L_triangular(n, 0.0, 0.001) for n in range(1, 1001)) < -10


@pytest.mark.parametrize("N,b,c", [(1, -1.0, 0.1), (3, 0.5, 0.01), (7, 2.0, 1.0)])
def test_closed_form_against_adaptive_quadrature(N, b, c):
    s = math.sqrt(sum(n * n for n in range(1, N + 1)))
    val, _ = integrate.quad(lambda z: (b - z) * stats.norm.pdf(z, scale=s), b, np.inf,
                            epsabs=1e-13)
    assert closed_form_L_triangular(N, b, c) == pytest.approx(c * N + val, abs=1e-10)


def test_generic_pipeline_matches_closed_form(tri):
    for N in (1, 4, 10):
        for b in (-1.0, 0.0, 1.0):
            assert fixed_sample_L(tri, N, b, 0.1) == pytest.approx(
                closed_form_L_triangular(N, b, 0.1), abs=1e-10)


def test_fixed_sample_bernoulli_by_hand(bern):
    # z_2 in {-4, 0, 4} with probabilities 1/4, 1/2, 1/4
    b, c = 0.3, 0.1
    expected = 2 * c + 0.25 * min(0, -(4 - b)) + 0.5 * min(0, -(0 - b))
    assert fixed_sample_L(bern, 2, b, c) == pytest.approx(expected, abs=1e-15)


def test_fixed_sample_normal_closed_form(norm):
    for N in (1, 9, 25):
        assert fixed_sample_L(norm, N, 0.0, 0.05) == pytest.approx(
            0.05 * N - math.sqrt(N / (2 * math.pi)), abs=1e-12)


def test_fixed_sample_poisson_matches_convolution(pois):
    # z_N = S/theta0 - N with S ~ Poisson(N theta0)
    N, b, c = 3, 0.5, 0.02
    k = np.arange(0, 80)
    z = k - N
    expected = c * N + math.fsum(stats.poisson.pmf(k, N) * np.minimum(0, -(z - b)))
    assert fixed_sample_L(pois, N, b, c) == pytest.approx(expected, abs=1e-12)


def test_divergence_detected_for_triangular(tri):
    res = finiteness_probe(tri, 0.0, 0.01, 500)
    assert res.divergent and res.detected_at <= 500
    assert res.status == "DivergenceDetected"


def test_normal_mean_has_interior_minimum(norm):
    res = finiteness_probe(norm, 0.0, 0.05, 500)
    assert not res.divergent and res.status == "Finite-so-far"
    assert res.interior_minimum
    # c N - sqrt(N / 2 pi) is minimised near N = 1 / (8 pi c^2)
    assert abs(res.argmin - 1 / (8 * math.pi * 0.05 ** 2)) <= 1


@pytest.mark.parametrize("model", [bernoulli_mean(0.5), normal_mean(0.0), poisson_mean(1.0)])
def test_large_cost_minimum_at_one(model):
    c = model.expect_under_null(np.abs) + 0.01
    res = finiteness_probe(model, 0.0, c, 50)
    assert res.argmin == 1 and not res.divergent


def test_objective_from_degenerate_simulation(norm):
    d = make_design(norm, 0.0, 1.0)
    rep = estimate(d, norm, SimConfig(n_rep=200_000, seed=5))
    rec = objective(rep, 0.0, 1.0)
    assert rec.exactness is Exactness.MONTE_CARLO
    assert rec.L == rec.recomputed()
    assert abs(rec.L - (1 - 1 / math.sqrt(2 * math.pi))) < 3 * rec.se_L
    assert rec.L == pytest.approx(0.60106, abs=0.01)


def test_objective_from_policy(bern):
    pol = backward_induction(bern, 0.2, 0.05, 4)
    rec = objective(pol, 0.2, 0.05)
    assert rec.exactness is Exactness.EXACT and rec.se_L == 0.0
    assert rec.L == pytest.approx(pol.value, abs=1e-12)
    assert abs(rec.L - rec.recomputed()) <= 1e-12


def test_objective_with_zero_b_ignores_alpha(bern):
    d = make_design(bern, 0.0, 0.1)
    ex = propagate(d, bern)
    rec = objective(ex, 0.0, 0.1)
    assert rec.L == pytest.approx(0.1 * ex.asn - ex.beta_dot, abs=1e-12)


def test_objective_rejects_mismatched_multipliers(bern):
    pol = backward_induction(bern, 0.2, 0.05, 2)
    with pytest.raises(ValidationError):
        objective(pol, 0.3, 0.05)
    d = make_design(bern, 0.2, 0.05)
    rep = estimate(d, bern, SimConfig(n_rep=1000, seed=0))
    with pytest.raises(ValidationError):
        objective(rep, 0.2, 0.1)


def test_compare_rejects_mismatched_multipliers(bern):
    d = make_design(bern, 0.2, 0.05)
    with pytest.raises(ValidationError):
        compare_designs(d, [fixed_sample_design(0.2, 0.1, 2)], bern, SimConfig(n_rep=1000))


def test_self_comparison_is_exact_tie(bern):
    d = make_design(bern, 0.0, 0.1)
    rep = compare_designs(d, [d], bern, SimConfig(n_rep=5000, seed=1))
    row = rep.rows[0]
    assert row.verdict == "tie" and row.diff_L == 0.0 and row.se_diff_L == 0.0


def test_widening_costs_strictly(bern):
    # B_c is 5.7 at c = 0.15, so widening by 0.5 admits the lattice points +-6
    d = make_design(bern, 0.0, 0.15)
    assert 5.5 < d.upper < 6.0
    wide = shifted_design(d, -0.5, 0.5, "widen(0.5)")
    exact_gap = objective(propagate(wide, bern), 0.0, 0.15).L - objective(
        propagate(d, bern), 0.0, 0.15).L
    assert exact_gap == pytest.approx(0.05, abs=1e-12)
    rep = compare_designs(d, [wide], bern, SimConfig(n_rep=100_000, seed=2))
    row = rep.rows[0]
    assert row.diff_L > 3 * row.se_diff_L
    assert abs(row.diff_L - exact_gap) < 4 * row.se_diff_L
    assert rep.optimal


def test_fixed_sample_competitors_do_not_win(bern):
    d = make_design(bern, 0.2, 0.1)
    comps = [fixed_sample_design(0.2, 0.1, n) for n in (2, 5, 10)]
    rep = compare_designs(d, comps, bern, SimConfig(n_rep=50_000, seed=3))
    for row in rep.rows:
        assert row.L >= rep.base.L - 3 * row.se_diff_L
    assert rep.optimal


def test_default_competitors(bern):
    d = make_design(bern, 0.2, 0.05)
    comps = default_competitors(d)
    assert len(comps) == 12 + 3
    assert len({c.design_id for c in comps}) == len(comps)
    deg = make_design(bern, 0.0, 2.0)
    assert [c.design_id for c in default_competitors(deg)] == [
        "fixed(N=2)", "fixed(N=5)", "fixed(N=10)"]


def test_ordering_report_csv(bern):
    d = make_design(bern, 0.0, 0.3)
    rep = compare_designs(d, default_competitors(d, shifts=(0.5,), fixed_n=(2,)), bern,
                          SimConfig(n_rep=2000, seed=0))
    buf = io.StringIO()
    rep.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "design_id,asn,alpha,beta_dot,L,se_L,verdict"
    assert len(lines) == 1 + 1 + 6 + 1
    assert lines[1].endswith(",base")


def test_objective_of_exact_metrics_matches_truncated_dp_limit(bern):
    # long horizons approach the stationary optimum from above
    b, c = 0.2, 0.3
    d = make_design(bern, b, c)
    stationary = objective(propagate(d, bern), b, c).L
    values = [backward_induction(bern, b, c, N).value for N in (2, 6, 10, 14)]
    assert all(v >= stationary - 1e-12 for v in values)
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert values[-1] - stationary < 2e-3
