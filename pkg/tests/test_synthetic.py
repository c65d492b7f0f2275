import dataclasses
import math

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import binom

from undercount import (PriorSpec, SimCoeffs, SimSpec, conditional_report_sd,
                        correlated_bernoulli_sum, default_benchmark,
                        pairwise_report, recovery_regression,
                        reporting_study_from_truth, simulate_full,
                        simulate_reporting_study, toy_covariate, toy_iid)
from undercount.synthetic import (Exchangeable, Independent, Pairwise,
                                  ToyCovariateTarget, ToyIidTarget, ToyPrior)

from oracles import bin_counts_with_tail, central_diff_grad, chi2_pvalue


# ---------------------------------------------------------------------------
# reporting schemes
# ---------------------------------------------------------------------------

def test_scheme_names():
    assert Independent().name == "independent"
    assert Exchangeable(rho=0.1).name == "exchangeable"
    assert Pairwise().name == "pairwise"
    with pytest.raises(ValueError):
        Exchangeable(rho=-0.1)
    with pytest.raises(ValueError):
        Exchangeable(rho=1.2)


def test_correlated_sum_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        correlated_bernoulli_sum(-1, 0.5, 0.0, rng)
    with pytest.raises(ValueError):
        correlated_bernoulli_sum(3, 1.5, 0.0, rng)
    with pytest.raises(ValueError):
        correlated_bernoulli_sum(3, 0.5, -0.2, rng)
    assert correlated_bernoulli_sum(0, 0.5, 0.3, rng) == 0


def test_correlated_sum_rho_zero_is_binomial():
    rng = np.random.default_rng(1)
    draws = np.array([correlated_bernoulli_sum(20, 0.3, 0.0, rng)
                      for _ in range(100_000)])
    observed, expected = bin_counts_with_tail(draws, lambda k: binom.pmf(k, 20, 0.3))
    assert chi2_pvalue(observed, expected) > 1e-3


def test_correlated_sum_rho_one_is_comonotone():
    rng = np.random.default_rng(2)
    draws = np.array([correlated_bernoulli_sum(20, 0.3, 1.0, rng)
                      for _ in range(5000)])
    assert set(np.unique(draws)) <= {0, 20}
    assert np.mean(draws == 20) == pytest.approx(0.3, abs=0.03)


def test_correlated_sum_variance_and_rho():
    # var = n p (1-p) (1 + (n-1) rho); inverting it re-estimates rho
    n, p, rho = 20, 0.2, 0.05
    rng = np.random.default_rng(3)
    draws = np.array([correlated_bernoulli_sum(n, p, rho, rng)
                      for _ in range(100_000)], dtype=np.float64)
    target_var = n * p * (1 - p) * (1 + (n - 1) * rho)
    assert draws.var() == pytest.approx(target_var, rel=0.05)
    assert draws.mean() == pytest.approx(n * p, abs=0.03)
    rho_hat = (draws.var() / (n * p * (1 - p)) - 1) / (n - 1)
    assert rho_hat == pytest.approx(rho, abs=0.005)


def test_correlated_sum_pairwise_correlation():
    # for n = 2 the joint hits P(both) = p^2 + rho p (1-p) exactly
    p, rho = 0.2, 0.05
    rng = np.random.default_rng(4)
    n_pairs = 1_000_000
    both = 0
    for _ in range(n_pairs):
        both += correlated_bernoulli_sum(2, p, rho, rng) == 2
    rho_hat = (both / n_pairs - p * p) / (p * (1 - p))
    assert rho_hat == pytest.approx(rho, abs=0.005)


def test_correlated_sum_mean_preserved_at_fixed_z():
    rng = np.random.default_rng(5)
    draws = np.array([correlated_bernoulli_sum(15, 0.3, 0.3, rng)
                      for _ in range(20_000)])
    assert draws.mean() == pytest.approx(15 * 0.3, abs=0.15)


def test_pairwise_report_validation_and_edges():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        pairwise_report(-1, 0.5, rng)
    with pytest.raises(ValueError):
        pairwise_report(3, -0.5, rng)
    assert pairwise_report(0, 0.7, rng) == 0


def test_pairwise_report_single_event_is_bernoulli():
    rng = np.random.default_rng(6)
    draws = np.array([pairwise_report(1, 0.35, rng) for _ in range(20_000)])
    assert set(np.unique(draws)) <= {0, 1}
    assert draws.mean() == pytest.approx(0.35, abs=0.012)


def test_pairwise_report_one_pair_all_or_nothing():
    rng = np.random.default_rng(7)
    draws = np.array([pairwise_report(2, 0.35, rng) for _ in range(20_000)])
    assert set(np.unique(draws)) <= {0, 2}
    assert np.mean(draws == 2) == pytest.approx(0.35, abs=0.012)


def test_pairwise_report_even_steps():
    rng = np.random.default_rng(8)
    draws = np.array([pairwise_report(10, 0.5, rng) for _ in range(2000)])
    assert np.all(draws % 2 == 0)


def test_pairwise_report_marginal_preserved():
    rng = np.random.default_rng(9)
    draws = np.array([pairwise_report(11, 0.4, rng) for _ in range(100_000)])
    assert draws.mean() / 11 == pytest.approx(0.4, abs=0.003)


# ---------------------------------------------------------------------------
# full-panel simulator
# ---------------------------------------------------------------------------

def test_simspec_validation():
    with pytest.raises(ValueError):
        SimSpec(n_schools=0)
    with pytest.raises(ValueError):
        SimSpec(years=())
    with pytest.raises(ValueError):
        SimSpec(urbanization_probs=(0.5, 0.4, 0.2))


def test_simulate_full_deterministic():
    a = simulate_full(SimSpec(n_schools=20, seed=5))
    b = simulate_full(SimSpec(n_schools=20, seed=5))
    assert a.data.records == b.data.records
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.lam, b.lam)
    c = simulate_full(SimSpec(n_schools=20, seed=6))
    assert not np.array_equal(a.z, c.z)


def test_simulate_full_invariants():
    sim = simulate_full(SimSpec(n_schools=100, years=(2015, 2016, 2017), seed=1))
    assert np.all(sim.data.x <= sim.z)
    assert np.all(sim.lam > 0)
    assert np.all((sim.p > 0) & (sim.p < 1))
    assert sim.data.n_records == 300
    lo, hi = sim.spec.students_range
    # year-level jitter is 5% on the log scale, so allow a modest margin
    assert sim.data.students.min() >= lo * 0.8
    assert sim.data.students.max() <= hi * 1.25


def test_centered_school_effects():
    base = SimSpec(n_schools=40, years=(2015, 2016), seed=9,
                   offsets=PriorSpec(eta_scale=1e-12, delta_scale=1e-12))
    cent = dataclasses.replace(base, center_school_effects=True)
    a, b = simulate_full(base), simulate_full(cent)

    # covariates are drawn before the effects, so the flag can only show up
    # as one constant shift on each linear predictor
    dlog = np.log(b.lam) - np.log(a.lam)
    dlogit = np.log(b.p / (1 - b.p)) - np.log(a.p / (1 - a.p))
    np.testing.assert_allclose(dlog, dlog[0], atol=1e-9)
    np.testing.assert_allclose(dlogit, dlogit[0], atol=1e-9)

    # recover each school's incidence effect from the centered run and check
    # the sampled mean really was removed
    c = cent.coeffs
    resid = {}
    for rec, lam in zip(b.data.records, b.lam):
        pred = (c.beta0[rec.urbanization - 1] + c.beta1 * math.log(rec.students)
                + c.beta2 * (rec.frac_women - 0.5) ** 2)
        resid.setdefault(rec.school_id, math.log(lam) - pred)
    assert abs(np.mean(list(resid.values()))) < 1e-9


def certain_reporting_spec(scheme):
    coeffs = SimCoeffs(alpha0=60.0, alpha1=0.0, alpha2=0.0, alpha3=0.0, alpha4=0.0)
    offsets = PriorSpec(gamma_scale=1e-9, delta_scale=1e-9)
    return SimSpec(n_schools=15, years=(2015, 2016), seed=2, coeffs=coeffs,
                   offsets=offsets, scheme=scheme)


@pytest.mark.parametrize("scheme", [Independent(), Exchangeable(rho=0.3), Pairwise()])
def test_certain_reporting_reproduces_latent_counts(scheme):
    sim = simulate_full(certain_reporting_spec(scheme))
    np.testing.assert_array_equal(sim.data.x, sim.z)


def test_unknown_scheme_rejected():
    with pytest.raises(TypeError):
        simulate_full(SimSpec(n_schools=5, scheme=object()))


def test_simulated_incidence_matches_intended_scale():
    # with beta1 = 1 and the intercept at its prior center, median incidence
    # per 1000 students should sit near 1000 * exp(-5.5) = 4.09
    coeffs = SimCoeffs(beta0=(-5.5, -5.5, -5.5), beta1=1.0)
    sim = simulate_full(SimSpec(n_schools=10_000, years=(2015,), seed=3,
                                coeffs=coeffs))
    incidence = 1000.0 * sim.z / sim.data.students
    assert 4.1 * 0.75 <= np.median(incidence) <= 4.1 * 1.25


def test_truth_frame_aligned():
    sim = simulate_full(SimSpec(n_schools=8, years=(2015, 2016), seed=4))
    frame = sim.truth_frame()
    assert list(frame.columns) == ["school_id", "year", "lambda_true",
                                   "p_true", "z_true"]
    assert len(frame) == sim.data.n_records
    assert frame["school_id"].tolist() == [r.school_id for r in sim.data.records]
    np.testing.assert_array_equal(frame["z_true"].to_numpy(), sim.z)


def test_covariate_marginals():
    sim = simulate_full(SimSpec(n_schools=5000, years=(2015,), seed=5))
    urb = np.array([r.urbanization for r in sim.data.records])
    for code, prob in zip((1, 2, 3), (0.45, 0.35, 0.20)):
        assert np.mean(urb == code) == pytest.approx(prob, abs=0.03)
    fw = np.array([r.frac_women for r in sim.data.records])
    assert fw.mean() == pytest.approx(0.57, abs=0.01)
    assert np.mean([r.assoc_only for r in sim.data.records]) == pytest.approx(0.13, abs=0.025)


def test_reporting_study_shares_latent_panel():
    spec = SimSpec(n_schools=30, years=(2015, 2016), seed=6)
    sims = simulate_reporting_study(
        spec, [Independent(), Exchangeable(rho=0.10), Pairwise()])
    assert set(sims) == {"independent", "exchangeable_0.1", "pairwise"}
    base = sims["independent"]
    for out in sims.values():
        np.testing.assert_array_equal(out.z, base.z)
        np.testing.assert_array_equal(out.lam, base.lam)
        np.testing.assert_array_equal(out.p, base.p)
        assert np.all(out.data.x <= out.z)
        stripped = [dataclasses.replace(r, reported=0) for r in out.data.records]
        base_stripped = [dataclasses.replace(r, reported=0) for r in base.data.records]
        assert stripped == base_stripped
    assert not np.array_equal(sims["independent"].data.x, sims["pairwise"].data.x)


def test_reporting_study_preserves_totals():
    spec = SimSpec(n_schools=150, years=(2015, 2016, 2017), seed=7)
    sims = simulate_reporting_study(
        spec, [Independent(), Exchangeable(rho=0.10), Pairwise()])
    expected = float(np.sum(sims["independent"].z * sims["independent"].p))
    for out in sims.values():
        # 5 sigma under the widest (exchangeable) variance
        z, p = out.z, out.p
        bound = 5.0 * math.sqrt(float(np.sum(z * p * (1 - p) * (1 + z * 0.1))))
        assert abs(out.data.x.sum() - expected) < bound


def test_reporting_study_from_truth():
    sim = simulate_full(SimSpec(n_schools=8, years=(2015, 2016), seed=3))
    rng = np.random.default_rng(0)
    z = rng.poisson(12.0, sim.data.n_records)
    p = rng.uniform(0.1, 0.9, sim.data.n_records)
    out = reporting_study_from_truth(
        sim.data, z, p, [Independent(), Exchangeable(rho=0.2), Pairwise()], seed=4)
    assert set(out) == {"independent", "exchangeable_0.2", "pairwise"}
    stripped = [dataclasses.replace(r, reported=0) for r in sim.data.records]
    for d in out.values():
        assert np.all(d.x <= z)
        assert [dataclasses.replace(r, reported=0) for r in d.records] == stripped
    again = reporting_study_from_truth(sim.data, z, p, [Independent()], seed=4)
    np.testing.assert_array_equal(again["independent"].x, out["independent"].x)


def test_reporting_study_from_truth_validation():
    sim = simulate_full(SimSpec(n_schools=4, years=(2015,), seed=3))
    n = sim.data.n_records
    z = np.ones(n, dtype=np.int64)
    good_p = np.full(n, 0.5)
    with pytest.raises(ValueError):
        reporting_study_from_truth(sim.data, z[:-1], good_p, [Independent()])
    with pytest.raises(ValueError):
        reporting_study_from_truth(sim.data, z.astype(float), good_p, [Independent()])
    with pytest.raises(ValueError):
        reporting_study_from_truth(sim.data, -z, good_p, [Independent()])
    with pytest.raises(ValueError):
        reporting_study_from_truth(sim.data, z, np.full(n, 1.5), [Independent()])


def test_default_benchmark_shape():
    sim = default_benchmark(0)
    assert sim.data.n_schools == 50
    assert sim.data.n_records == 300
    assert sim.data.years == (2014, 2015, 2016, 2017, 2018, 2019)
    again = default_benchmark(0)
    np.testing.assert_array_equal(sim.data.x, again.data.x)


# ---------------------------------------------------------------------------
# toys
# ---------------------------------------------------------------------------

def test_toy_iid_validation():
    with pytest.raises(ValueError):
        toy_iid(0.0, 0.5, 10)
    with pytest.raises(ValueError):
        toy_iid(2.0, 1.5, 10)


def test_toy_iid_certain_reporting():
    x, z = toy_iid(5.0, 1.0, 1000, seed=1)
    np.testing.assert_array_equal(x, z)


def test_toy_iid_moments():
    x, z = toy_iid(5.0, 0.4, 100_000, seed=2)
    assert np.all(x <= z)
    assert x.mean() == pytest.approx(2.0, abs=0.03)
    # marginally x is Poisson(lam0 * p0), so variance matches the mean
    assert x.var() == pytest.approx(2.0, rel=0.05)


def test_toy_covariate_degenerate_reduction():
    data = toy_covariate(beta0=math.log(5.0), beta=0.0, alpha0=0.0, alpha=0.0,
                         n=50_000, seed=3)
    np.testing.assert_allclose(data.lam, 5.0, rtol=1e-14)
    assert np.all(data.p == 0.5)
    assert data.x.mean() == pytest.approx(2.5, abs=0.05)
    assert np.all(data.x <= data.z)


def test_toy_covariate_custom_covariates():
    data = toy_covariate(beta0=1.0, beta=3.0, alpha0=0.0, alpha=0.0, n=100,
                         seed=4, covariate_rng=lambda rng, n: (np.zeros(n),
                                                               rng.standard_normal(n)))
    assert np.all(data.lam == math.exp(1.0))
    assert np.all(data.v == 0.0)


def test_toy_iid_target_gradient_and_stats():
    x, _ = toy_iid(5.0, 0.4, 200, seed=5)
    target = ToyIidTarget(x)
    assert target.dim == 2
    for theta in (np.array([1.5, -0.5]), np.array([2.0, 0.3]), np.array([0.5, -2.0])):
        logp, grad = target.logp_and_grad(theta)
        assert np.isfinite(logp)
        fd = central_diff_grad(lambda t: target.logp_and_grad(t)[0], theta)
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)
    # sufficient statistics: permuting the counts changes nothing
    permuted = ToyIidTarget(x[::-1])
    theta = np.array([1.2, -1.0])
    assert target.logp_and_grad(theta)[0] == permuted.logp_and_grad(theta)[0]
    with pytest.raises(ValueError):
        ToyIidTarget(np.array([1, -2, 3]))


def test_toy_iid_target_lam_p_mapping():
    draws = np.array([[0.0, 0.0], [math.log(4.0), 2.0]])
    lam, p = ToyIidTarget.lam_p(draws)
    np.testing.assert_allclose(lam, [1.0, 4.0])
    np.testing.assert_allclose(p, [0.5, expit(2.0)])


def test_toy_covariate_target_gradient():
    data = toy_covariate(beta0=1.6, beta=0.5, alpha0=-1.0, alpha=0.8, n=150, seed=6)
    target = ToyCovariateTarget(data)
    assert target.dim == 4
    for theta in (np.array([1.5, 0.4, -0.8, 0.6]),
                  np.array([1.0, 0.0, 0.0, 0.0])):
        logp, grad = target.logp_and_grad(theta)
        assert np.isfinite(logp)
        fd = central_diff_grad(lambda t: target.logp_and_grad(t)[0], theta)
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)


def test_toy_initial_points_near_prior_centers():
    x, _ = toy_iid(5.0, 0.25, 50, seed=7)
    rng = np.random.default_rng(0)
    pt = ToyIidTarget(x).initial_point(rng, scale=1e-6)
    np.testing.assert_allclose(pt, [math.log(5.0), math.log(0.25 / 0.75)], atol=1e-4)


def test_toy_prior_validation():
    with pytest.raises(ValueError):
        ToyPrior(log_rate_scale=0.0)
    with pytest.raises(ValueError):
        ToyPrior(report_b=-1.0)


# ---------------------------------------------------------------------------
# conditional floor and recovery regression
# ---------------------------------------------------------------------------

def test_conditional_report_sd_against_band_mc():
    # rejection draws from the prior conditioned on lam * p near the target
    exact = conditional_report_sd(2.0)
    rng = np.random.default_rng(10)
    n = 2_000_000
    lam = np.exp(rng.normal(math.log(5.0), 0.5, n))
    p = rng.beta(2.0, 6.0, n)
    keep = np.abs(lam * p - 2.0) < 0.1
    assert keep.sum() > 20_000
    assert np.std(p[keep]) == pytest.approx(exact, abs=0.005)


def test_conditional_report_sd_below_marginal_prior_sd():
    marginal_sd = math.sqrt(2 * 6 / ((2 + 6) ** 2 * (2 + 6 + 1)))
    for c in (0.5, 1.0, 2.0, 4.0):
        floor = conditional_report_sd(c)
        assert 0.0 < floor < marginal_sd


def test_conditional_report_sd_grid_converged():
    a = conditional_report_sd(2.0, n_grid=10_001)
    b = conditional_report_sd(2.0, n_grid=40_001)
    assert a == pytest.approx(b, abs=1e-4)
    with pytest.raises(ValueError):
        conditional_report_sd(0.0)


def test_recovery_regression_exact_cases():
    z = np.array([1.0, 4.0, 2.0, 8.0, 5.0])
    slope, intercept = recovery_regression(z, z)
    assert slope == pytest.approx(1.0, abs=1e-10)
    assert intercept == pytest.approx(0.0, abs=1e-9)
    slope, intercept = recovery_regression(z, 2.0 * z + 3.0)
    assert slope == pytest.approx(2.0, abs=1e-10)
    assert intercept == pytest.approx(3.0, abs=1e-9)


def test_recovery_regression_validation():
    with pytest.raises(ValueError):
        recovery_regression(np.ones(5), np.arange(5.0))
    with pytest.raises(ValueError):
        recovery_regression(np.arange(4.0), np.arange(5.0))
    with pytest.raises(ValueError):
        recovery_regression(np.array([1.0]), np.array([1.0]))
