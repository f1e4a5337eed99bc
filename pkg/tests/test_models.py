import math

import numpy as np
import pytest

from hiergibbs import (
    Dataset,
    GlobalParams,
    InvalidParameterError,
    ModelKind,
    ModelSpec,
    StatBasis,
    group_posterior_normal,
    log_conditional_theta,
    marginal_loglik,
    outcome_distribution,
    simulate_data,
    suff_stats,
)

from conftest import normal_logpdf


def logit_model(m=5):
    return ModelSpec(ModelKind.BINOMIAL_LOGIT, m=m)


def normal_model(m=3, unknown_tau0=False):
    kind = ModelKind.NORMAL_UNKNOWN_TAU0 if unknown_tau0 else ModelKind.NORMAL_KNOWN_TAU0
    return ModelSpec(kind, m=m)


class TestSpecValidation:
    def test_m_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            ModelSpec(ModelKind.BINOMIAL_LOGIT, m=0)

    def test_generic_discrete_needs_full_table(self):
        table = {0: lambda t: (np.log(0.5) * np.ones_like(t), np.zeros_like(t))}
        with pytest.raises(InvalidParameterError):
            ModelSpec(ModelKind.GENERIC_DISCRETE, m=1, pmf_table=table)

    def test_generic_discrete_masses_must_sum_to_one(self):
        bad = {
            0: lambda t: (np.log(0.6) * np.ones_like(np.asarray(t, float)), 0.0 * np.asarray(t, float)),
            1: lambda t: (np.log(0.6) * np.ones_like(np.asarray(t, float)), 0.0 * np.asarray(t, float)),
        }
        with pytest.raises(InvalidParameterError):
            ModelSpec(ModelKind.GENERIC_DISCRETE, m=1, pmf_table=bad)

    def test_precisions_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            GlobalParams(mu=0.0, tau1=-1.0)
        with pytest.raises(InvalidParameterError):
            GlobalParams(mu=0.0, tau1=1.0, tau0=0.0)

    def test_counts_range_checked(self):
        with pytest.raises(InvalidParameterError):
            Dataset(m=3, counts=np.array([0, 4]))

    def test_group_means_cache_checked(self):
        reals = np.array([[0.0, 2.0], [1.0, 1.0]])
        with pytest.raises(InvalidParameterError):
            Dataset(m=2, reals=reals, group_means=np.array([0.0, 0.0]))


class TestSimulateData:
    def test_rejects_empty_dataset(self):
        psi = GlobalParams(mu=0.0, tau1=1.0)
        with pytest.raises(InvalidParameterError):
            simulate_data(normal_model(), psi, J=0, seed=1)

    def test_reproducible(self):
        psi = GlobalParams(mu=1.0, tau1=2.0, tau0=0.5)
        a = simulate_data(normal_model(), psi, J=50, seed=123)
        b = simulate_data(normal_model(), psi, J=50, seed=123)
        np.testing.assert_array_equal(a.reals, b.reals)
        c = simulate_data(logit_model(), psi, J=50, seed=123)
        d = simulate_data(logit_model(), psi, J=50, seed=123)
        np.testing.assert_array_equal(c.counts, d.counts)

    def test_normal_group_mean_variance(self):
        # Var(Ybar_j) = 1/tau1 + 1/(m tau0) = 2 for unit precisions at m=1
        psi = GlobalParams(mu=0.0, tau1=1.0, tau0=1.0)
        data = simulate_data(ModelSpec(ModelKind.NORMAL_KNOWN_TAU0, m=1), psi, J=10 ** 5, seed=7)
        sample_var = data.group_means.var(ddof=1)
        se = 2.0 * math.sqrt(2.0 / (data.J - 1))
        assert abs(sample_var - 2.0) < 3 * se

    def test_binomial_mean_count_matches_quadrature(self):
        psi = GlobalParams(mu=1.0, tau1=1.0)
        model = logit_model(m=5)
        data = simulate_data(model, psi, J=10 ** 5, seed=11)
        weights = outcome_distribution(model, psi)
        mean_expected = float(weights @ np.arange(6))
        var_expected = float(weights @ (np.arange(6) - mean_expected) ** 2)
        se = math.sqrt(var_expected / data.J)
        assert abs(data.counts.mean() - mean_expected) < 3 * se

    def test_generic_discrete_matches_binomial_logit(self):
        # a generic table replicating the m=2 logit must give the same law
        def entry(y):
            def fn(theta):
                theta = np.asarray(theta, dtype=float)
                coeff = math.log(math.comb(2, y))
                lf = coeff + y * theta - 2 * np.logaddexp(0.0, theta)
                sig = 1.0 / (1.0 + np.exp(-theta))
                return lf, y - 2 * sig
            return fn

        generic = ModelSpec(ModelKind.GENERIC_DISCRETE, m=2, pmf_table={y: entry(y) for y in range(3)})
        psi = GlobalParams(mu=0.5, tau1=1.0)
        got = simulate_data(generic, psi, J=20000, seed=5).counts
        weights = outcome_distribution(logit_model(m=2), psi)
        freqs = np.bincount(got, minlength=3) / got.size
        assert np.max(np.abs(freqs - weights)) < 3 * math.sqrt(0.25 / got.size) + 0.005


class TestMarginalLoglik:
    def test_normal_closed_form_value(self):
        # m=1, tau0=tau1=2 collapses to N(0, 1): log density at 0
        psi = GlobalParams(mu=0.0, tau1=2.0, tau0=2.0)
        value = marginal_loglik(ModelSpec(ModelKind.NORMAL_KNOWN_TAU0, m=1), psi, [0.0])
        assert abs(value - (-0.918939)) < 1e-6

    def test_normal_density_normalises(self):
        psi = GlobalParams(mu=0.3, tau1=0.7, tau0=1.9)
        model = ModelSpec(ModelKind.NORMAL_KNOWN_TAU0, m=1)
        grid = np.linspace(-12, 12, 8001)
        dens = np.exp([marginal_loglik(model, psi, [y]) for y in grid])
        assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-6

    def test_logit_total_probability(self):
        psi = GlobalParams(mu=0.4, tau1=1.3)
        g = outcome_distribution(logit_model(m=1), psi)
        assert abs(g.sum() - 1.0) < 1e-10
        g5 = outcome_distribution(logit_model(m=5), psi)
        assert abs(g5.sum() - 1.0) < 1e-10

    def test_matches_wide_grid_quadrature(self):
        # independent trapezoid integral of f(y|theta) p(theta|psi)
        psi = GlobalParams(mu=0.8, tau1=0.6)
        model = logit_model(m=4)
        theta = np.linspace(-15, 15, 40001)
        prior = np.exp(normal_logpdf(theta, psi.mu, 1.0 / psi.tau1))
        for y in range(5):
            lik = math.comb(4, y) * np.exp(y * theta - 4 * np.logaddexp(0.0, theta))
            oracle = np.trapezoid(lik * prior, theta)
            assert abs(math.exp(marginal_loglik(model, psi, y)) - oracle) < 1e-9

    def test_conjugacy_consistency(self):
        # f(y | theta) p(theta | psi) / g(y | psi) equals the posterior density
        psi = GlobalParams(mu=0.5, tau1=2.0, tau0=1.5)
        model = normal_model(m=3)
        y = np.array([0.1, -0.4, 1.2])
        logg = marginal_loglik(model, psi, y)
        mean, var = group_posterior_normal(y.mean(), psi, 3)
        for theta in np.linspace(-2, 2, 41):
            loglik = normal_logpdf(y, theta, 1.0 / psi.tau0).sum()
            logprior = normal_logpdf(theta, psi.mu, 1.0 / psi.tau1)
            assert abs(loglik + logprior - logg - normal_logpdf(theta, mean, var)) < 1e-10


class TestGroupPosterior:
    def test_example_values(self):
        mean, var = group_posterior_normal(2.0, GlobalParams(mu=0.0, tau1=1.0, tau0=1.0), m=1)
        assert mean == pytest.approx(1.0)
        assert var == pytest.approx(0.5)

    def test_data_dominant_limit(self):
        mean, _ = group_posterior_normal(3.0, GlobalParams(mu=-5.0, tau1=1e-14, tau0=1.0), m=2)
        assert mean == pytest.approx(3.0, abs=1e-12)

    def test_prior_mean_fixed_point(self):
        for tau1, tau0 in [(0.3, 2.0), (5.0, 0.1)]:
            mean, _ = group_posterior_normal(0.7, GlobalParams(mu=0.7, tau1=tau1, tau0=tau0), m=4)
            assert mean == pytest.approx(0.7)


class TestSuffStats:
    def test_zero_theta(self):
        got = suff_stats(normal_model(), StatBasis.SUM_PAIR, np.zeros(5))
        np.testing.assert_allclose(got.values, [0.0, 0.0])

    def test_sum_pair_arithmetic(self):
        got = suff_stats(normal_model(), StatBasis.SUM_PAIR, np.array([1.0, 2.0]))
        np.testing.assert_allclose(got.values, [3.0, 5.0])

    def test_centered_pair_arithmetic(self):
        got = suff_stats(
            normal_model(), StatBasis.CENTERED_PAIR, np.array([1.0, 2.0]),
            mu=0.0, group_means=np.array([1.0, 1.0]),
        )
        np.testing.assert_allclose(got.values, [1.0, 5.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            suff_stats(
                normal_model(), StatBasis.CENTERED_PAIR, np.array([1.0, 2.0]),
                mu=0.0, group_means=np.array([1.0]),
            )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        theta = rng.standard_normal(12)
        for basis in (StatBasis.SUM_THETA, StatBasis.SUM_PAIR):
            a = suff_stats(normal_model(), basis, theta)
            b = suff_stats(normal_model(), basis, theta[::-1].copy())
            np.testing.assert_allclose(a.values, b.values, atol=1e-12)


class TestThetaConditional:
    def test_logit_derivative_example(self):
        cond = log_conditional_theta(logit_model(m=1), GlobalParams(mu=0.0, tau1=1.0), 0)
        _, d = cond(0.0)
        assert d == pytest.approx(-0.5)

    def test_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        cond = log_conditional_theta(logit_model(m=5), GlobalParams(mu=0.3, tau1=0.8), 3)
        for theta in rng.uniform(-4, 4, size=100):
            h = 1e-6
            _, d = cond(theta)
            fd = (cond(theta + h)[0] - cond(theta - h)[0]) / (2 * h)
            assert abs(d - fd) < 1e-6

    def test_normal_kind_returns_gaussian_parameters(self):
        psi = GlobalParams(mu=0.2, tau1=1.1, tau0=0.9)
        y = np.array([0.5, 1.5, -0.5])
        cond = log_conditional_theta(normal_model(m=3), psi, y)
        mean, var = group_posterior_normal(y.mean(), psi, 3)
        assert cond.gaussian == pytest.approx((mean, var))

    def test_logit_curvature_bound(self):
        # second derivative of the log conditional is at most -tau
        cond = log_conditional_theta(logit_model(m=4), GlobalParams(mu=0.0, tau1=2.0), 2)
        h = 1e-5
        for theta in np.linspace(-3, 3, 25):
            second = (cond(theta + h)[1] - cond(theta - h)[1]) / (2 * h)
            assert second <= -2.0 + 1e-6


class TestPriorSpec:
    def test_flat_mu_prior_has_no_marginal_density(self):
        from hiergibbs import MuPrior

        with pytest.raises(InvalidParameterError):
            MuPrior.flat().logpdf(0.0)

    def test_proper_mu_priors_evaluate(self):
        from hiergibbs import MuPrior

        assert MuPrior.fixed_var(0.0, 1.0).logpdf(0.0) == pytest.approx(-0.9189385)
        scaled = MuPrior.scaled_normal(0.0, 2.0)
        assert scaled.logpdf(0.0, tau=2.0) == pytest.approx(-0.9189385)
