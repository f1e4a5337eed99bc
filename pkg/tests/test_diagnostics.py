import math

import numpy as np
import pytest
from scipy.special import ndtr

from hiergibbs import (
    ChainOutput,
    GlobalParams,
    ZeroVarianceError,
    autocovariance,
    bvm_rescale,
    ess_batch_means,
    max_iat,
    tv_histogram,
)

from conftest import ar1_series


def synthetic_output(columns, seed=0, burn_in=0):
    names = tuple(columns)
    traces = np.column_stack([columns[n] for n in names])
    return ChainOutput(traces=traces, names=names, seed=seed, burn_in=burn_in, thin=1)


class TestAutocovariance:
    def test_iid_series_uncorrelated(self):
        x = np.random.default_rng(1).standard_normal(10 ** 5)
        acov = autocovariance(x, 1)
        assert abs(acov[1] / acov[0]) < 0.01

    def test_alternating_series(self):
        x = np.tile([1.0, -1.0], 5000)
        acov = autocovariance(x, 1)
        assert acov[1] / acov[0] == pytest.approx(-1.0, abs=1e-3)

    def test_ar1_autocorrelation_decay(self):
        x = ar1_series(0.5, 10 ** 5, seed=3)
        acov = autocovariance(x, 5)
        rho = acov[1:] / acov[0]
        for k in range(1, 6):
            assert abs(rho[k - 1] - 0.5 ** k) < 0.02

    def test_lag_bounds_checked(self):
        with pytest.raises(ValueError):
            autocovariance(np.ones(10), 10)


class TestEssBatchMeans:
    def test_iid_series(self):
        x = np.random.default_rng(7).standard_normal(10 ** 5)
        assert abs(ess_batch_means(x) - x.size) < 0.10 * x.size

    def test_ar1_series(self):
        # IAT of AR(1) with rho = 0.5 is (1 + rho) / (1 - rho) = 3
        x = ar1_series(0.5, 10 ** 5, seed=11)
        assert abs(ess_batch_means(x) - x.size / 3.0) < 0.15 * x.size / 3.0

    def test_anticorrelated_series_capped(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal(10 ** 4 + 1)
        x = z[1:] - z[:-1]  # lag-1 autocorrelation -1/2
        assert ess_batch_means(x) == x.size

    def test_constant_series_rejected(self):
        with pytest.raises(ZeroVarianceError):
            ess_batch_means(np.ones(500))

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            ess_batch_means(np.ones(50))


class TestMaxIat:
    def test_all_iid_columns(self):
        rng = np.random.default_rng(2)
        out = synthetic_output({f"c{i}": rng.standard_normal(10 ** 4) for i in range(4)})
        summary = max_iat(out)
        assert abs(summary.max_iat - 1.0) < 0.10
        for name, iat in summary.per_column.items():
            assert iat == pytest.approx(out.iterations / summary.ess_per_column[name], rel=1e-12)

    def test_one_sticky_column_dominates(self):
        rng = np.random.default_rng(4)
        cols = {f"c{i}": rng.standard_normal(10 ** 5) for i in range(3)}
        cols["slow"] = ar1_series(0.5, 10 ** 5, seed=13)
        summary = max_iat(synthetic_output(cols))
        assert summary.argmax == "slow"
        assert abs(summary.max_iat - 3.0) < 0.45

    def test_zero_variance_column_skipped(self):
        rng = np.random.default_rng(6)
        cols = {"ok": rng.standard_normal(5000), "stuck": np.ones(5000)}
        with pytest.warns(UserWarning, match="stuck"):
            summary = max_iat(synthetic_output(cols))
        assert summary.skipped == ("stuck",)
        assert "stuck" not in summary.per_column


class TestBvmRescale:
    def test_samples_at_the_estimate_map_to_zero(self):
        psi_hat = GlobalParams(mu=0.5, tau1=2.0, sample_mu=True, sample_tau1=True)
        samples = np.tile([0.5, 2.0], (100, 1))
        np.testing.assert_allclose(bvm_rescale(samples, psi_hat, J=400), 0.0)

    def test_linearity(self):
        rng = np.random.default_rng(8)
        psi_hat = GlobalParams(mu=0.1, tau1=1.0, sample_mu=True, sample_tau1=True)
        a = rng.standard_normal((50, 2))
        b = rng.standard_normal((50, 2))
        lhs = bvm_rescale(0.3 * a + 0.7 * b, psi_hat, J=100)
        rhs = 0.3 * bvm_rescale(a, psi_hat, J=100) + 0.7 * bvm_rescale(b, psi_hat, J=100)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_scaling_with_J(self):
        psi_hat = GlobalParams(mu=0.0, tau1=1.0, sample_mu=True, sample_tau1=True)
        samples = np.array([[1.0, 2.0]])
        out = bvm_rescale(samples, psi_hat, J=100)
        np.testing.assert_allclose(out, [[10.0, 10.0]])


class TestTvHistogram:
    def test_identical_sets_have_zero_distance(self):
        x = np.random.default_rng(1).standard_normal((10 ** 4, 2))
        assert tv_histogram(x, x, bins=50).value == 0.0

    def test_independent_same_law_below_noise_floor(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((10 ** 4, 2))
        b = rng.standard_normal((10 ** 4, 2))
        assert tv_histogram(a, b, bins=50).value < 0.05

    def test_separated_gaussians(self):
        # exact TV of N(0,1) vs N(3,1) is 2 Phi(1.5) - 1 = 0.866
        a = np.random.default_rng(3).standard_normal((10 ** 4, 1))
        estimate = tv_histogram(a, (np.array([3.0]), np.eye(1)), bins=50)
        assert estimate.value > 0.8
        exact = 2 * ndtr(1.5) - 1
        assert estimate.value < exact + 0.05

    def test_symmetric_in_sample_arguments(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((2000, 1))
        b = 0.3 + rng.standard_normal((2000, 1))
        assert tv_histogram(a, b, bins=20).value == pytest.approx(
            tv_histogram(b, a, bins=20).value, abs=1e-12
        )

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((2000, 2))
        b = rng.standard_normal((2000, 2))
        perm = rng.permutation(2000)
        assert tv_histogram(a, b, bins=25).value == pytest.approx(
            tv_histogram(a[perm], b[perm], bins=25).value, abs=1e-12
        )

    def test_gaussian_reference_matches_two_sample_estimate(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((10 ** 4, 1))
        ref_draws = rng.standard_normal((10 ** 5, 1))
        two_sample = tv_histogram(a, ref_draws, bins=40).value
        exact_ref = tv_histogram(a, (np.zeros(1), np.eye(1)), bins=40).value
        assert abs(two_sample - exact_ref) < 0.03

    def test_input_validation(self):
        small = np.zeros((10, 1))
        with pytest.raises(ValueError):
            tv_histogram(small, small, bins=50)
        big = np.zeros((2000, 1))
        with pytest.raises(ValueError):
            tv_histogram(big, big, bins=5)
