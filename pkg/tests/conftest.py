"""Shared test oracles, kept independent of the code paths they check."""

import numpy as np


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if name.startswith("test_criterion"):
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {verdict}", flush=True)


def trapezoid_cdf(logpdf, lo, hi, n=20001):
    """Normalised CDF of exp(logpdf) on a grid, by trapezoid quadrature.

    ``logpdf`` may return (value, derivative) pairs; only the value is used.
    """
    grid = np.linspace(lo, hi, n)
    out = logpdf(grid)
    logf = out[0] if isinstance(out, tuple) else out
    f = np.exp(logf - np.max(logf))
    steps = np.diff(grid)
    increments = 0.5 * (f[1:] + f[:-1]) * steps
    cdf = np.concatenate(([0.0], np.cumsum(increments)))
    return grid, cdf / cdf[-1]


def ks_distance(draws, grid, cdf):
    """Sup distance between the empirical CDF of draws and a reference CDF
    tabulated on a grid."""
    draws = np.sort(np.asarray(draws))
    ref = np.interp(draws, grid, cdf)
    n = draws.size
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    return float(np.max(np.maximum(np.abs(ecdf_hi - ref), np.abs(ref - ecdf_lo))))


def ar1_series(rho, n, seed):
    """Stationary AR(1) path with unit innovation variance."""
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = rng.standard_normal() / np.sqrt(1.0 - rho ** 2)
    eps = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + eps[t]
    return x


def normal_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)
