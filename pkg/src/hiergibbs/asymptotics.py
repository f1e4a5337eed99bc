"""Limiting quantities of the two-block samplers.

Closed forms for the normal hierarchy (Fisher information, the coupling
matrix C and conditional-variance matrix V, the limiting covariance of the
rescaled statistics, spectral gaps) and quadrature-based versions for the
discrete likelihoods, plus the warm-start mixing-time bound
1 + (log(M/2) - log eps) / (-log(1 - gamma)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .models import (
    GH_NODES,
    GH_NODES_CHECK,
    GH_REL_TOL,
    GlobalParams,
    ModelKind,
    ModelSpec,
    NORMAL_KINDS,
    _gh_log_moment,
    _gh_rule,
    _posterior_mode,
    log_conditional_theta,
    marginal_loglik,
    outcome_distribution,
)


class GapVariant(Enum):
    P1 = "P1"
    P2P3 = "P2P3"
    EXTENDED = "Extended"


@dataclass
class FisherMatrix:
    """Fisher information of the marginal likelihood, restricted to the
    labelled psi components."""

    entries: np.ndarray
    labels: tuple

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        D = len(self.labels)
        if self.entries.shape != (D, D):
            raise InvalidParameterError("Fisher matrix shape disagrees with labels")
        if not np.allclose(self.entries, self.entries.T, atol=1e-12):
            raise NumericalError("Fisher matrix must be symmetric")

    @property
    def D(self) -> int:
        return len(self.labels)

    def inverse(self) -> np.ndarray:
        try:
            return np.linalg.inv(self.entries)
        except np.linalg.LinAlgError as err:
            raise NumericalError(f"singular Fisher matrix: {err}") from err

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


@dataclass
class GapInputs:
    """C (S x D), V (S x S, positive definite) and the matching Fisher
    block, as fed to the eigenvalue route for the spectral gap."""

    C: np.ndarray
    V: np.ndarray
    I: FisherMatrix

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        S, D = self.C.shape
        if self.V.shape != (S, S):
            raise InvalidParameterError(f"V must be {S}x{S}, got {self.V.shape}")
        if self.I.D != D:
            raise InvalidParameterError(f"Fisher block must be {D}x{D}")
        if not np.allclose(self.V, self.V.T, atol=1e-12):
            raise InvalidParameterError("V must be symmetric")
        if np.linalg.eigvalsh(self.V)[0] <= 0:
            raise InvalidParameterError("V must be positive definite")

    @property
    def S(self) -> int:
        return self.C.shape[0]


@dataclass
class GapReport:
    gamma: float
    eigenvalues: np.ndarray
    bound_T: Optional[float] = None


@dataclass
class LimitCovariance:
    """Joint limiting covariance of the rescaled (T, psi) in the block
    layout [[V + C I^-1 C', C I^-1], [I^-1 C', I^-1]]."""

    sigma: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-10):
            raise NumericalError("limiting covariance must be symmetric")
        if np.linalg.eigvalsh(self.sigma)[0] <= 0:
            raise NumericalError("limiting covariance must be positive definite")


# ---------------------------------------------------------------------------
# normal-model closed forms


def _fisher_normal_full(mu, tau1, tau0, m):
    """The 3x3 Fisher information of the normal marginal likelihood in the
    (mu, tau1, tau0) ordering."""
    s = tau1 + m * tau0
    i_mumu = m * tau0 * tau1 / s
    i_t1t1 = m ** 2 * tau0 ** 2 / (2.0 * tau1 ** 2 * s ** 2)
    i_t1t0 = m / (2.0 * s ** 2)
    i_t0t0 = (m - 1) / (2.0 * tau0 ** 2) + tau1 ** 2 / (2.0 * tau0 ** 2 * s ** 2)
    return np.array([
        [i_mumu, 0.0, 0.0],
        [0.0, i_t1t1, i_t1t0],
        [0.0, i_t1t0, i_t0t0],
    ])


_PSI_ORDER = ("mu", "tau1", "tau0")


def fisher_normal(psi_star: GlobalParams, m: int) -> FisherMatrix:
    """Fisher information of the normal marginal likelihood, restricted to
    the components flagged as sampled in ``psi_star``."""
    if m < 1:
        raise InvalidParameterError("m must be >= 1")
    if not (psi_star.tau0 > 0 and psi_star.tau1 > 0):
        raise InvalidParameterError("precisions must be positive")
    full = _fisher_normal_full(psi_star.mu, psi_star.tau1, psi_star.tau0, m)
    labels = psi_star.sampled_names() or _PSI_ORDER
    idx = [_PSI_ORDER.index(n) for n in labels]
    return FisherMatrix(full[np.ix_(idx, idx)], tuple(labels))


def cv_normal(psi_star: GlobalParams, m: int, variant: GapVariant) -> GapInputs:
    """The printed C and V matrices of the normal hierarchy, paired with
    the matching Fisher block.

    P1: statistic theta, parameter mu.  P2P3: statistics (theta, theta^2)
    centred at mu*, parameters (mu, tau1).  Extended: statistics
    ((theta - ybar)^2, (theta - mu)^2), parameters (tau1, tau0); needs
    m >= 2 for a non-singular Fisher block.
    """
    if not (psi_star.tau0 > 0 and psi_star.tau1 > 0):
        raise InvalidParameterError("precisions must be positive")
    tau1, tau0 = psi_star.tau1, psi_star.tau0
    s = m * tau0 + tau1
    full = _fisher_normal_full(psi_star.mu, tau1, tau0, m)

    if variant is GapVariant.P1:
        C = np.array([[tau1 / s]])
        V = np.array([[1.0 / s]])
        I = FisherMatrix(full[:1, :1], ("mu",))
        return GapInputs(C, V, I)

    if variant is GapVariant.P2P3:
        C = np.array([
            [tau1 / s, 0.0],
            [0.0, -(tau1 + 2.0 * m * tau0) / (tau1 * s ** 2)],
        ])
        V = np.array([
            [1.0 / s, 0.0],
            [0.0, (2.0 * tau1 + 4.0 * m * tau0) / (tau1 * s ** 2)],
        ])
        I = FisherMatrix(full[:2, :2], ("mu", "tau1"))
        return GapInputs(C, V, I)

    if variant is GapVariant.EXTENDED:
        if m < 2:
            raise InvalidParameterError(
                "the extended model is singular at m=1: (tau0, tau1) is not identifiable"
            )
        C = np.array([
            [1.0 / s ** 2, m / s ** 2],
            [1.0 / s ** 2, m / s ** 2],
        ])
        V = np.array([
            [2.0 / s ** 2 + 4.0 * tau1 / (m * tau0 * s ** 2), -2.0 / s ** 2],
            [-2.0 / s ** 2, 2.0 / s ** 2 + 4.0 * m * tau0 / (tau1 * s ** 2)],
        ])
        I = FisherMatrix(full[1:, 1:], ("tau1", "tau0"))
        return GapInputs(C, V, I)

    raise InvalidParameterError(f"unknown variant {variant}")  # pragma: no cover


def limit_covariance(inputs: GapInputs) -> LimitCovariance:
    """Block covariance [[V + C I^-1 C', C I^-1], [I^-1 C', I^-1]]."""
    I_inv = inputs.I.inverse()
    CIC = inputs.C @ I_inv @ inputs.C.T
    top = np.hstack([inputs.V + CIC, inputs.C @ I_inv])
    bottom = np.hstack([I_inv @ inputs.C.T, I_inv])
    sigma = np.vstack([top, bottom])
    out = LimitCovariance(0.5 * (sigma + sigma.T))
    expected = np.linalg.det(I_inv) * np.linalg.det(inputs.V)
    got = np.linalg.det(out.sigma)
    if abs(got - expected) > 1e-8 * abs(expected):
        raise NumericalError(
            f"det(Sigma) = {got:.12g} deviates from det(I^-1) det(V) = {expected:.12g}"
        )
    return out


def gap_from_matrices(inputs: GapInputs, M: Optional[float] = None,
                      eps: Optional[float] = None) -> GapReport:
    """Spectral gap from the eigenvalues of V^-1 C I^-1 C'.

    The eigenvalues are computed on the symmetric congruent matrix
    V^-1/2 C I^-1 C' V^-1/2, which has the same spectrum but is guaranteed
    real and non-negative.
    """
    I_inv = inputs.I.inverse()
    vals, vecs = np.linalg.eigh(inputs.V)
    if vals[0] <= 0:
        raise InvalidParameterError("V must be positive definite")
    v_inv_half = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
    core = v_inv_half @ inputs.C @ I_inv @ inputs.C.T @ v_inv_half
    lam = np.linalg.eigvalsh(0.5 * (core + core.T))
    if lam[0] < -1e-10:
        raise NumericalError(f"negative eigenvalue {lam[0]:.3e} in the gap computation")
    lam = np.clip(lam, 0.0, None)
    gamma = float(np.min(1.0 / (1.0 + lam)))
    bound = None
    if M is not None and eps is not None:
        bound = mixing_bound(gamma, M, eps)
    return GapReport(gamma=gamma, eigenvalues=lam, bound_T=bound)


def gap_closed_normal(m: int, tau0: float, tau1: float, variant: GapVariant) -> float:
    """Closed-form limiting gaps of the normal hierarchy.

    P1: 1 / (1 + r) with r = tau1 / (m tau0).  P2P3: its square.
    Extended: 1 / (1 + (1 - r)^2 / (m - 1) + r^2), defined for m >= 2.
    """
    if m < 1 or tau0 <= 0 or tau1 <= 0:
        raise InvalidParameterError("need m >= 1 and positive precisions")
    r = tau1 / (m * tau0)
    if variant is GapVariant.P1:
        return 1.0 / (1.0 + r)
    if variant is GapVariant.P2P3:
        return (1.0 / (1.0 + r)) ** 2
    if variant is GapVariant.EXTENDED:
        if m < 2:
            raise InvalidParameterError("the extended gap needs m >= 2")
        return 1.0 / (1.0 + (1.0 - r) ** 2 / (m - 1.0) + r ** 2)
    raise InvalidParameterError(f"unknown variant {variant}")  # pragma: no cover


# ---------------------------------------------------------------------------
# quadrature route for S = D = 1


def posterior_moment(model: ModelSpec, psi: GlobalParams, y, s: int, p: int) -> float:
    """E[T_s(theta)^p | y, psi] for the statistic basis T = (theta, theta^2),
    i.e. the posterior moment E[theta^(s p) | y, psi].

    Closed-form Gaussian moments for the normal kinds; mode-centered
    Gauss-Hermite with a doubled-rule check for the discrete kinds.
    """
    if s not in (1, 2) or p < 1:
        raise InvalidParameterError("need s in {1, 2} and p >= 1")
    if s * p > 6:
        raise InvalidParameterError("moments are only guaranteed up to order 6")
    order = s * p

    if model.kind in NORMAL_KINDS:
        yv = np.atleast_1d(np.asarray(y, dtype=float))
        prec = model.m * psi.tau0 + psi.tau1
        mean = (model.m * psi.tau0 * yv.mean() + psi.tau1 * psi.mu) / prec
        return _gaussian_moment(mean, 1.0 / prec, order)

    cond = log_conditional_theta(model, psi, y)
    mode, sigma = _posterior_mode(cond, x0=psi.mu, scale=1.0 / math.sqrt(psi.tau1))

    def ratio(n):
        log_num, sign = _gh_log_moment(cond, lambda t: t ** order, mode, sigma, n)
        log_den, _ = _gh_log_moment(cond, lambda t: np.ones_like(t), mode, sigma, n)
        return sign * math.exp(log_num - log_den)

    val, check = ratio(GH_NODES), ratio(GH_NODES_CHECK)
    resid = abs(val - check) / max(1.0, abs(check))
    if resid > GH_REL_TOL:
        raise NumericalError(
            f"posterior moment quadrature did not converge (residual {resid:.3e})",
            residual=resid,
        )
    return check


def _gaussian_moment(mean, var, order):
    """E[X^order] for X ~ N(mean, var) by the binomial expansion over
    central moments: E[Z^s] = s! / ((s/2)! 2^(s/2)) for even s."""
    sigma = math.sqrt(var)
    total = 0.0
    for i in range(order + 1):
        k = order - i
        if k % 2:
            continue
        z_moment = math.factorial(k) / (math.factorial(k // 2) * 2 ** (k // 2))
        total += math.comb(order, i) * mean ** i * sigma ** k * z_moment
    return total


def gap_single_quadrature(model: ModelSpec, psi_star: GlobalParams) -> float:
    """Limiting gap for the S = D = 1 configuration (one statistic
    T(theta) = theta, one free parameter):

        gamma = Var_Y(E[theta | Y, psi*]) / Var(theta | psi*).

    Discrete kinds: the outer expectation is the finite sum over outcomes
    weighted by g(y_r | psi*).  Normal kinds: Gauss-Hermite over the group
    mean, which reproduces the closed-form P1 gap.
    """
    if not (psi_star.tau0 > 0 and psi_star.tau1 > 0):
        raise InvalidParameterError("precisions must be positive")
    prior_var = 1.0 / psi_star.tau1

    if model.is_discrete:
        weights = outcome_distribution(model, psi_star)
        means = np.array([
            posterior_moment(model, psi_star, r, 1, 1) for r in model.outcomes()
        ])
        centre = float(weights @ means)
        outer_var = float(weights @ (means - centre) ** 2)
        return outer_var / prior_var

    # group mean is N(mu*, 1/tau1* + 1/(m tau0*)); the posterior mean is
    # linear in it, so the Hermite rule integrates the square exactly
    m = model.m
    prec = m * psi_star.tau0 + psi_star.tau1
    sd_ybar = math.sqrt(1.0 / psi_star.tau1 + 1.0 / (m * psi_star.tau0))
    nodes, logw = _gh_rule(GH_NODES)
    ybar = psi_star.mu + math.sqrt(2.0) * sd_ybar * nodes
    post_mean = (m * psi_star.tau0 * ybar + psi_star.tau1 * psi_star.mu) / prec
    w = np.exp(logw) / math.sqrt(math.pi)
    centre = float(w @ post_mean)
    outer_var = float(w @ (post_mean - centre) ** 2)
    return outer_var / prior_var


# ---------------------------------------------------------------------------
# numerical Fisher information for discrete likelihoods


def fisher_numeric_discrete(model: ModelSpec, psi_star: GlobalParams) -> FisherMatrix:
    """I(psi) = sum_r g(y_r | psi) s(y_r) s(y_r)' over the sampled psi
    components, with scores from relative-step central differences of the
    marginal log-likelihood.

    Each finite-difference score is cross-validated against the
    posterior-expectation identities d/dmu log g = tau E[theta - mu | y]
    and d/dtau log g = 1/(2 tau) - E[(theta - mu)^2 | y] / 2.
    """
    if not model.is_discrete:
        raise InvalidParameterError("fisher_numeric_discrete needs a discrete kind")
    names = psi_star.sampled_names()
    if any(n == "tau0" for n in names):
        raise InvalidParameterError("discrete kinds have psi = (mu, tau1)")
    D = len(names)
    if D == 0:
        raise InvalidParameterError("no sampled components")
    weights = outcome_distribution(model, psi_star)
    base = psi_star.as_vector(names)
    steps = 1e-5 * np.maximum(1.0, np.abs(base))

    scores = np.empty((model.m + 1, D))
    for d, name in enumerate(names):
        h = steps[d]
        up = psi_star.with_vector(base + h * np.eye(D)[d], names)
        dn = psi_star.with_vector(base - h * np.eye(D)[d], names)
        for r in model.outcomes():
            scores[r, d] = (
                marginal_loglik(model, up, r) - marginal_loglik(model, dn, r)
            ) / (2.0 * h)

    for r in model.outcomes():
        m1 = posterior_moment(model, psi_star, r, 1, 1)
        m2 = posterior_moment(model, psi_star, r, 2, 1)
        exact = {
            "mu": psi_star.tau1 * (m1 - psi_star.mu),
            "tau1": 0.5 / psi_star.tau1
            - 0.5 * (m2 - 2.0 * psi_star.mu * m1 + psi_star.mu ** 2),
        }
        for d, name in enumerate(names):
            err = abs(scores[r, d] - exact[name])
            if err > 1e-6 * max(1.0, abs(exact[name])):
                raise NumericalError(
                    f"finite-difference score for {name} at y={r} deviates from "
                    f"the posterior-expectation identity by {err:.3e}",
                    residual=err,
                )

    info = (scores * weights[:, None]).T @ scores
    return FisherMatrix(0.5 * (info + info.T), names)


# ---------------------------------------------------------------------------
# warm-start mixing bound


def mixing_bound(gamma: float, M: float, eps: float) -> float:
    """Warm-start mixing-time bound 1 + (log(M/2) - log eps)/(-log(1-gamma)).

    Decreasing in gamma; the gamma -> 1 limit is 1.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidParameterError(f"gamma must lie in (0, 1], got {gamma}")
    if M < 1.0:
        raise InvalidParameterError(f"M must be >= 1, got {M}")
    if not 0.0 < eps < 1.0:
        raise InvalidParameterError(f"eps must lie in (0, 1), got {eps}")
    if gamma == 1.0:
        return 1.0
    return 1.0 + (math.log(M / 2.0) - math.log(eps)) / (-math.log1p(-gamma))
