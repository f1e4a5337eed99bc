"""Two-level hierarchical model family.

Groups j = 1..J carry a scalar local parameter ``theta_j`` with a normal
population law N(mu, 1/tau1).  Observations are either ``m`` real values
per group with likelihood N(theta_j, 1/tau0), or a single count in
{0..m} from a strictly positive discrete likelihood (binomial-logit or a
user-supplied table).  This module owns the densities, the conjugate
posterior pieces, the sufficient-statistic bases and synthetic data
generation under the population law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import InvalidParameterError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# Gauss-Hermite rule sizes for the discrete marginal likelihood: the
# 64-node estimate is accepted only if a 128-node refinement agrees.
GH_NODES = 64
GH_NODES_CHECK = 128
GH_REL_TOL = 1e-8


class ModelKind(Enum):
    NORMAL_KNOWN_TAU0 = "NormalKnownTau0"
    NORMAL_UNKNOWN_TAU0 = "NormalUnknownTau0"
    BINOMIAL_LOGIT = "BinomialLogit"
    GENERIC_DISCRETE = "GenericDiscrete"


NORMAL_KINDS = (ModelKind.NORMAL_KNOWN_TAU0, ModelKind.NORMAL_UNKNOWN_TAU0)
DISCRETE_KINDS = (ModelKind.BINOMIAL_LOGIT, ModelKind.GENERIC_DISCRETE)


@dataclass
class ModelSpec:
    """Observation model for one group.

    ``m`` is the number of real observations per group (normal kinds) or
    the trial count / largest outcome (discrete kinds).  For
    ``GENERIC_DISCRETE``, ``pmf_table`` maps each outcome r in {0..m} to a
    callable ``theta -> (log f(y_r | theta), d/dtheta log f(y_r | theta))``
    accepting scalars or numpy arrays; the point masses must be strictly
    positive and sum to one at every theta.
    """

    kind: ModelKind
    m: int
    pmf_table: Optional[dict] = None

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameterError(f"m must be >= 1, got {self.m}")
        if self.kind is ModelKind.GENERIC_DISCRETE:
            if self.pmf_table is None:
                raise InvalidParameterError("GenericDiscrete requires a pmf_table")
            if set(self.pmf_table) != set(range(self.m + 1)):
                raise InvalidParameterError(
                    "pmf_table must cover every outcome in 0..m"
                )
            self._check_pmf_normalization()
        elif self.pmf_table is not None:
            raise InvalidParameterError("pmf_table is only valid for GenericDiscrete")

    def _check_pmf_normalization(self, probe=(-3.0, -1.0, 0.0, 1.0, 3.0)):
        for theta in probe:
            masses = np.array(
                [np.exp(self.pmf_table[r](theta)[0]) for r in self.outcomes()]
            )
            if np.any(masses <= 0.0):
                raise InvalidParameterError(
                    f"pmf_table has a non-positive mass at theta={theta}"
                )
            if abs(masses.sum() - 1.0) > 1e-8:
                raise InvalidParameterError(
                    f"pmf_table masses sum to {masses.sum():.12g} != 1 at theta={theta}"
                )

    @property
    def is_discrete(self) -> bool:
        return self.kind in DISCRETE_KINDS

    def outcomes(self) -> range:
        if not self.is_discrete:
            raise InvalidParameterError("outcomes() is defined for discrete kinds only")
        return range(self.m + 1)


@dataclass
class GlobalParams:
    """Hyper-parameter vector psi = (mu, tau1, tau0) with per-field flags
    marking which components a sampler may update.  Fixed fields are never
    mutated by the kernels."""

    mu: float
    tau1: float
    tau0: float = 1.0
    sample_mu: bool = True
    sample_tau1: bool = True
    sample_tau0: bool = False

    def __post_init__(self):
        if not (self.tau1 > 0.0 and self.tau0 > 0.0):
            raise InvalidParameterError(
                f"precisions must be positive, got tau1={self.tau1}, tau0={self.tau0}"
            )

    def sampled_names(self) -> tuple:
        names = []
        if self.sample_mu:
            names.append("mu")
        if self.sample_tau1:
            names.append("tau1")
        if self.sample_tau0:
            names.append("tau0")
        return tuple(names)

    def as_vector(self, names=None) -> np.ndarray:
        names = self.sampled_names() if names is None else names
        return np.array([getattr(self, n) for n in names], dtype=float)

    def with_vector(self, values, names=None) -> "GlobalParams":
        names = self.sampled_names() if names is None else names
        return replace(self, **dict(zip(names, map(float, values))))


class MuPriorKind(Enum):
    FLAT = "flat"              # p(mu) propto 1 (proper inside conditionals only)
    SCALED_NORMAL = "scaled"   # mu | tau ~ N(m0, scale_over_tau / tau)
    FIXED_VAR = "fixedvar"     # mu ~ N(m0, v0)


@dataclass
class MuPrior:
    kind: MuPriorKind
    m0: float = 0.0
    scale_over_tau: float = 1.0
    v0: float = 1.0

    @classmethod
    def flat(cls):
        return cls(MuPriorKind.FLAT)

    @classmethod
    def scaled_normal(cls, m0, scale_over_tau):
        if scale_over_tau <= 0:
            raise InvalidParameterError("scale_over_tau must be positive")
        return cls(MuPriorKind.SCALED_NORMAL, m0=m0, scale_over_tau=scale_over_tau)

    @classmethod
    def fixed_var(cls, m0, v0):
        if v0 <= 0:
            raise InvalidParameterError("v0 must be positive")
        return cls(MuPriorKind.FIXED_VAR, m0=m0, v0=v0)

    @property
    def mean(self) -> float:
        return 0.0 if self.kind is MuPriorKind.FLAT else self.m0

    def logpdf(self, mu, tau=None):
        """Marginal prior density of mu.  Undefined for the flat prior,
        which is only meaningful inside full conditionals."""
        if self.kind is MuPriorKind.FLAT:
            raise InvalidParameterError(
                "the flat prior on mu has no marginal density"
            )
        if self.kind is MuPriorKind.SCALED_NORMAL:
            if tau is None or tau <= 0:
                raise InvalidParameterError("scaled-normal prior needs tau > 0")
            var = self.scale_over_tau / tau
        else:
            var = self.v0
        return -0.5 * (LOG_2PI + math.log(var)) - 0.5 * (mu - self.m0) ** 2 / var


@dataclass
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise InvalidParameterError(
                f"Gamma shape/rate must be positive, got ({self.shape}, {self.rate})"
            )

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def logpdf(self, x):
        if x <= 0:
            return -np.inf
        a, b = self.shape, self.rate
        return a * math.log(b) - gammaln(a) + (a - 1.0) * math.log(x) - b * x


@dataclass
class PriorSpec:
    """Priors on the global parameters.  A precision prior is None when
    the corresponding precision is fixed."""

    mu_prior: MuPrior
    tau1_prior: Optional[GammaPrior] = None
    tau0_prior: Optional[GammaPrior] = None


@dataclass
class Dataset:
    """Grouped observations: a (J, m) real matrix for normal kinds, or J
    counts in {0..m} for discrete kinds.  Group means are cached for the
    normal layout."""

    m: int
    reals: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    group_means: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if (self.reals is None) == (self.counts is None):
            raise InvalidParameterError("exactly one of reals/counts must be given")
        if self.reals is not None:
            self.reals = np.asarray(self.reals, dtype=float)
            if self.reals.ndim != 2 or self.reals.shape[1] != self.m:
                raise InvalidParameterError(
                    f"reals must have shape (J, {self.m}), got {self.reals.shape}"
                )
            if self.reals.shape[0] < 1:
                raise InvalidParameterError("J must be >= 1")
            means = self.reals.mean(axis=1)
            if self.group_means is None:
                self.group_means = means
            elif np.max(np.abs(self.group_means - means)) > 1e-12:
                raise InvalidParameterError("cached group_means disagree with rows")
        else:
            self.counts = np.asarray(self.counts)
            if self.counts.ndim != 1 or self.counts.size < 1:
                raise InvalidParameterError("counts must be a non-empty vector")
            if np.any((self.counts < 0) | (self.counts > self.m)):
                raise InvalidParameterError(f"counts must lie in 0..{self.m}")
            if not np.issubdtype(self.counts.dtype, np.integer):
                as_int = self.counts.astype(int)
                if np.any(as_int != self.counts):
                    raise InvalidParameterError("counts must be integers")
                self.counts = as_int

    @property
    def J(self) -> int:
        arr = self.reals if self.reals is not None else self.counts
        return arr.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.counts is not None

    def within_group_ss(self) -> float:
        """sum_j sum_i (Y_ji - Ybar_j)^2 for the normal layout."""
        if self.reals is None:
            raise InvalidParameterError("within_group_ss needs the normal layout")
        return float(((self.reals - self.group_means[:, None]) ** 2).sum())


class StatBasis(Enum):
    """Which statistics make the psi full conditional depend on theta."""

    NONE = ()                               # no local parameters (fixed-dim model)
    SUM_THETA = ("sum_theta",)              # T = sum theta_j
    SUM_PAIR = ("sum_theta", "sum_theta_sq")
    CENTERED_PAIR = ("sum_sq_dev_ybar", "sum_sq_dev_mu")

    @property
    def names(self) -> tuple:
        return self.value

    @property
    def size(self) -> int:
        return len(self.value)


@dataclass
class SuffStats:
    values: np.ndarray
    basis: StatBasis

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.basis.size,):
            raise InvalidParameterError(
                f"{self.basis} needs {self.basis.size} values, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("sufficient statistics must be finite")


def suff_stats(model, basis, theta, mu=None, group_means=None) -> SuffStats:
    """Sufficient statistics of ``theta`` for the psi full conditional.

    ``mu`` and ``group_means`` are the context required by the centered
    basis of the extended normal model.
    """
    theta = np.asarray(theta, dtype=float)
    if basis is StatBasis.NONE:
        return SuffStats(np.empty(0), basis)
    if theta.ndim != 1:
        raise ValueError("theta must be a vector")
    if basis is StatBasis.SUM_THETA:
        values = [theta.sum()]
    elif basis is StatBasis.SUM_PAIR:
        values = [theta.sum(), float(theta @ theta)]
    elif basis is StatBasis.CENTERED_PAIR:
        if mu is None or group_means is None:
            raise ValueError("centered basis needs mu and group_means context")
        group_means = np.asarray(group_means, dtype=float)
        if group_means.shape != theta.shape:
            raise ValueError(
                f"theta has length {theta.size} but {group_means.size} group means given"
            )
        values = [((theta - group_means) ** 2).sum(), ((theta - mu) ** 2).sum()]
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unknown basis {basis}")
    return SuffStats(np.array(values), basis)


# ---------------------------------------------------------------------------
# densities


def group_posterior_normal(y_bar, psi: GlobalParams, m: int):
    """Posterior of theta_j given its group mean under the normal model:
    N((m tau0 ybar + tau1 mu) / (m tau0 + tau1), 1 / (m tau0 + tau1))."""
    if not (psi.tau0 > 0 and psi.tau1 > 0):
        raise InvalidParameterError("precisions must be positive")
    prec = m * psi.tau0 + psi.tau1
    mean = (m * psi.tau0 * np.asarray(y_bar) + psi.tau1 * psi.mu) / prec
    return mean, 1.0 / prec


def _binom_logpmf(y, m, theta):
    """log Binomial(m, sigmoid(theta)) at y, array-safe in theta."""
    theta = np.asarray(theta, dtype=float)
    coeff = gammaln(m + 1) - gammaln(y + 1) - gammaln(m - y + 1)
    return coeff + y * theta - m * np.logaddexp(0.0, theta)


def _sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ThetaConditional:
    """Log-density (and derivative) of theta_j given its group observation
    and psi, up to the exact joint normalisation f(y|theta) p(theta|psi).

    For normal kinds the conditional is Gaussian and ``gaussian`` carries
    its (mean, variance); the callable form stays available for generic
    consumers.
    """

    def __init__(self, logpdf, gaussian=None, curvature_bound=None):
        self._logpdf = logpdf
        self.gaussian = gaussian
        # upper bound on the second derivative (always <= -tau here)
        self.curvature_bound = curvature_bound

    def __call__(self, theta):
        return self._logpdf(theta)


def log_conditional_theta(model: ModelSpec, psi: GlobalParams, y_j) -> ThetaConditional:
    """Full conditional of one theta_j: f(y_j | theta) N(theta | mu, 1/tau1)."""
    if not (psi.tau1 > 0 and psi.tau0 > 0):
        raise InvalidParameterError("precisions must be positive")
    mu, tau = psi.mu, psi.tau1

    if model.kind in NORMAL_KINDS:
        y = np.atleast_1d(np.asarray(y_j, dtype=float))
        if y.size != model.m:
            raise ValueError(f"expected {model.m} observations, got {y.size}")
        mean, var = group_posterior_normal(float(y.mean()), psi, model.m)

        def logpdf(theta):
            theta = np.asarray(theta, dtype=float)
            lf = -0.5 * (theta - mean) ** 2 / var
            return lf, -(theta - mean) / var

        return ThetaConditional(logpdf, gaussian=(float(mean), float(var)),
                                curvature_bound=-1.0 / var)

    y = int(y_j)
    if not 0 <= y <= model.m:
        raise ValueError(f"count {y} outside 0..{model.m}")
    prior_const = 0.5 * (math.log(tau) - LOG_2PI)

    if model.kind is ModelKind.BINOMIAL_LOGIT:
        m = model.m

        def logpdf(theta):
            theta = np.asarray(theta, dtype=float)
            lf = _binom_logpmf(y, m, theta) + prior_const - 0.5 * tau * (theta - mu) ** 2
            df = y - m * _sigmoid(theta) - tau * (theta - mu)
            return lf, df

        return ThetaConditional(logpdf, curvature_bound=-tau)

    table_entry = model.pmf_table[y]

    def logpdf(theta):
        theta = np.asarray(theta, dtype=float)
        lf_y, df_y = table_entry(theta)
        lf = np.asarray(lf_y, dtype=float) + prior_const - 0.5 * tau * (theta - mu) ** 2
        df = np.asarray(df_y, dtype=float) - tau * (theta - mu)
        return lf, df

    return ThetaConditional(logpdf, curvature_bound=-tau)


# ---------------------------------------------------------------------------
# quadrature machinery for discrete marginals


@lru_cache(maxsize=8)
def _gh_rule(n):
    nodes, weights = np.polynomial.hermite.hermgauss(n)
    return nodes, np.log(weights)


def _posterior_mode(cond: ThetaConditional, x0=0.0, scale=1.0):
    """Mode of a log-concave conditional by Newton steps safeguarded with
    bisection on the (non-increasing) derivative."""
    lo, hi = x0 - 2.0 * scale, x0 + 2.0 * scale
    for _ in range(200):
        if cond(lo)[1] > 0:
            break
        lo -= 2.0 * scale
        scale *= 1.5
    else:
        raise NumericalError("could not bracket the conditional mode from below")
    scale = 1.0
    for _ in range(200):
        if cond(hi)[1] < 0:
            break
        hi += 2.0 * scale
        scale *= 1.5
    else:
        raise NumericalError("could not bracket the conditional mode from above")

    x = 0.5 * (lo + hi)
    h = 1e-6 * max(1.0, abs(x))
    for _ in range(100):
        _, d = cond(x)
        if d > 0:
            lo = x
        else:
            hi = x
        curv = (cond(x + h)[1] - cond(x - h)[1]) / (2.0 * h)
        if curv < 0 and np.isfinite(curv):
            step = d / curv
            x_new = x - step
        else:
            x_new = 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) < 1e-13 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    _, d = cond(x)
    curv = (cond(x + h)[1] - cond(x - h)[1]) / (2.0 * h)
    if not (np.isfinite(curv) and curv < 0):
        raise NumericalError(f"conditional curvature {curv} is not negative at mode")
    return x, math.sqrt(-1.0 / curv)


def _gh_log_integral(logdens, mode, sigma, n):
    """log of integral exp(logdens(theta)) d theta by Gauss-Hermite centered
    and scaled at (mode, sigma)."""
    nodes, logw = _gh_rule(n)
    theta = mode + math.sqrt(2.0) * sigma * nodes
    lf, _ = logdens(theta)
    return math.log(math.sqrt(2.0) * sigma) + logsumexp(logw + lf + nodes ** 2)


def _gh_log_moment(logdens, weight_fn, mode, sigma, n):
    """log |integral weight_fn(theta) exp(logdens(theta)) d theta| and its
    sign, same rule as _gh_log_integral."""
    nodes, logw = _gh_rule(n)
    theta = mode + math.sqrt(2.0) * sigma * nodes
    lf, _ = logdens(theta)
    vals = weight_fn(theta)
    total, sign = logsumexp(logw + lf + nodes ** 2, b=vals, return_sign=True)
    return math.log(math.sqrt(2.0) * sigma) + total, sign


def marginal_loglik(model: ModelSpec, psi: GlobalParams, y) -> float:
    """log g(y | psi) = log integral f(y|theta) p(theta|psi) d theta.

    Exact in closed form for the normal kinds (rank-one covariance
    identities); mode-centered Gauss-Hermite quadrature with a doubled-rule
    refinement check for the discrete kinds.
    """
    if not (psi.tau0 > 0 and psi.tau1 > 0):
        raise InvalidParameterError("precisions must be positive")

    if model.kind in NORMAL_KINDS:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        m = model.m
        if y.size != m:
            raise ValueError(f"expected {m} observations, got {y.size}")
        tau0, tau1 = psi.tau0, psi.tau1
        # det(tau0^-1 I + tau1^-1 11') = (tau0^-1 + m tau1^-1) tau0^-(m-1)
        logdet = math.log(1.0 / tau0 + m / tau1) - (m - 1) * math.log(tau0)
        dev = y - psi.mu
        ss = float(dev @ dev)
        s1 = float(dev.sum())
        quad = tau0 * ss - tau0 ** 2 * s1 ** 2 / (tau1 + m * tau0)
        return -0.5 * (m * LOG_2PI + logdet + quad)

    cond = log_conditional_theta(model, psi, y)
    mode, sigma = _posterior_mode(cond, x0=psi.mu, scale=1.0 / math.sqrt(psi.tau1))
    val = _gh_log_integral(cond, mode, sigma, GH_NODES)
    check = _gh_log_integral(cond, mode, sigma, GH_NODES_CHECK)
    resid = abs(val - check)
    if resid > GH_REL_TOL:
        raise NumericalError(
            f"quadrature for marginal likelihood did not converge (residual {resid:.3e})",
            residual=resid,
        )
    return check


def outcome_distribution(model: ModelSpec, psi: GlobalParams) -> np.ndarray:
    """g(y_r | psi) over all outcomes of a discrete model."""
    if not model.is_discrete:
        raise InvalidParameterError("outcome_distribution needs a discrete kind")
    return np.exp([marginal_loglik(model, psi, r) for r in model.outcomes()])


# ---------------------------------------------------------------------------
# data generation


def simulate_data(model: ModelSpec, psi_star: GlobalParams, J: int, seed: int) -> Dataset:
    """Draw J groups i.i.d. from the population law g(. | psi*).

    Normal kinds: theta_j ~ N(mu*, 1/tau1*), then Y_ji ~ N(theta_j, 1/tau0*).
    Discrete kinds: theta_j ~ N(mu*, 1/tau1*), then the count from
    f(. | theta_j).  Bit-identical output for identical arguments.
    """
    if J < 1:
        raise InvalidParameterError(f"J must be >= 1, got {J}")
    if not (psi_star.tau0 > 0 and psi_star.tau1 > 0):
        raise InvalidParameterError("precisions must be positive")
    rng = np.random.default_rng(seed)
    theta = psi_star.mu + rng.standard_normal(J) / math.sqrt(psi_star.tau1)

    if model.kind in NORMAL_KINDS:
        noise = rng.standard_normal((J, model.m)) / math.sqrt(psi_star.tau0)
        return Dataset(m=model.m, reals=theta[:, None] + noise)

    if model.kind is ModelKind.BINOMIAL_LOGIT:
        counts = rng.binomial(model.m, _sigmoid(theta))
        return Dataset(m=model.m, counts=counts)

    counts = np.empty(J, dtype=int)
    u = rng.random(J)
    for j in range(J):
        masses = np.exp([model.pmf_table[r](theta[j])[0] for r in model.outcomes()])
        counts[j] = int(np.searchsorted(np.cumsum(masses), u[j] * masses.sum()))
    counts = np.minimum(counts, model.m)
    return Dataset(m=model.m, counts=counts)
