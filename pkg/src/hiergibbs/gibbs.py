"""Gibbs kernels and chain execution.

Implements the two-block theta-vs-psi kernel, the three normal-model
blockings (fixed tau1; joint (theta, mu); sequential mu then tau1), the
extended kernel with unknown likelihood precision, the fixed-dimensional
mean/precision sampler, plus the chain runner, the maximum marginal
likelihood estimator and the feasible-start initialiser built from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from . import ars
from .errors import (
    DegenerateStateError,
    InvalidParameterError,
    NumericalError,
    OptimizationError,
)
from .models import (
    DISCRETE_KINDS,
    NORMAL_KINDS,
    Dataset,
    GlobalParams,
    LOG_2PI,
    ModelKind,
    ModelSpec,
    MuPrior,
    MuPriorKind,
    PriorSpec,
    StatBasis,
    SuffStats,
    log_conditional_theta,
    marginal_loglik,
    suff_stats,
)


class Blocking(Enum):
    P1_KNOWN_TAU1 = "P1_KnownTau1"
    P2_JOINT_THETA_MU = "P2_JointThetaMu"
    P3_SEQUENTIAL_MU_TAU = "P3_SequentialMuTau"
    TWO_BLOCK_THETA_PSI = "TwoBlock_ThetaVsPsi"
    EXTENDED_THETA_MU_TAU0_TAU1 = "Extended_ThetaMu_Tau0Tau1"
    FIXED_DIM_MU_TAU = "FixedDim_MuTau"


#: statistics carried by ChainState.suff for each blocking
BASIS_FOR_BLOCKING = {
    Blocking.P1_KNOWN_TAU1: StatBasis.SUM_THETA,
    Blocking.P2_JOINT_THETA_MU: StatBasis.SUM_PAIR,
    Blocking.P3_SEQUENTIAL_MU_TAU: StatBasis.SUM_PAIR,
    Blocking.TWO_BLOCK_THETA_PSI: StatBasis.SUM_PAIR,
    Blocking.EXTENDED_THETA_MU_TAU0_TAU1: StatBasis.CENTERED_PAIR,
    Blocking.FIXED_DIM_MU_TAU: StatBasis.NONE,
}

#: which psi components each blocking samples, as GlobalParams flags
SAMPLED_FLAGS = {
    Blocking.P1_KNOWN_TAU1: dict(sample_mu=True, sample_tau1=False, sample_tau0=False),
    Blocking.P2_JOINT_THETA_MU: dict(sample_mu=True, sample_tau1=True, sample_tau0=False),
    Blocking.P3_SEQUENTIAL_MU_TAU: dict(sample_mu=True, sample_tau1=True, sample_tau0=False),
    Blocking.TWO_BLOCK_THETA_PSI: dict(sample_mu=True, sample_tau1=True, sample_tau0=False),
    Blocking.EXTENDED_THETA_MU_TAU0_TAU1: dict(sample_mu=True, sample_tau1=True, sample_tau0=True),
    Blocking.FIXED_DIM_MU_TAU: dict(sample_mu=True, sample_tau1=False, sample_tau0=True),
}


@dataclass
class KernelSpec:
    model: ModelSpec
    prior: PriorSpec
    blocking: Blocking

    def __post_init__(self):
        b, kind = self.blocking, self.model.kind
        needs_tau1 = b in (
            Blocking.P2_JOINT_THETA_MU,
            Blocking.P3_SEQUENTIAL_MU_TAU,
            Blocking.TWO_BLOCK_THETA_PSI,
            Blocking.EXTENDED_THETA_MU_TAU0_TAU1,
        )
        if needs_tau1 and self.prior.tau1_prior is None:
            raise InvalidParameterError(f"{b.value} needs a tau1 prior")
        if b is Blocking.EXTENDED_THETA_MU_TAU0_TAU1:
            if kind is not ModelKind.NORMAL_UNKNOWN_TAU0:
                raise InvalidParameterError("Extended blocking requires NormalUnknownTau0")
            if self.prior.tau0_prior is None:
                raise InvalidParameterError("Extended blocking needs a tau0 prior")
        elif b in (Blocking.P2_JOINT_THETA_MU, Blocking.P3_SEQUENTIAL_MU_TAU):
            if kind is not ModelKind.NORMAL_KNOWN_TAU0:
                raise InvalidParameterError(f"{b.value} requires NormalKnownTau0")
        elif b is Blocking.TWO_BLOCK_THETA_PSI:
            if kind is ModelKind.NORMAL_UNKNOWN_TAU0:
                raise InvalidParameterError(
                    "TwoBlock updates psi=(mu, tau1); use the Extended blocking "
                    "when tau0 is unknown"
                )
            if self.prior.mu_prior.kind is MuPriorKind.FIXED_VAR:
                raise InvalidParameterError(
                    "the exact joint (mu, tau1) block needs a flat or scaled-normal "
                    "mu prior (normal-gamma conjugacy)"
                )
        elif b is Blocking.FIXED_DIM_MU_TAU:
            if kind not in NORMAL_KINDS:
                raise InvalidParameterError("FixedDim blocking requires a normal kind")
            if self.prior.tau0_prior is None:
                raise InvalidParameterError("FixedDim blocking needs a tau0 prior")

    @property
    def basis(self) -> StatBasis:
        return BASIS_FOR_BLOCKING[self.blocking]

    def expected_flags(self) -> dict:
        return SAMPLED_FLAGS[self.blocking]


@dataclass
class ChainState:
    theta: np.ndarray
    psi: GlobalParams
    suff: SuffStats

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)


@dataclass
class ChainOutput:
    """Post-burn-in thinned traces: one column per sampled psi component,
    per theta_j and per sufficient statistic."""

    traces: np.ndarray
    names: tuple
    seed: int
    burn_in: int
    thin: int

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=float)
        if self.traces.ndim != 2 or self.traces.shape[1] != len(self.names):
            raise ValueError("traces and names disagree")
        if not np.all(np.isfinite(self.traces)):
            raise NumericalError("chain traces contain non-finite entries")

    @property
    def iterations(self) -> int:
        return self.traces.shape[0]

    def column(self, name) -> np.ndarray:
        return self.traces[:, self.names.index(name)]


def _refresh_suff(spec: KernelSpec, state: ChainState, data: Dataset) -> None:
    state.suff = suff_stats(
        spec.model,
        spec.basis,
        state.theta,
        mu=state.psi.mu,
        group_means=data.group_means,
    )


# ---------------------------------------------------------------------------
# conditional updates


def _gamma_draw(rng, shape, rate):
    if rate <= 0 or not np.isfinite(rate):
        raise DegenerateStateError(f"Gamma rate {rate} is not positive")
    return rng.gamma(shape) / rate


def _mu_posterior_given_theta(mu_prior: MuPrior, sum_theta, J, tau1):
    """Gaussian (mean, variance) of mu given theta and tau1."""
    if mu_prior.kind is MuPriorKind.FLAT:
        prec, lin = 0.0, 0.0
    elif mu_prior.kind is MuPriorKind.FIXED_VAR:
        prec, lin = 1.0 / mu_prior.v0, mu_prior.m0 / mu_prior.v0
    else:
        prec = tau1 / mu_prior.scale_over_tau
        lin = prec * mu_prior.m0
    prec += J * tau1
    lin += tau1 * sum_theta
    if prec <= 0:
        raise DegenerateStateError("mu conditional has non-positive precision")
    return lin / prec, 1.0 / prec


def _mu_posterior_marginal(mu_prior: MuPrior, data: Dataset, tau1, tau0, m):
    """Gaussian (mean, variance) of mu given (tau1, tau0) and the data with
    theta integrated out: each group mean is N(mu, 1/tau1 + 1/(m tau0))."""
    v = 1.0 / tau1 + 1.0 / (m * tau0)
    J = data.J
    if mu_prior.kind is MuPriorKind.FLAT:
        prec, lin = 0.0, 0.0
    elif mu_prior.kind is MuPriorKind.FIXED_VAR:
        prec, lin = 1.0 / mu_prior.v0, mu_prior.m0 / mu_prior.v0
    else:
        prec = tau1 / mu_prior.scale_over_tau
        lin = prec * mu_prior.m0
    prec += J / v
    lin += float(data.group_means.sum()) / v
    return lin / prec, 1.0 / prec


def _tau1_conditional_params(prior: PriorSpec, sum_sq_dev_mu, J, mu):
    """Gamma (shape, rate) of tau1 given theta and mu.  A scaled-normal mu
    prior contributes its own tau1 factor."""
    shape = prior.tau1_prior.shape + 0.5 * J
    rate = prior.tau1_prior.rate + 0.5 * sum_sq_dev_mu
    if prior.mu_prior.kind is MuPriorKind.SCALED_NORMAL:
        shape += 0.5
        rate += 0.5 * (mu - prior.mu_prior.m0) ** 2 / prior.mu_prior.scale_over_tau
    return shape, rate


def _tau0_conditional_params(prior: PriorSpec, data: Dataset, theta):
    """Gamma (shape, rate) of tau0 given theta and the full data."""
    m, J = data.m, data.J
    resid = data.within_group_ss() + m * float(((theta - data.group_means) ** 2).sum())
    return prior.tau0_prior.shape + 0.5 * J * m, prior.tau0_prior.rate + 0.5 * resid


def _normal_gamma_params(prior: PriorSpec, sum_theta, sum_theta_sq, J):
    """Normal-gamma posterior of (mu, tau1) given theta for flat or
    scaled-normal mu priors: tau1 ~ Gamma(a_n, b_n), mu | tau1 ~
    N(m_n, 1/(kappa_n tau1))."""
    theta_bar = sum_theta / J
    ss = max(sum_theta_sq - J * theta_bar ** 2, 0.0)
    if prior.mu_prior.kind is MuPriorKind.FLAT:
        kappa0, m0 = 0.0, 0.0
        a_n = prior.tau1_prior.shape + 0.5 * (J - 1)
    elif prior.mu_prior.kind is MuPriorKind.SCALED_NORMAL:
        kappa0, m0 = 1.0 / prior.mu_prior.scale_over_tau, prior.mu_prior.m0
        a_n = prior.tau1_prior.shape + 0.5 * J
    else:
        raise InvalidParameterError("normal-gamma block needs flat or scaled-normal mu prior")
    kappa_n = kappa0 + J
    m_n = (kappa0 * m0 + sum_theta) / kappa_n
    b_n = prior.tau1_prior.rate + 0.5 * ss \
        + 0.5 * kappa0 * J * (theta_bar - m0) ** 2 / kappa_n
    return m_n, kappa_n, a_n, b_n


def _sample_theta_normal(psi: GlobalParams, data: Dataset, rng) -> np.ndarray:
    prec = data.m * psi.tau0 + psi.tau1
    mean = (data.m * psi.tau0 * data.group_means + psi.tau1 * psi.mu) / prec
    return mean + rng.standard_normal(data.J) / math.sqrt(prec)


def _sample_theta_discrete(model: ModelSpec, psi: GlobalParams, data: Dataset, rng) -> np.ndarray:
    """Exact theta update by adaptive rejection sampling, pooled by outcome:
    all groups sharing a count share the same conditional, so one hull per
    distinct outcome serves every group with that count."""
    theta = np.empty(data.J)
    scale = 1.0 / math.sqrt(psi.tau1 + 0.25 * model.m)
    for y in range(model.m + 1):
        idx = np.nonzero(data.counts == y)[0]
        if idx.size == 0:
            continue
        cond = log_conditional_theta(model, psi, y)
        centre = psi.mu + (math.log((y + 0.5) / (model.m - y + 0.5)) - psi.mu) \
            * model.m / (model.m + psi.tau1)
        hull = ars.ars_init(cond, centre, scale)
        theta[idx] = ars.ars_sample_many(hull, cond, idx.size, rng)
    return theta


# ---------------------------------------------------------------------------
# sweeps


def gibbs_sweep(spec: KernelSpec, state: ChainState, data: Dataset, rng) -> ChainState:
    """One full sweep in the blocking's stated update order.  ``state`` is
    updated in place and returned with its sufficient statistics refreshed."""
    psi = state.psi
    expected = spec.expected_flags()
    for flag, want in expected.items():
        if getattr(psi, flag) != want:
            raise InvalidParameterError(
                f"{spec.blocking.value} expects {flag}={want} in the chain state"
            )
    b = spec.blocking

    if b is Blocking.P1_KNOWN_TAU1:
        if spec.model.is_discrete:
            state.theta = _sample_theta_discrete(spec.model, psi, data, rng)
        else:
            state.theta = _sample_theta_normal(psi, data, rng)
        mean, var = _mu_posterior_given_theta(
            spec.prior.mu_prior, float(state.theta.sum()), data.J, psi.tau1
        )
        psi = replace(psi, mu=mean + math.sqrt(var) * rng.standard_normal())

    elif b is Blocking.P2_JOINT_THETA_MU:
        mean, var = _mu_posterior_marginal(
            spec.prior.mu_prior, data, psi.tau1, psi.tau0, data.m
        )
        psi = replace(psi, mu=mean + math.sqrt(var) * rng.standard_normal())
        state.theta = _sample_theta_normal(psi, data, rng)
        shape, rate = _tau1_conditional_params(
            spec.prior, float(((state.theta - psi.mu) ** 2).sum()), data.J, psi.mu
        )
        psi = replace(psi, tau1=_gamma_draw(rng, shape, rate))

    elif b is Blocking.P3_SEQUENTIAL_MU_TAU:
        state.theta = _sample_theta_normal(psi, data, rng)
        mean, var = _mu_posterior_given_theta(
            spec.prior.mu_prior, float(state.theta.sum()), data.J, psi.tau1
        )
        psi = replace(psi, mu=mean + math.sqrt(var) * rng.standard_normal())
        shape, rate = _tau1_conditional_params(
            spec.prior, float(((state.theta - psi.mu) ** 2).sum()), data.J, psi.mu
        )
        psi = replace(psi, tau1=_gamma_draw(rng, shape, rate))

    elif b is Blocking.TWO_BLOCK_THETA_PSI:
        if spec.model.is_discrete:
            state.theta = _sample_theta_discrete(spec.model, psi, data, rng)
        else:
            state.theta = _sample_theta_normal(psi, data, rng)
        m_n, kappa_n, a_n, b_n = _normal_gamma_params(
            spec.prior, float(state.theta.sum()),
            float(state.theta @ state.theta), data.J,
        )
        tau1 = _gamma_draw(rng, a_n, b_n)
        mu = m_n + rng.standard_normal() / math.sqrt(kappa_n * tau1)
        psi = replace(psi, mu=mu, tau1=tau1)

    elif b is Blocking.EXTENDED_THETA_MU_TAU0_TAU1:
        mean, var = _mu_posterior_marginal(
            spec.prior.mu_prior, data, psi.tau1, psi.tau0, data.m
        )
        psi = replace(psi, mu=mean + math.sqrt(var) * rng.standard_normal())
        state.theta = _sample_theta_normal(psi, data, rng)
        shape1, rate1 = _tau1_conditional_params(
            spec.prior, float(((state.theta - psi.mu) ** 2).sum()), data.J, psi.mu
        )
        shape0, rate0 = _tau0_conditional_params(spec.prior, data, state.theta)
        # tau1 and tau0 are conditionally independent given (theta, mu, Y)
        psi = replace(
            psi,
            tau1=_gamma_draw(rng, shape1, rate1),
            tau0=_gamma_draw(rng, shape0, rate0),
        )

    elif b is Blocking.FIXED_DIM_MU_TAU:
        # all observations are i.i.d. N(mu, 1/tau0); theta plays no role
        y = data.reals.ravel()
        n = y.size
        mp = spec.prior.mu_prior
        if mp.kind is MuPriorKind.FLAT:
            prec, lin = 0.0, 0.0
        elif mp.kind is MuPriorKind.FIXED_VAR:
            prec, lin = 1.0 / mp.v0, mp.m0 / mp.v0
        else:
            raise InvalidParameterError(
                "FixedDim blocking needs a flat or fixed-variance mu prior"
            )
        prec += n * psi.tau0
        lin += psi.tau0 * float(y.sum())
        mu = lin / prec + rng.standard_normal() / math.sqrt(prec)
        psi = replace(psi, mu=mu)
        shape = spec.prior.tau0_prior.shape + 0.5 * n
        rate = spec.prior.tau0_prior.rate + 0.5 * float(((y - mu) ** 2).sum())
        psi = replace(psi, tau0=_gamma_draw(rng, shape, rate))

    else:  # pragma: no cover - exhaustive enum
        raise InvalidParameterError(f"unknown blocking {b}")

    state.psi = psi
    _refresh_suff(spec, state, data)
    return state


# ---------------------------------------------------------------------------
# psi-conditional density, from theta or from sufficient statistics


def _norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + math.log(var)) - 0.5 * (x - mean) ** 2 / var


def _gamma_logpdf(x, shape, rate):
    if x <= 0:
        return -np.inf
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x


def psi_conditional_logpdf(
    spec: KernelSpec,
    data: Dataset,
    state: ChainState,
    psi_new: GlobalParams,
    from_suff: bool = False,
) -> float:
    """Log-density of the sweep's psi update evaluated at ``psi_new`` given
    the current state.

    With ``from_suff=False`` the density is computed from the full theta
    vector; with ``from_suff=True`` only ``state.suff`` (plus the data and
    the current psi) is consulted.  The two routes must agree: the psi
    update depends on theta only through the sufficient statistics.
    """
    b = spec.blocking
    theta, psi = state.theta, state.psi
    J = data.J

    def stat(name, direct):
        if from_suff:
            return float(state.suff.values[state.suff.basis.names.index(name)])
        return float(direct())

    if b is Blocking.P1_KNOWN_TAU1:
        s1 = stat("sum_theta", lambda: theta.sum())
        mean, var = _mu_posterior_given_theta(spec.prior.mu_prior, s1, J, psi.tau1)
        return _norm_logpdf(psi_new.mu, mean, var)

    if b is Blocking.P2_JOINT_THETA_MU:
        s1 = stat("sum_theta", lambda: theta.sum())
        s2 = stat("sum_theta_sq", lambda: theta @ theta)
        dev = s2 - 2.0 * psi_new.mu * s1 + J * psi_new.mu ** 2
        shape, rate = _tau1_conditional_params(spec.prior, dev, J, psi_new.mu)
        return _gamma_logpdf(psi_new.tau1, shape, rate)

    if b is Blocking.P3_SEQUENTIAL_MU_TAU:
        s1 = stat("sum_theta", lambda: theta.sum())
        s2 = stat("sum_theta_sq", lambda: theta @ theta)
        mean, var = _mu_posterior_given_theta(spec.prior.mu_prior, s1, J, psi.tau1)
        out = _norm_logpdf(psi_new.mu, mean, var)
        dev = s2 - 2.0 * psi_new.mu * s1 + J * psi_new.mu ** 2
        shape, rate = _tau1_conditional_params(spec.prior, dev, J, psi_new.mu)
        return out + _gamma_logpdf(psi_new.tau1, shape, rate)

    if b is Blocking.TWO_BLOCK_THETA_PSI:
        s1 = stat("sum_theta", lambda: theta.sum())
        s2 = stat("sum_theta_sq", lambda: theta @ theta)
        m_n, kappa_n, a_n, b_n = _normal_gamma_params(spec.prior, s1, s2, J)
        return _gamma_logpdf(psi_new.tau1, a_n, b_n) + _norm_logpdf(
            psi_new.mu, m_n, 1.0 / (kappa_n * psi_new.tau1)
        )

    if b is Blocking.EXTENDED_THETA_MU_TAU0_TAU1:
        dev_mu = stat("sum_sq_dev_mu", lambda: ((theta - psi.mu) ** 2).sum())
        dev_ybar = stat("sum_sq_dev_ybar", lambda: ((theta - data.group_means) ** 2).sum())
        shape1, rate1 = _tau1_conditional_params(spec.prior, dev_mu, J, psi.mu)
        resid = data.within_group_ss() + data.m * dev_ybar
        shape0 = spec.prior.tau0_prior.shape + 0.5 * J * data.m
        rate0 = spec.prior.tau0_prior.rate + 0.5 * resid
        return _gamma_logpdf(psi_new.tau1, shape1, rate1) + _gamma_logpdf(
            psi_new.tau0, shape0, rate0
        )

    if b is Blocking.FIXED_DIM_MU_TAU:
        # no local parameters: both routes read the data only
        y = data.reals.ravel()
        n = y.size
        mp = spec.prior.mu_prior
        prec = (0.0 if mp.kind is MuPriorKind.FLAT else 1.0 / mp.v0) + n * psi.tau0
        lin = (0.0 if mp.kind is MuPriorKind.FLAT else mp.m0 / mp.v0) \
            + psi.tau0 * float(y.sum())
        out = _norm_logpdf(psi_new.mu, lin / prec, 1.0 / prec)
        shape = spec.prior.tau0_prior.shape + 0.5 * n
        rate = spec.prior.tau0_prior.rate + 0.5 * float(((y - psi_new.mu) ** 2).sum())
        return out + _gamma_logpdf(psi_new.tau0, shape, rate)

    raise InvalidParameterError(f"unknown blocking {b}")  # pragma: no cover


# ---------------------------------------------------------------------------
# chain runner


def default_start(spec: KernelSpec, data: Dataset, fixed: Optional[GlobalParams] = None) -> ChainState:
    """Cheap overdispersed starting state: theta_j at the group mean
    (normal) or at logit((y_j + 1/2) / (m + 1)) (discrete); mu at its prior
    mean and every sampled precision at 1.  ``fixed`` supplies values for
    the components the blocking keeps fixed."""
    flags = spec.expected_flags()
    mu = spec.prior.mu_prior.mean
    tau1 = 1.0
    tau0 = 1.0
    if fixed is not None:
        if not flags["sample_mu"]:
            mu = fixed.mu
        if not flags["sample_tau1"]:
            tau1 = fixed.tau1
        if not flags["sample_tau0"]:
            tau0 = fixed.tau0
    psi = GlobalParams(mu=mu, tau1=tau1, tau0=tau0, **flags)
    if spec.model.is_discrete:
        frac = (data.counts + 0.5) / (data.m + 1.0)
        theta = np.log(frac / (1.0 - frac))
    else:
        theta = data.group_means.copy()
    state = ChainState(theta=theta, psi=psi, suff=SuffStats(np.empty(0), StatBasis.NONE))
    _refresh_suff(spec, state, data)
    return state


def run_chain(
    spec: KernelSpec,
    init: ChainState,
    iters: int,
    burn_in: int,
    thin: int,
    seed: int,
    data: Dataset,
) -> ChainOutput:
    """Run ``iters`` sweeps from ``init`` and record post-burn-in thinned
    traces of every sampled psi component, every theta_j and every
    sufficient statistic.  Deterministic given the seed."""
    if not (iters > burn_in >= 0):
        raise InvalidParameterError(f"need iters > burn_in >= 0, got {iters}, {burn_in}")
    if thin < 1:
        raise InvalidParameterError(f"thin must be >= 1, got {thin}")
    rng = np.random.default_rng(seed)
    state = ChainState(
        theta=init.theta.copy(), psi=replace(init.psi), suff=init.suff
    )
    _refresh_suff(spec, state, data)

    psi_names = state.psi.sampled_names()
    theta_names = tuple(f"theta_{j:04d}" for j in range(state.theta.size))
    stat_names = spec.basis.names
    names = psi_names + theta_names + stat_names

    n_rows = (iters - burn_in + thin - 1) // thin
    traces = np.empty((n_rows, len(names)))
    row = 0
    for t in range(1, iters + 1):
        try:
            state = gibbs_sweep(spec, state, data, rng)
        except NumericalError as err:
            raise NumericalError(f"sweep failed at iteration {t}: {err}") from err
        if t > burn_in and (t - burn_in - 1) % thin == 0:
            traces[row, : len(psi_names)] = state.psi.as_vector(psi_names)
            traces[row, len(psi_names) : len(psi_names) + len(theta_names)] = state.theta
            if stat_names:
                traces[row, len(psi_names) + len(theta_names) :] = state.suff.values
            row += 1
    return ChainOutput(traces=traces[:row], names=names, seed=seed, burn_in=burn_in, thin=thin)


# ---------------------------------------------------------------------------
# maximum marginal likelihood and the feasible start


def _total_marginal_loglik(model: ModelSpec, data: Dataset, psi: GlobalParams) -> float:
    if model.is_discrete:
        counts = np.bincount(data.counts, minlength=model.m + 1)
        return float(
            sum(
                n_r * marginal_loglik(model, psi, r)
                for r, n_r in enumerate(counts)
                if n_r > 0
            )
        )
    m, J = model.m, data.J
    tau0, tau1 = psi.tau0, psi.tau1
    ssw = data.within_group_ss()
    dev = data.group_means - psi.mu
    ssb = float(dev @ dev)
    logdet = math.log(1.0 / tau0 + m / tau1) - (m - 1) * math.log(tau0)
    quad = tau0 * (ssw + m * ssb) - tau0 ** 2 * m ** 2 * ssb / (tau1 + m * tau0)
    return -0.5 * (J * m * LOG_2PI + J * logdet + quad)


def _check_mle_preconditions(model: ModelSpec, data: Dataset):
    if data.J < 2:
        raise InvalidParameterError("the marginal MLE needs J >= 2 groups")
    if model.kind is ModelKind.NORMAL_UNKNOWN_TAU0 and model.m < 2:
        raise InvalidParameterError(
            "with unknown tau0 the pair (tau0, tau1) is not identifiable at m=1"
        )


def mle_psi(model: ModelSpec, data: Dataset, init: GlobalParams) -> GlobalParams:
    """Maximum marginal likelihood estimate of the sampled psi components.

    Nelder-Mead on (mu, log tau) with a short Newton polish on the same
    finite-difference surface, so the returned point is a numerical
    stationary point of the total marginal log-likelihood.
    """
    _check_mle_preconditions(model, data)
    names = init.sampled_names()
    if not names:
        raise InvalidParameterError("no sampled components to estimate")

    def to_z(psi_vec):
        return np.array([
            v if n == "mu" else math.log(v) for n, v in zip(names, psi_vec)
        ])

    def from_z(z):
        vals = [z_i if n == "mu" else math.exp(z_i) for n, z_i in zip(names, z)]
        return init.with_vector(vals, names)

    evals = {"n": 0}

    def negloglik(z):
        evals["n"] += 1
        if evals["n"] > 2000:
            raise OptimizationError("marginal MLE exceeded 2000 evaluations")
        try:
            return -_total_marginal_loglik(model, data, from_z(z))
        except (InvalidParameterError, OverflowError):
            return np.inf

    z0 = to_z(init.as_vector(names))
    try:
        res = minimize(
            negloglik,
            z0,
            method="Nelder-Mead",
            options=dict(xatol=1e-8, fatol=1e-10, maxfev=1400, maxiter=1400),
        )
    except OptimizationError:
        raise
    if not np.all(np.isfinite(res.x)):
        raise OptimizationError("marginal MLE diverged")

    # Newton polish: a few damped steps on the finite-difference gradient
    z = res.x
    h = 1e-6
    for _ in range(8):
        grad = np.array([
            (negloglik(z + h * e) - negloglik(z - h * e)) / (2 * h)
            for e in np.eye(len(z))
        ])
        if np.linalg.norm(grad) < 1e-7:
            break
        hess = np.empty((len(z), len(z)))
        for a in range(len(z)):
            for b_ in range(a, len(z)):
                e_a, e_b = np.eye(len(z))[a], np.eye(len(z))[b_]
                hess[a, b_] = hess[b_, a] = (
                    negloglik(z + h * e_a + h * e_b)
                    - negloglik(z + h * e_a - h * e_b)
                    - negloglik(z - h * e_a + h * e_b)
                    + negloglik(z - h * e_a - h * e_b)
                ) / (4 * h * h)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        for damp in (1.0, 0.5, 0.25, 0.1):
            z_new = z - damp * step
            if negloglik(z_new) <= negloglik(z) + 1e-12:
                z = z_new
                break
        else:
            break
    return from_z(z)


def feasible_start(model: ModelSpec, data: Dataset, c: float, seed: int,
                   prior: Optional[PriorSpec] = None,
                   init: Optional[GlobalParams] = None) -> ChainState:
    """Starting state with psi uniform on the ball of radius c/sqrt(J)
    around the marginal MLE (redrawn until all precisions are positive)
    and theta_j drawn exactly from p(theta_j | Y_j, psi).

    ``init`` seeds the MLE search; a moment-based guess is used when it is
    omitted.  ``prior`` is only consulted for the sufficient-statistic
    context of the returned state.
    """
    if c <= 0:
        raise InvalidParameterError("c must be positive")
    if init is None:
        init = _moment_init(model, data)
    psi_hat = mle_psi(model, data, init)
    names = psi_hat.sampled_names()
    D = len(names)
    rng = np.random.default_rng(seed)
    radius = c / math.sqrt(data.J)

    psi = None
    for _ in range(1000):
        direction = rng.standard_normal(D)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            continue
        point = psi_hat.as_vector(names) + radius * rng.random() ** (1.0 / D) \
            * direction / norm
        candidate = dict(zip(names, point))
        if candidate.get("tau1", 1.0) > 0 and candidate.get("tau0", 1.0) > 0:
            psi = psi_hat.with_vector(point, names)
            break
    else:
        raise InvalidParameterError(
            f"could not find positive precisions in the radius-{radius:.3g} ball "
            "after 1000 draws; reduce c"
        )

    if model.is_discrete:
        theta = np.empty(data.J)
        scale = 1.0 / math.sqrt(psi.tau1 + 0.25 * model.m)
        for y in range(model.m + 1):
            idx = np.nonzero(data.counts == y)[0]
            if idx.size == 0:
                continue
            cond = log_conditional_theta(model, psi, y)
            hull = ars.ars_init(cond, psi.mu, scale)
            theta[idx] = ars.ars_sample_many(hull, cond, idx.size, rng)
    else:
        prec = model.m * psi.tau0 + psi.tau1
        mean = (model.m * psi.tau0 * data.group_means + psi.tau1 * psi.mu) / prec
        theta = mean + rng.standard_normal(data.J) / math.sqrt(prec)

    basis = StatBasis.CENTERED_PAIR if model.kind is ModelKind.NORMAL_UNKNOWN_TAU0 \
        else StatBasis.SUM_PAIR
    suff = suff_stats(model, basis, theta, mu=psi.mu, group_means=data.group_means)
    return ChainState(theta=theta, psi=psi, suff=suff)


def _moment_init(model: ModelSpec, data: Dataset) -> GlobalParams:
    """Method-of-moments style guess used to seed the MLE search."""
    if model.is_discrete:
        rate = float((data.counts.mean() + 0.5) / (model.m + 1.0))
        mu = math.log(rate / (1.0 - rate))
        return GlobalParams(mu=mu, tau1=1.0, sample_mu=True, sample_tau1=True)
    means = data.group_means
    mu = float(means.mean())
    var_between = float(means.var()) if means.size > 1 else 1.0
    if model.kind is ModelKind.NORMAL_UNKNOWN_TAU0:
        var_within = data.within_group_ss() / max(data.J * (model.m - 1), 1)
        tau0 = 1.0 / max(var_within, 1e-8)
        tau1 = 1.0 / max(var_between - var_within / model.m, 1e-8)
        return GlobalParams(mu=mu, tau1=tau1, tau0=tau0,
                            sample_mu=True, sample_tau1=True, sample_tau0=True)
    tau1 = 1.0 / max(var_between, 1e-8)
    return GlobalParams(mu=mu, tau1=tau1, sample_mu=True, sample_tau1=True)
