"""Gibbs sampling and convergence analysis for two-level Bayesian
hierarchical models: exact kernels for normal and discrete likelihoods,
closed-form limiting spectral gaps with warm-start mixing bounds, and the
diagnostics to check that the two agree empirically."""

__version__ = "0.1.0"

from .errors import (
    DegenerateStateError,
    HierGibbsError,
    InvalidParameterError,
    LogConcavityError,
    NumericalError,
    OptimizationError,
    ZeroVarianceError,
)
from .models import (
    Dataset,
    GammaPrior,
    GlobalParams,
    ModelKind,
    ModelSpec,
    MuPrior,
    PriorSpec,
    StatBasis,
    SuffStats,
    group_posterior_normal,
    log_conditional_theta,
    marginal_loglik,
    outcome_distribution,
    simulate_data,
    suff_stats,
)
from .ars import HullState, ars_init, ars_sample, ars_sample_many
from .gibbs import (
    Blocking,
    ChainOutput,
    ChainState,
    KernelSpec,
    default_start,
    feasible_start,
    gibbs_sweep,
    mle_psi,
    psi_conditional_logpdf,
    run_chain,
)
from .asymptotics import (
    FisherMatrix,
    GapInputs,
    GapReport,
    GapVariant,
    LimitCovariance,
    cv_normal,
    fisher_normal,
    fisher_numeric_discrete,
    gap_closed_normal,
    gap_from_matrices,
    gap_single_quadrature,
    limit_covariance,
    mixing_bound,
    posterior_moment,
)
from .diagnostics import (
    IatSummary,
    TvEstimate,
    autocovariance,
    bvm_rescale,
    ess_batch_means,
    max_iat,
    tv_histogram,
)
