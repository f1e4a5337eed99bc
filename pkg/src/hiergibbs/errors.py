"""Exception types shared across the package."""


class HierGibbsError(Exception):
    """Base class for all package-specific failures."""


class InvalidParameterError(HierGibbsError, ValueError):
    """A model or prior parameter violates its domain (e.g. precision <= 0)."""


class NumericalError(HierGibbsError, RuntimeError):
    """A numerical routine failed to reach its accuracy target.

    ``residual`` carries the observed disagreement when available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateStateError(NumericalError):
    """A chain reached a state where a full conditional is undefined."""


class LogConcavityError(HierGibbsError, RuntimeError):
    """The target handed to the rejection sampler is not log-concave
    (or has unbounded mass)."""


class OptimizationError(HierGibbsError, RuntimeError):
    """An optimizer exhausted its evaluation budget without converging."""


class ZeroVarianceError(HierGibbsError, ValueError):
    """A constant series has no defined effective sample size."""
