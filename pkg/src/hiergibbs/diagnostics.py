"""Convergence measurement: autocovariance, batch-means ESS, integrated
autocorrelation times, the root-J posterior rescaling and a histogram
total-variation estimator."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import ZeroVarianceError
from .gibbs import ChainOutput
from .models import GlobalParams

#: default lag horizon for reported autocorrelation functions
def default_max_lag(n: int) -> int:
    return int(min(n // 4, 200))


@dataclass
class IatSummary:
    """Per-column integrated autocorrelation times (iterations / ESS) with
    their maximum over all tracked columns."""

    per_column: dict
    ess_per_column: dict
    max_iat: float
    skipped: tuple = ()

    @property
    def argmax(self) -> str:
        return max(self.per_column, key=self.per_column.get)


@dataclass
class TvEstimate:
    """Coordinate-wise histogram total-variation distances and their max,
    a lower-bound proxy for the joint total variation."""

    value: float
    bins: int
    per_coordinate: np.ndarray


def autocovariance(series, max_lag: Optional[int] = None) -> np.ndarray:
    """Biased (1/N) autocovariance estimates at lags 0..max_lag
    (default min(N/4, 200))."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = default_max_lag(n)
    if not n > max_lag >= 0:
        raise ValueError(f"need len(series) > max_lag >= 0, got {n}, {max_lag}")
    centred = x - x.mean()
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        out[k] = centred[: n - k] @ centred[k:] / n
    return out


def ess_batch_means(series) -> float:
    """Effective sample size from non-overlapping batch means with batch
    size floor(sqrt(N)): ESS = N * sample variance / long-run variance,
    truncated to [1, N]."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError(f"batch-means ESS needs at least 100 points, got {n}")
    s2 = float(x.var(ddof=1))
    if s2 <= 0.0:
        raise ZeroVarianceError("constant series: ESS undefined")
    b = int(math.floor(math.sqrt(n)))
    a = n // b
    batches = x[: a * b].reshape(a, b).mean(axis=1)
    long_run = b * float(((batches - batches.mean()) ** 2).sum()) / (a - 1)
    if long_run <= 0.0:
        return float(n)
    return float(np.clip(n * s2 / long_run, 1.0, n))


def max_iat(output: ChainOutput) -> IatSummary:
    """IAT = iterations / ESS per traced column and the maximum over all of
    them (global parameters, every group parameter, every statistic).
    Zero-variance columns are skipped and reported."""
    n = output.iterations
    if n < 100:
        raise ValueError(f"need at least 100 recorded iterations, got {n}")
    iat, ess, skipped = {}, {}, []
    for name in output.names:
        try:
            e = ess_batch_means(output.column(name))
        except ZeroVarianceError:
            skipped.append(name)
            continue
        ess[name] = e
        iat[name] = n / e
    if skipped:
        warnings.warn(f"skipped zero-variance columns: {', '.join(skipped)}")
    if not iat:
        raise ZeroVarianceError("every column has zero variance")
    return IatSummary(
        per_column=iat,
        ess_per_column=ess,
        max_iat=max(iat.values()),
        skipped=tuple(skipped),
    )


def bvm_rescale(psi_samples, psi_hat: GlobalParams, J: int) -> np.ndarray:
    """Map posterior draws psi to sqrt(J) (psi - psi_hat), column order
    matching psi_hat.sampled_names()."""
    samples = np.atleast_2d(np.asarray(psi_samples, dtype=float))
    centre = psi_hat.as_vector()
    if samples.shape[1] != centre.size:
        raise ValueError(
            f"{samples.shape[1]} columns but psi_hat samples {centre.size} components"
        )
    return math.sqrt(J) * (samples - centre)


def _gaussian_bin_mass(edges, mean, sd):
    """Exact Gaussian probability of each histogram bin plus the two tails."""
    z = (edges - mean) / sd
    cdf = ndtr(z)
    inner = np.diff(cdf)
    return inner, cdf[0], 1.0 - cdf[-1]


def tv_histogram(samples_a, reference, bins: int = 50) -> TvEstimate:
    """Histogram total-variation distance, per coordinate, against either a
    second sample set or an exact Gaussian (mean, covariance).

    Equal-width bins over the pooled sample range; a Gaussian reference is
    integrated exactly per bin and its tail mass outside the range counts
    toward the distance.  The summary is the coordinate-wise maximum, a
    lower bound on the joint total variation.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    if a.ndim != 2:
        raise ValueError("samples must be a matrix")
    if a.shape[0] < 1000:
        raise ValueError("need at least 1000 rows per sample set")
    if bins < 10:
        raise ValueError("need at least 10 bins")

    gaussian = isinstance(reference, tuple)
    if gaussian:
        mean, cov = reference
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if mean.size != a.shape[1]:
            raise ValueError("Gaussian reference dimension mismatch")
        sds = np.sqrt(np.diag(cov))
    else:
        b = np.atleast_2d(np.asarray(reference, dtype=float))
        if b.shape[1] != a.shape[1]:
            raise ValueError("sample sets must share their number of columns")
        if b.shape[0] < 1000:
            raise ValueError("need at least 1000 rows per sample set")

    per_coord = np.empty(a.shape[1])
    for d in range(a.shape[1]):
        col_a = a[:, d]
        if gaussian:
            lo, hi = col_a.min(), col_a.max()
            edges = np.linspace(lo, hi, bins + 1)
            p, _ = np.histogram(col_a, bins=edges)
            p = p / col_a.size
            q, q_left, q_right = _gaussian_bin_mass(edges, mean[d], sds[d])
            per_coord[d] = 0.5 * (np.abs(p - q).sum() + q_left + q_right)
        else:
            col_b = b[:, d]
            lo = min(col_a.min(), col_b.min())
            hi = max(col_a.max(), col_b.max())
            edges = np.linspace(lo, hi, bins + 1)
            p, _ = np.histogram(col_a, bins=edges)
            q, _ = np.histogram(col_b, bins=edges)
            per_coord[d] = 0.5 * np.abs(p / col_a.size - q / col_b.size).sum()

    return TvEstimate(value=float(per_coord.max()), bins=bins, per_coordinate=per_coord)
