"""Adaptive rejection sampling for log-concave densities on the real line.

Tangent-based variant: the upper hull is built from tangent lines at the
evaluated abscissae (derivatives are supplied analytically by the models
module), the lower squeeze from their chords.  Accepted draws are exact
samples from the normalised target; every evaluated proposal refines the
hull, capped at ``MAX_HULL_POINTS`` points.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import LogConcavityError, NumericalError

MAX_HULL_POINTS = 50
MAX_EXPANSIONS = 50
_SLOPE_TINY = 1e-12
# slack for floating-point noise in the log-concavity witness dlogf
_MONOTONE_TOL = 1e-9


def _log1mexp(t):
    """log(1 - exp(-t)) for t > 0 (array-safe), stable for small and large
    t; evaluates to 0 where t is +inf."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    small = t < math.log(2.0)
    big = ~small & np.isfinite(t)
    out[small] = np.log(-np.expm1(-t[small]))
    out[big] = np.log1p(-np.exp(-t[big]))
    return out


class HullState:
    """Piecewise-linear upper/lower envelope of a concave log-density.

    ``x`` holds the sorted abscissae with their log-density values ``h``
    and derivatives ``dh``.  Segment i covers (z[i], z[i+1]) where the
    tangents at x[i] and x[i+1] intersect at z; its envelope is the
    tangent at x[i].
    """

    def __init__(self, x, h, dh, max_points=MAX_HULL_POINTS):
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        dh = np.asarray(dh, dtype=float)
        if x.size < 2:
            raise ValueError("a hull needs at least two abscissae")
        self.max_points = max_points
        order = np.argsort(x)
        self._set_points(x[order], h[order], dh[order])

    def _set_points(self, x, h, dh):
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h))
                and np.all(np.isfinite(dh))):
            raise NumericalError("hull points must be finite")
        if np.any(np.diff(x) <= 0):
            raise LogConcavityError("abscissae must be strictly increasing")
        scale = max(1.0, float(np.max(np.abs(dh))))
        if np.any(np.diff(dh) > _MONOTONE_TOL * scale):
            raise LogConcavityError(
                "dlogf increases across abscissae: target is not log-concave"
            )
        if dh[0] <= 0 or dh[-1] >= 0:
            raise LogConcavityError(
                "envelope has unbounded mass: need dlogf > 0 at the left end "
                "and < 0 at the right end"
            )
        self.x, self.h, self.dh = x, h, dh
        self._rebuild()

    def _rebuild(self):
        x, h, dh = self.x, self.h, self.dh
        k = x.size
        slope_drop = dh[:-1] - dh[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            z_inner = (h[1:] - h[:-1] + dh[:-1] * x[:-1] - dh[1:] * x[1:]) / slope_drop
        mid = 0.5 * (x[:-1] + x[1:])
        z_inner = np.where(slope_drop > _SLOPE_TINY, z_inner, mid)
        z_inner = np.clip(z_inner, x[:-1], x[1:])
        self.z = np.concatenate(([-np.inf], z_inner, [np.inf]))

        # unnormalised log-mass under the tangent at x[i] over (z[i], z[i+1]).
        # The tangent anchor is the finite endpoint: b when the slope rises
        # (the leftmost segment has a = -inf), a when it falls.
        a, b, s = self.z[:-1], self.z[1:], dh
        flat = np.abs(s) <= _SLOPE_TINY
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            width = b - a
            ref = np.where(s > 0, b, a)
            logmass = h + s * (ref - x) - np.log(np.abs(s)) \
                + _log1mexp(np.abs(s) * width)
            if np.any(flat):
                if np.any(flat & ~np.isfinite(width)):
                    raise LogConcavityError("flat envelope segment with infinite width")
                logmass[flat] = h[flat] + np.log(width[flat])
        self.seg_logmass = logmass
        shift = logmass.max()
        mass = np.exp(logmass - shift)
        self.seg_cdf = np.cumsum(mass / mass.sum())
        self.log_total_mass = shift + math.log(mass.sum())

    @property
    def size(self) -> int:
        return self.x.size

    def envelope(self, theta, seg=None):
        """Upper hull value(s) at theta; ``seg`` gives the segment index
        when already known from proposal sampling."""
        theta = np.asarray(theta, dtype=float)
        if seg is None:
            seg = np.clip(np.searchsorted(self.z, theta) - 1, 0, self.size - 1)
        return self.h[seg] + self.dh[seg] * (theta - self.x[seg])

    def squeeze(self, theta):
        """Chord lower bound at theta (-inf outside the abscissa range)."""
        theta = np.asarray(theta, dtype=float)
        j = np.searchsorted(self.x, theta)
        inside = (j >= 1) & (j <= self.size - 1)
        jj = np.clip(j, 1, self.size - 1)
        x0, x1 = self.x[jj - 1], self.x[jj]
        h0, h1 = self.h[jj - 1], self.h[jj]
        vals = (h0 * (x1 - theta) + h1 * (theta - x0)) / (x1 - x0)
        return np.where(inside, vals, -np.inf)

    def propose(self, n, rng):
        """n draws from the normalised envelope, with their segment ids."""
        seg = np.searchsorted(self.seg_cdf, rng.random(n))
        seg = np.minimum(seg, self.size - 1)
        u = np.clip(rng.random(n), 1e-15, 1.0 - 1e-15)
        a, b, s = self.z[seg], self.z[seg + 1], self.dh[seg]
        theta = np.empty(n)

        with np.errstate(invalid="ignore", over="ignore"):
            pos = s > _SLOPE_TINY
            if np.any(pos):
                t = s[pos] * (b[pos] - a[pos])  # may be +inf
                factor = np.where(np.isfinite(t), np.expm1(-t), -1.0)
                theta[pos] = b[pos] + np.log1p((1.0 - u[pos]) * factor) / s[pos]
            neg = s < -_SLOPE_TINY
            if np.any(neg):
                t = s[neg] * (b[neg] - a[neg])  # may be -inf
                factor = np.where(np.isfinite(t), np.expm1(t), -1.0)
                theta[neg] = a[neg] + np.log1p(u[neg] * factor) / s[neg]
            flat = ~(pos | neg)
            if np.any(flat):
                theta[flat] = a[flat] + u[flat] * (b[flat] - a[flat])
        return theta, seg

    def insert_many(self, thetas, logfs, dlogfs):
        """Add evaluated points (deduplicated, capped at max_points) and
        rebuild the envelope once."""
        room = self.max_points - self.size
        if room <= 0:
            return
        xs, hs, ds = [self.x], [self.h], [self.dh]
        kept_x = self.x
        added = []
        for theta, lf, df in zip(thetas, logfs, dlogfs):
            if room <= 0:
                break
            pool = np.concatenate([kept_x, np.array(added)]) if added else kept_x
            if np.min(np.abs(pool - theta)) < 1e-12:
                continue
            added.append(theta)
            xs.append(np.array([theta]))
            hs.append(np.array([lf]))
            ds.append(np.array([df]))
            room -= 1
        if not added:
            return
        x = np.concatenate(xs)
        h = np.concatenate(hs)
        dh = np.concatenate(ds)
        order = np.argsort(x)
        self._set_points(x[order], h[order], dh[order])

    def insert(self, theta, logf, dlogf):
        """Add one evaluated point; no-op at the size cap or on duplicates."""
        self.insert_many([theta], [logf], [dlogf])


def ars_init(target, mode_hint, scale_hint, max_points=MAX_HULL_POINTS) -> HullState:
    """Build a starting hull around ``mode_hint``.

    Starts from abscissae mode_hint + {-2, 0, 2} * scale_hint and doubles
    the offset outward until dlogf is positive at the left end and
    negative at the right end.
    """
    if scale_hint <= 0:
        raise ValueError("scale_hint must be positive")
    xs = [mode_hint - 2.0 * scale_hint, mode_hint, mode_hint + 2.0 * scale_hint]
    evals = {}

    def ev_batch(points):
        lf, df = target(np.asarray(points, dtype=float))
        lf = np.atleast_1d(np.asarray(lf, dtype=float))
        df = np.atleast_1d(np.asarray(df, dtype=float))
        if not (np.all(np.isfinite(lf)) and np.all(np.isfinite(df))):
            raise NumericalError(f"target returned non-finite values near {points}")
        for x, l, d in zip(points, lf, df):
            evals[x] = (float(l), float(d))

    def ev(x):
        if x not in evals:
            ev_batch([x])
        return evals[x]

    ev_batch(xs)
    offset = 2.0 * scale_hint
    for _ in range(MAX_EXPANSIONS):
        if ev(xs[0])[1] > 0:
            break
        offset *= 2.0
        xs.insert(0, mode_hint - offset)
        ev(xs[0])
    else:
        raise LogConcavityError(
            "no point with positive dlogf found on the left: target looks "
            "unbounded or not log-concave"
        )
    offset = 2.0 * scale_hint
    for _ in range(MAX_EXPANSIONS):
        if ev(xs[-1])[1] < 0:
            break
        offset *= 2.0
        xs.append(mode_hint + offset)
        ev(xs[-1])
    else:
        raise LogConcavityError(
            "no point with negative dlogf found on the right: target looks "
            "unbounded or not log-concave"
        )
    xs_arr = np.array(xs)
    h = np.array([evals[x][0] for x in xs])
    dh = np.array([evals[x][1] for x in xs])
    return HullState(xs_arr, h, dh, max_points=max_points)


def ars_sample_many(hull: HullState, target, n, rng) -> np.ndarray:
    """n exact i.i.d. draws from the target, refining ``hull`` in place.

    Each round is proposed from the round-start envelope; points that fail
    the squeeze test are evaluated exactly (one vectorised call) and folded
    into the hull afterwards.  Testing against the round-start envelope
    keeps the draws exact because it is the density the round was proposed
    from.
    """
    out = np.empty(n)
    filled = 0
    rounds = 0
    while filled < n:
        rounds += 1
        if rounds > 1000:
            raise NumericalError("rejection sampling made no progress")
        todo = n - filled
        theta, seg = hull.propose(todo, rng)
        logw = np.log(rng.random(todo))
        env = hull.envelope(theta, seg)
        sq = hull.squeeze(theta)
        accepted = logw <= sq - env
        need = np.nonzero(~accepted)[0]
        if need.size:
            lf_arr, df_arr = target(theta[need])
            lf_arr = np.atleast_1d(np.asarray(lf_arr, dtype=float))
            df_arr = np.atleast_1d(np.asarray(df_arr, dtype=float))
            gaps = lf_arr - env[need]
            worst = float(np.max(gaps - 1e-12 * np.maximum(1.0, np.abs(lf_arr))))
            if worst > 0:
                raise NumericalError(
                    f"acceptance probability exceeds 1 by {worst:.3e}: envelope "
                    "does not dominate the target"
                )
            accepted[need] = logw[need] <= gaps
        n_acc = int(accepted.sum())
        out[filled : filled + n_acc] = theta[accepted]
        filled += n_acc
        if need.size:
            hull.insert_many(theta[need], lf_arr, df_arr)
    return out


def ars_sample(hull: HullState, target, rng):
    """One exact draw; returns (draw, hull) with the hull refined in place."""
    draw = ars_sample_many(hull, target, 1, rng)
    return float(draw[0]), hull
