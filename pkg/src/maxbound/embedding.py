"""Iterated Azema-Yor embeddings: exact sampling, a random-walk oracle, and
closed-form laws of the single-boundary extremal martingales.

The exact sampler never simulates a Brownian path.  Started from a state
``(b, s)`` with ``b > xi(s)``, the Brownian motion first either falls to
``xi(s)`` before returning to ``s`` (probability ``(s - b) / (s - xi(s))``) or
climbs back to ``s``; from there the excursion law gives the new maximum

    P(M >= y) = exp(-int_s^y dz / (z - xi(z))),

and the stage stops at ``(xi(M), M)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import streams
from .core import (
    UNBOUNDED_BELOW,
    MarginalSnapshot,
    MonteCarloEnsemble,
    StoppingBoundaryVector,
    TangencyError,
    TimeGrid,
)

TANGENCY_TOL = 1e-9
INVERSION_TOL = 1e-12
DEFAULT_STEP_CAP = 10**8


class StepBudgetExceeded(RuntimeError):
    pass


class InfiniteMoment(ValueError):
    pass


# --------------------------------------------------------------------------
# hazard integral int dz / (z - xi(z))
# --------------------------------------------------------------------------


class Hazard:
    """Closed-form cumulative hazard ``G(y) = int_{x0}^y dz / (z - xi(z))``
    for a piecewise-linear (possibly floored) boundary."""

    def __init__(self, comp, x0: float):
        self.x0 = float(x0)
        edges, slopes, icpts = comp.linear_pieces()
        keep = edges[1:] > self.x0
        first = int(np.argmax(keep))
        lo = np.concatenate([[self.x0], edges[first + 1 : -1]])
        hi = np.concatenate([edges[first + 1 : -1], [np.inf]])
        self.lo = lo
        self.slopes = slopes[first:]
        self.icpts = icpts[first:]
        self.sentinel = np.isnan(self.slopes)
        self._check_gap(comp)
        # cumulative hazard at the start of each piece
        cum = [0.0]
        for k in range(len(lo) - 1):
            cum.append(cum[-1] + self._piece(k, lo[k], hi[k]))
        self.cum = np.array(cum)

    def _gap(self, k, z):
        return (1.0 - self.slopes[k]) * z - self.icpts[k]

    def _check_gap(self, comp):
        for k in range(len(self.lo)):
            if self.sentinel[k]:
                continue
            starts = [self.lo[k]]
            if k + 1 < len(self.lo):
                starts.append(self.lo[k + 1])
            for z in starts:
                if self._gap(k, z) < TANGENCY_TOL * max(1.0, abs(z)):
                    raise TangencyError(
                        f"tangency: boundary {comp!r} touches or crosses the diagonal near z={z:.6g}"
                    )
        k = len(self.lo) - 1
        if not self.sentinel[k] and self.slopes[k] > 1.0:
            raise TangencyError(f"tangency: boundary {comp!r} crosses the diagonal (asymptotic slope > 1)")

    def _piece(self, k, z1, z2):
        if self.sentinel[k]:
            return 0.0 * np.asarray(z2)
        a = self.slopes[k]
        if a == 1.0:
            return (np.asarray(z2) - z1) / (-self.icpts[k])
        return np.log(self._gap(k, np.asarray(z2)) / self._gap(k, z1)) / (1.0 - a)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        k = np.clip(np.searchsorted(self.lo, y, side="right") - 1, 0, len(self.lo) - 1)
        out = np.array(self.cum[k], dtype=float)
        for j in np.unique(k):
            sel = k == j
            if self.sentinel[j]:
                continue
            a = self.slopes[j]
            yj = y[sel]
            if a == 1.0:
                out[sel] += (yj - self.lo[j]) / (-self.icpts[j])
            else:
                out[sel] += np.log(self._gap(j, yj) / self._gap(j, self.lo[j])) / (1.0 - a)
        return out

    def invert(self, start: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Solve ``G(y) - G(start) = h`` for ``y >= start`` by bisection."""
        start = np.asarray(start, dtype=float)
        h = np.asarray(h, dtype=float)
        target = self(start) + h
        width = np.maximum(np.abs(start), 1.0)
        hi = start + width
        for _ in range(2000):
            short = self(hi) < target
            if not short.any():
                break
            width = np.where(short, 2.0 * width, width)
            hi = np.where(short, start + width, hi)
        else:
            raise RuntimeError("could not bracket the excursion maximum")
        lo = start.copy()
        # converged entries are frozen so each result is independent of the batch
        live = np.ones(start.shape, dtype=bool)
        out = np.empty_like(start)
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            g = self(mid)
            done = live & ((np.abs(g - target) <= INVERSION_TOL) | (hi - lo <= 4 * np.spacing(hi)))
            out[done] = mid[done]
            live &= ~done
            if not live.any():
                break
            up = g < target
            lo = np.where(live & up, mid, lo)
            hi = np.where(live & ~up, mid, hi)
        out[live] = 0.5 * (lo + hi)[live]
        return out


def survival_single(xi, x0: float, y) -> np.ndarray | float:
    """P(max >= y) = exp(-int_{x0}^y dz / (z - xi(z))) for one AY stage from x0."""
    ya = np.asarray(y, dtype=float)
    if np.any(ya < x0):
        raise ValueError("survival is defined for y >= X_0")
    out = np.exp(-Hazard(xi, x0)(ya))
    return float(out) if np.ndim(y) == 0 else out


# --------------------------------------------------------------------------
# exact sampler
# --------------------------------------------------------------------------


def _stage_exact(comp, hazard: Hazard, b, s, u_ruin, u_max):
    """Advance arrays of states ``(b, s)`` through one stage."""
    v, below = comp.values(s)
    moves = below | (b > np.where(below, -np.inf, v))
    b = b.copy()
    s = s.copy()
    if not moves.any():
        return b, s
    idx = np.flatnonzero(moves)
    bi, si = b[idx], s[idx]
    vi, below_i = v[idx], below[idx]
    # phase 1: fall to xi(s) before regaining s
    p_ruin = np.where(below_i, 0.0, (si - bi) / np.where(below_i, 1.0, si - vi))
    ruin = u_ruin[idx] < p_ruin
    b[idx[ruin]] = vi[ruin]
    # phase 2: excursion law for the new maximum
    climb = idx[~ruin]
    if climb.size:
        h = -np.log1p(-u_max[climb])
        new_max = hazard.invert(s[climb], h)
        nv, nb = comp.values(new_max)
        if np.any(nb):
            raise RuntimeError("excursion maximum landed where the boundary is unbounded below")
        s[climb] = new_max
        b[climb] = nv
    return b, s


def _simulate_exact(xi: StoppingBoundaryVector, x0: float, u: np.ndarray):
    n = xi.n
    paths = u.shape[0]
    hazards = [Hazard(c, x0) for c in xi.components]
    x = np.empty((paths, n + 1))
    s = np.empty((paths, n + 1))
    b = np.full(paths, float(x0))
    m = np.full(paths, float(x0))
    x[:, 0] = b
    s[:, 0] = m
    for i, (comp, hz) in enumerate(zip(xi.components, hazards), start=1):
        b, m = _stage_exact(comp, hz, b, m, u[:, 2 * i - 2], u[:, 2 * i - 1])
        x[:, i] = b
        s[:, i] = m
    return x, s


def sample_iterated_ay_exact(xi: StoppingBoundaryVector, x0: float, substream: np.random.Generator) -> MarginalSnapshot:
    """One exact draw of the stage states (B_tau_i, max B up to tau_i), i=0..n."""
    u = substream.random(2 * xi.n).reshape(1, -1)
    x, s = _simulate_exact(xi, x0, u)
    return MarginalSnapshot(tuple(x[0]), tuple(s[0]))


def simulate_exact(xi: StoppingBoundaryVector, x0: float, paths: int, seed: int, grid: TimeGrid | None = None) -> MonteCarloEnsemble:
    """Vectorised exact sampler; row ``k`` equals
    ``sample_iterated_ay_exact(xi, x0, path_generator(seed, k, TAG_EXACT))``."""
    if xi.x0 != x0:
        raise ValueError("boundary vector was validated for a different X_0")
    u = streams.uniforms(seed, paths, 2 * xi.n, streams.TAG_EXACT)
    x, s = _simulate_exact(xi, x0, u)
    grid = grid or TimeGrid.uniform(xi.n)
    return MonteCarloEnsemble(grid, x, s, seed, streams.GENERATOR_ID)


# --------------------------------------------------------------------------
# random-walk oracle
# --------------------------------------------------------------------------


def default_dt(x0: float) -> float:
    return 1e-5 * x0 * x0


def sample_iterated_ay_walk(xi: StoppingBoundaryVector, x0: float, dt: float, substream: np.random.Generator,
                            step_cap: int = DEFAULT_STEP_CAP) -> MarginalSnapshot:
    """Gaussian random walk with step variance ``dt`` stopped at the first
    step with value <= xi_i(running max)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    sd = math.sqrt(dt)
    b = s = float(x0)
    xs, ss = [b], [s]
    for i, comp in enumerate(xi.components, start=1):
        v = comp(s)
        if v is not UNBOUNDED_BELOW and not b > v:
            xs.append(b)
            ss.append(s)
            continue
        steps = 0
        block = 4096
        while True:
            path = b + np.cumsum(substream.standard_normal(block) * sd)
            run = np.maximum(s, np.maximum.accumulate(path))
            vals, below = comp.values(run)
            hit = ~below & (path <= np.where(below, -np.inf, vals))
            if hit.any():
                k = int(np.argmax(hit))
                b, s = float(path[k]), float(run[k])
                break
            b, s = float(path[-1]), float(run[-1])
            steps += block
            if steps >= step_cap:
                raise StepBudgetExceeded(f"stage {i} not stopped after {steps} steps")
            block = min(2 * block, 1 << 20)
        xs.append(b)
        ss.append(s)
    return MarginalSnapshot(tuple(xs), tuple(ss))


def simulate_walk(xi: StoppingBoundaryVector, x0: float, paths: int, seed: int, dt: float | None = None,
                  grid: TimeGrid | None = None, step_cap: int = DEFAULT_STEP_CAP) -> MonteCarloEnsemble:
    dt = default_dt(x0) if dt is None else dt
    snaps = streams.per_path(
        lambda g, _: sample_iterated_ay_walk(xi, x0, dt, g, step_cap), seed, paths, streams.TAG_WALK
    )
    grid = grid or TimeGrid.uniform(xi.n)
    return MonteCarloEnsemble.from_snapshots(grid, snaps, seed, streams.GENERATOR_ID)


# --------------------------------------------------------------------------
# closed forms for the Linear(alpha) extremal martingale
# --------------------------------------------------------------------------


class ExtremalMoments(NamedTuple):
    max_moment: float       # E[M^p]
    terminal_moment: float  # E[(alpha M)^p]
    terminal_mean: float    # E[alpha M]


def extremal_moments(alpha: float, x0: float, p: float) -> ExtremalMoments:
    """Moments of the stopped maximum M (tail ``(x0/y)^(1/(1-alpha))``) and of
    the terminal value ``alpha M``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not x0 > 0:
        raise ValueError("X_0 must be positive")
    if p >= 1.0 / (1.0 - alpha):
        raise InfiniteMoment(f"E[M^{p}] is infinite for alpha={alpha} (need p < {1 / (1 - alpha):.6g})")
    denom = 1.0 - p + p * alpha
    return ExtremalMoments(x0**p / denom, alpha**p * x0**p / denom, float(x0))


def extremal_xlogx(alpha: float) -> float:
    """E[(X/X0) log(X/X0)] for the terminal value X = alpha M."""
    return math.log(alpha) + (1.0 - alpha) / alpha


def extremal_tail(alpha: float, x0: float, y):
    """P(M >= y) = (x0 / y)^(1/(1-alpha)) for y >= x0."""
    y = np.asarray(y, dtype=float)
    return np.where(y <= x0, 1.0, (x0 / np.maximum(y, x0)) ** (1.0 / (1.0 - alpha)))
