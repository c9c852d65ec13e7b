"""Domain types shared by every other module.

Boundary functions, payoff functions and the Monte Carlo ensemble container
live here.  Boundaries may take the value ``UNBOUNDED_BELOW`` (a stand-in for
minus infinity); it is never mixed into float arithmetic.  Vectorised
evaluation therefore returns a pair ``(values, below)`` where ``below`` flags
the sentinel entries and ``values`` holds NaN there.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence, Union

import numpy as np


class Extended(enum.Enum):
    NEG_INF = "-inf"

    def __repr__(self) -> str:
        return "UNBOUNDED_BELOW"


UNBOUNDED_BELOW = Extended.NEG_INF

ExtendedReal = Union[float, Extended]


def is_unbounded(v) -> bool:
    return v is UNBOUNDED_BELOW


class TangencyError(ValueError):
    """A boundary touches or crosses the diagonal, so 1/(z - xi(z)) is not integrable."""


# --------------------------------------------------------------------------
# Time grid, snapshots, ensembles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    times: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        object.__setattr__(self, "times", t)
        if len(t) < 2:
            raise ValueError("a time grid needs t_0 and at least one more point")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if any(b < a for a, b in zip(t, t[1:])):
            raise ValueError("time grid must be non-decreasing")

    @property
    def n(self) -> int:
        return len(self.times) - 1

    @classmethod
    def uniform(cls, n: int, horizon: float = 1.0) -> "TimeGrid":
        if n < 1:
            raise ValueError("n must be >= 1")
        return cls(tuple(np.linspace(0.0, horizon, n + 1)))


@dataclass(frozen=True)
class MarginalSnapshot:
    """Values and running maxima of one path at t_0..t_n."""

    x: tuple
    s: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        s = tuple(float(v) for v in self.s)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        if len(x) != len(s) or len(x) < 2:
            raise ValueError("x and s must have the same length n+1 >= 2")
        if s[0] != x[0]:
            raise ValueError("initial maximum must equal the initial value")
        if any(b < a for a, b in zip(s, s[1:])):
            raise ValueError("running maximum must be non-decreasing")
        if any(si < xi for si, xi in zip(s, x)):
            raise ValueError("running maximum must dominate the value")

    @property
    def n(self) -> int:
        return len(self.x) - 1


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MonteCarloEnsemble:
    """A batch of snapshots stored column-wise.

    ``x`` and ``s`` have shape ``(paths, n + 1)``.
    """

    grid: TimeGrid
    x: np.ndarray
    s: np.ndarray
    seed: int = 0
    generator_id: str = "philox4x64-10"

    def __post_init__(self):
        x = _readonly(self.x)
        s = _readonly(self.s)
        if x.ndim != 2 or x.shape != s.shape:
            raise ValueError("x and s must be 2-d arrays of equal shape")
        if x.shape[1] != self.grid.n + 1:
            raise ValueError(
                f"snapshot length {x.shape[1]} does not match grid n+1={self.grid.n + 1}"
            )
        if x.shape[0] == 0:
            raise ValueError("empty ensemble")
        if not np.all(x[:, 0] == x[0, 0]):
            raise ValueError("all paths must share the same starting value")
        if not np.array_equal(s[:, 0], x[:, 0]):
            raise ValueError("initial maximum must equal the initial value")
        if np.any(np.diff(s, axis=1) < 0):
            raise ValueError("running maximum must be non-decreasing")
        if np.any(s < x):
            raise ValueError("running maximum must dominate the value")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def x0(self) -> float:
        return float(self.x[0, 0])

    @property
    def paths(self) -> int:
        return self.x.shape[0]

    def __len__(self) -> int:
        return self.paths

    def snapshot(self, k: int) -> MarginalSnapshot:
        return MarginalSnapshot(tuple(self.x[k]), tuple(self.s[k]))

    @property
    def snapshots(self) -> Iterator[MarginalSnapshot]:
        return (self.snapshot(k) for k in range(self.paths))

    @classmethod
    def from_snapshots(cls, grid, snaps: Sequence[MarginalSnapshot], seed=0, generator_id="philox4x64-10"):
        x = np.array([sn.x for sn in snaps])
        s = np.array([sn.s for sn in snaps])
        return cls(grid, x, s, seed, generator_id)


@dataclass(frozen=True)
class BoundReport:
    value: float
    stderr: float
    m_grid: dict
    truncation_tail: float
    path_count: int
    notes: tuple = ()
    quadrature_error: float = 0.0


# --------------------------------------------------------------------------
# Boundary functions
# --------------------------------------------------------------------------


class _Boundary:
    """Common interface of the scalar boundary functions."""

    def values(self, m):
        """Vectorised evaluation: ``(vals, below)``."""
        raise NotImplementedError

    def __call__(self, m: float) -> ExtendedReal:
        vals, below = self.values(np.array([float(m)]))
        return UNBOUNDED_BELOW if below[0] else float(vals[0])

    def breakpoints(self) -> tuple:
        return ()

    def asymptotic_slope(self) -> float:
        raise NotImplementedError

    def linear_pieces(self):
        """Return ``(edges, slopes, intercepts)`` describing the function as
        ``slope * m + intercept`` on ``[edges[k], edges[k+1])`` with
        ``edges[0] = -inf`` and ``edges[-1] = +inf``.  Sentinel pieces carry
        NaN coefficients.
        """
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(_Boundary):
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))

    def values(self, m):
        m = np.asarray(m, dtype=float)
        return self.alpha * m, np.zeros(m.shape, dtype=bool)

    def asymptotic_slope(self):
        return self.alpha

    def linear_pieces(self):
        return np.array([-np.inf, np.inf]), np.array([self.alpha]), np.array([0.0])


@dataclass(frozen=True)
class FlooredLinear(_Boundary):
    """``alpha * m`` for ``m >= floor``, unbounded below otherwise."""

    alpha: float
    floor: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "floor", float(self.floor))

    def values(self, m):
        m = np.asarray(m, dtype=float)
        below = m < self.floor
        vals = np.where(below, np.nan, self.alpha * m)
        return vals, below

    def breakpoints(self):
        return (self.floor,)

    def asymptotic_slope(self):
        return self.alpha

    def linear_pieces(self):
        return (
            np.array([-np.inf, self.floor, np.inf]),
            np.array([np.nan, self.alpha]),
            np.array([np.nan, 0.0]),
        )


@dataclass(frozen=True)
class PiecewiseLinear(_Boundary):
    """Linear interpolation through ``points``; right-continuous at repeated
    abscissae (a repeated ``m`` encodes a jump).  Outside the breakpoint range
    the first/last segment is extended linearly (a single point gives a
    constant).
    """

    points: tuple

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.points)
        if not pts:
            raise ValueError("piecewise-linear boundary needs at least one point")
        if any(b[0] < a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("breakpoints must be ordered in m")
        object.__setattr__(self, "points", pts)

    def _arrays(self):
        ms = np.array([p[0] for p in self.points])
        vs = np.array([p[1] for p in self.points])
        return ms, vs

    def linear_pieces(self):
        ms, vs = self._arrays()
        if len(ms) == 1:
            return np.array([-np.inf, np.inf]), np.array([0.0]), np.array([vs[0]])
        edges = [-np.inf]
        slopes = []
        icpts = []
        # interior segments, skipping zero-width (jump) segments
        segs = [(k, k + 1) for k in range(len(ms) - 1) if ms[k + 1] > ms[k]]
        if not segs:
            return np.array([-np.inf, ms[0], np.inf]), np.array([0.0, 0.0]), np.array([vs[0], vs[-1]])
        for j, (a, b) in enumerate(segs):
            sl = (vs[b] - vs[a]) / (ms[b] - ms[a])
            ic = vs[a] - sl * ms[a]
            if j > 0:
                edges.append(ms[a])
            slopes.append(sl)
            icpts.append(ic)
        edges.append(np.inf)
        return np.array(edges), np.array(slopes), np.array(icpts)

    def values(self, m):
        m = np.asarray(m, dtype=float)
        edges, slopes, icpts = self.linear_pieces()
        k = np.searchsorted(edges, m, side="right") - 1
        k = np.clip(k, 0, len(slopes) - 1)
        return slopes[k] * m + icpts[k], np.zeros(m.shape, dtype=bool)

    def breakpoints(self):
        return tuple(sorted({p[0] for p in self.points}))

    def asymptotic_slope(self):
        return float(self.linear_pieces()[1][-1])

    def is_nondecreasing(self) -> bool:
        _, vs = self._arrays()
        return bool(np.all(np.diff(vs) >= 0))


Boundary = Union[Linear, FlooredLinear, PiecewiseLinear]


def validation_grid(x0: float, extra=()) -> np.ndarray:
    """1024 geometric points over (x0, 1e6 * max(1, x0)] plus ``extra``."""
    top = 1e6 * max(1.0, x0)
    width = top - x0
    offs = np.geomspace(width * 1e-9, width, 1024)
    pts = x0 + offs
    extra = [e for e in extra if e > x0]
    # probe both sides of every breakpoint
    more = []
    for e in extra:
        more.extend([e, np.nextafter(e, -np.inf), e * (1 + 1e-9) + 1e-12])
    pts = np.concatenate([pts, np.array([p for p in more if p > x0], dtype=float)])
    return np.unique(pts)


def _ordered(vals: np.ndarray, below: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Row-wise check of zeta_1 <= ... <= zeta_n < m on an (n, L) stack."""
    ok = np.ones(m.shape, dtype=bool)
    n = vals.shape[0]
    for i in range(n - 1):
        a_b, b_b = below[i], below[i + 1]
        # sentinel <= anything; real > sentinel is a violation
        ok &= ~(b_b & ~a_b)
        both = ~a_b & ~b_b
        ok &= ~both | (vals[i] <= vals[i + 1])
    last_real = ~below[n - 1]
    ok &= ~last_real | (vals[n - 1] < m)
    return ok


@dataclass(frozen=True)
class BoundaryVector:
    """zeta_1 <= ... <= zeta_n < id on (x0, inf), checked at construction."""

    components: tuple
    x0: float

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("need at least one boundary component")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "x0", float(self.x0))
        grid = validation_grid(self.x0, self.breakpoints())
        vals, below = self.values(grid)
        ok = _ordered(vals, below, grid)
        if not np.all(ok):
            bad = grid[~ok][0]
            raise ValueError(f"boundary ordering zeta_1 <= ... <= zeta_n < m violated at m={bad:.6g}")

    @classmethod
    def repeated(cls, comp, n: int, x0: float) -> "BoundaryVector":
        return cls(tuple([comp] * n), x0)

    @property
    def n(self) -> int:
        return len(self.components)

    def breakpoints(self) -> tuple:
        bp = set()
        for c in self.components:
            bp.update(c.breakpoints())
        return tuple(sorted(bp))

    def values(self, m):
        """Stacked evaluation, shapes ``(n,) + m.shape``."""
        m = np.asarray(m, dtype=float)
        vs, bs = zip(*(c.values(m) for c in self.components))
        return np.stack(vs), np.stack(bs)

    def at(self, m: float) -> list:
        return [c(m) for c in self.components]


@dataclass(frozen=True)
class StoppingBoundaryVector:
    """Non-decreasing stopping boundaries xi_1..xi_n with xi_j(m) < m."""

    components: tuple
    x0: float

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("need at least one boundary component")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "x0", float(self.x0))
        bp = set()
        for c in comps:
            bp.update(c.breakpoints())
        grid = validation_grid(self.x0, bp)
        grid = np.concatenate([[self.x0], grid])
        for j, c in enumerate(comps, start=1):
            vals, below = c.values(grid)
            real = ~below
            if np.any(np.diff(below.astype(int)) > 0):
                raise ValueError(f"xi_{j} is not non-decreasing")
            v = vals[real]
            # slope * m + intercept rounds, so allow a few ulps of decrease
            slack = 1e-12 * np.maximum(1.0, np.abs(v[1:]))
            if np.any(np.diff(v) < -slack):
                raise ValueError(f"xi_{j} is not non-decreasing")
            if np.any(v >= grid[real]):
                bad = grid[real][v >= grid[real]][0]
                raise TangencyError(f"tangency: xi_{j} touches or crosses the diagonal at m={bad:.6g}")

    @property
    def n(self) -> int:
        return len(self.components)

    def values(self, m):
        m = np.asarray(m, dtype=float)
        vs, bs = zip(*(c.values(m) for c in self.components))
        return np.stack(vs), np.stack(bs)


def evaluate_boundary(b: BoundaryVector, i: int, m: float) -> ExtendedReal:
    """zeta_i(m) for 1-based ``i``."""
    if not 1 <= i <= b.n:
        raise IndexError(f"boundary index {i} outside 1..{b.n}")
    if not m > b.x0:
        raise ValueError(f"level m={m} must exceed X_0={b.x0}")
    return b.components[i - 1](m)


# --------------------------------------------------------------------------
# Payoffs phi and their Stieltjes measures
# --------------------------------------------------------------------------


class _Phi:
    growth_exponent: float

    def __call__(self, m):
        raise NotImplementedError

    def measure(self, a, b):
        """dphi((a, b]) = phi(b) - phi(a)."""
        return self(b) - self(a)

    def atoms(self) -> tuple:
        return ()

    @property
    def has_density(self) -> bool:
        return False


@dataclass(frozen=True)
class Power(_Phi):
    p: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("power payoff needs p > 0")
        object.__setattr__(self, "p", float(self.p))

    def __call__(self, m):
        return np.maximum(np.asarray(m, dtype=float), 0.0) ** self.p

    def density(self, m):
        m = np.asarray(m, dtype=float)
        return self.p * np.maximum(m, 0.0) ** (self.p - 1.0)

    @property
    def has_density(self):
        return True

    @property
    def growth_exponent(self):
        return self.p


@dataclass(frozen=True)
class Identity(_Phi):
    def __call__(self, m):
        return np.asarray(m, dtype=float) * 1.0

    def density(self, m):
        return np.ones_like(np.asarray(m, dtype=float))

    @property
    def has_density(self):
        return True

    growth_exponent = 1.0


@dataclass(frozen=True)
class IndicatorThreshold(_Phi):
    """phi = 1_[m0, inf)."""

    m0: float

    def __post_init__(self):
        object.__setattr__(self, "m0", float(self.m0))

    def __call__(self, m):
        return (np.asarray(m, dtype=float) >= self.m0).astype(float)

    def atoms(self):
        return ((self.m0, 1.0),)

    growth_exponent = 0.0


@dataclass(frozen=True)
class Tabulated(_Phi):
    """Right-continuous step function through ``points``; constant at the
    first value to the left of the table."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.points)
        if not pts:
            raise ValueError("tabulated payoff needs at least one point")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("tabulated abscissae must be strictly increasing")
        if any(b[1] < a[1] for a, b in zip(pts, pts[1:])):
            raise ValueError("tabulated payoff must be non-decreasing")
        object.__setattr__(self, "points", pts)

    def __call__(self, m):
        ms = np.array([p[0] for p in self.points])
        vs = np.array([p[1] for p in self.points])
        k = np.searchsorted(ms, np.asarray(m, dtype=float), side="right") - 1
        return vs[np.clip(k, 0, None)]

    def atoms(self):
        return tuple(
            (b[0], b[1] - a[1]) for a, b in zip(self.points, self.points[1:]) if b[1] > a[1]
        )

    growth_exponent = 0.0


Phi = Union[Power, Identity, IndicatorThreshold, Tabulated]


class Integrability(NamedTuple):
    ok: bool
    alpha: float


def check_integrability(b: BoundaryVector, phi) -> Integrability:
    """Asymptotic-slope check that zeta_1(m) >= alpha m eventually and
    phi = o(m^gamma) for some gamma < 1 / (1 - alpha).

    The witness alpha is the asymptotic slope of zeta_1; the growth exponent
    of phi must be strictly below 1 / (1 - alpha).
    """
    alpha = float(b.components[0].asymptotic_slope())
    if not alpha > 0:
        return Integrability(False, alpha)
    if alpha >= 1:
        return Integrability(True, alpha)
    limit = 1.0 / (1.0 - alpha)
    return Integrability(bool(phi.growth_exponent < limit), alpha)


def stderr(values: np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.all(v == v.flat[0]):
        return 0.0
    return float(np.std(v, ddof=1) / math.sqrt(v.size))
