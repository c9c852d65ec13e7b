"""Marginal-based upper bound UB(X, phi, zeta) and the experiments built on it.

UB(X, phi, zeta) = phi(X_0) + int_{(X_0, inf)} sum_i E[lambda_i(X_{t_i})] dphi(m).

For a weight vector over levels the inner expectation integrates to a
per-path sum of piecewise-linear functions of x, so every quadrature rule is
evaluated with one sort and one ``searchsorted`` per stage rather than a
(paths x levels) array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import (
    BoundaryVector,
    BoundReport,
    FlooredLinear,
    Linear,
    MonteCarloEnsemble,
    PiecewiseLinear,
    StoppingBoundaryVector,
    check_integrability,
    stderr,
    validation_grid,
)
from .core import IndicatorThreshold
from .embedding import simulate_exact
from .pathwise import lambda_sum_array

DEFAULT_LEVELS = 512
FIRST_OFFSET = 1e-4
TAIL_TARGET = 1e-3
MAX_LEVEL_FACTOR = 1e12


class IntegrabilityError(ValueError):
    pass


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    """Cell edges (density payoffs) or atom locations (``atoms-only``)."""

    levels: np.ndarray
    rule: str
    m_max: float
    tail_bound: float = 0.0
    notes: tuple = ()

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if self.rule not in ("geometric", "uniform", "atoms-only"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if lv.ndim != 1 or (lv.size and np.any(np.diff(lv) <= 0)):
            raise ValueError("quadrature levels must be strictly increasing")
        if lv.size and self.m_max < lv[-1]:
            raise ValueError("M_max must not lie below the last level")
        if self.tail_bound < 0:
            raise ValueError("tail bound must be non-negative")
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    def describe(self) -> dict:
        lv = self.levels
        return {
            "min": float(lv[0]) if lv.size else float("nan"),
            "max": float(self.m_max),
            "count": int(lv.size),
            "rule": self.rule,
        }

    @classmethod
    def geometric(cls, x0: float, m_max: float, count: int = DEFAULT_LEVELS, extra=(), tail_bound=0.0, notes=()):
        lo = x0 * (1 + FIRST_OFFSET) if x0 > 0 else x0 + FIRST_OFFSET
        if not m_max > lo:
            m_max = lo * (1 + FIRST_OFFSET) if lo > 0 else lo + FIRST_OFFSET
        if x0 > 0:
            inner = np.geomspace(lo, m_max, count)
        else:
            inner = x0 + np.geomspace(lo - x0, m_max - x0, count)
        return cls(_edges(x0, inner, m_max, extra), "geometric", float(m_max), tail_bound, tuple(notes))

    @classmethod
    def uniform(cls, x0: float, m_max: float, count: int = DEFAULT_LEVELS, extra=(), tail_bound=0.0, notes=()):
        inner = np.linspace(x0, m_max, count + 1)[1:]
        return cls(_edges(x0, inner, m_max, extra), "uniform", float(m_max), tail_bound, tuple(notes))

    @classmethod
    def atoms_only(cls, phi, x0: float):
        locs = [a for a, w in phi.atoms() if a > x0 and w > 0]
        lv = np.array(sorted(locs), dtype=float)
        top = float(lv[-1]) if lv.size else float(x0)
        return cls(lv, "atoms-only", top, 0.0)

    def refined(self) -> "QuadratureGrid":
        """Halve every cell."""
        if self.rule == "atoms-only":
            return self
        lv = self.levels
        mids = 0.5 * (lv[:-1] + lv[1:])
        both = np.sort(np.concatenate([lv, mids]))
        return QuadratureGrid(both, self.rule, self.m_max, self.tail_bound, self.notes)


def _edges(x0, inner, m_max, extra):
    pts = [np.array([x0], dtype=float), np.asarray(inner, dtype=float)]
    ex = np.array([e for e in extra if x0 < e < m_max], dtype=float)
    pts.append(ex)
    return np.unique(np.concatenate(pts))


# --------------------------------------------------------------------------
# level-wise estimates
# --------------------------------------------------------------------------


def ub_at_level(ens: MonteCarloEnsemble, b: BoundaryVector, m: float):
    """Mean over paths of sum_i lambda_i(x_i, m, zeta(m)) and its standard error."""
    if not m > ens.x0:
        raise ValueError(f"level m={m} must exceed X_0={ens.x0}")
    if b.n != ens.n:
        raise ValueError(f"boundary has {b.n} components, ensemble has n={ens.n}")
    z, below = b.values(np.array([float(m)]))
    per_path = lambda_sum_array(ens.x, float(m), z[:, 0], below[:, 0])
    return float(per_path.mean()), stderr(per_path)


def _ratio_weighted(x: np.ndarray, z: np.ndarray, below: np.ndarray, m: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_l w_l (x - z_l)^+ / (m_l - z_l) for every entry of ``x``.

    Sentinel levels contribute their weight (the ratio limit is 1).
    """
    const = float(w[below].sum())
    real = ~below
    zr = z[real]
    c = w[real] / (m[real] - zr)
    order = np.argsort(zr, kind="stable")
    zs = zr[order]
    cum_c = np.concatenate([[0.0], np.cumsum(c[order])])
    cum_cz = np.concatenate([[0.0], np.cumsum(c[order] * zs)])
    k = np.searchsorted(zs, x, side="left")
    return const + x * cum_c[k] - cum_cz[k]


def weighted_lambda_paths(ens: MonteCarloEnsemble, b: BoundaryVector, levels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-path sum over levels of ``w_l * sum_i lambda_i(x_i, m_l)``."""
    levels = np.asarray(levels, dtype=float)
    weights = np.asarray(weights, dtype=float)
    out = np.zeros(ens.paths)
    if levels.size == 0:
        return out
    z, below = b.values(levels)
    n = ens.n
    for i in range(1, n + 1):
        xi = ens.x[:, i]
        out += _ratio_weighted(xi, z[i - 1], below[i - 1], levels, weights)
        if i < n:
            out -= _ratio_weighted(xi, z[i], below[i], levels, weights)
    return out


def empirical_max_functional(ens: MonteCarloEnsemble, phi):
    """Sample mean of phi(s_n) and its standard error."""
    vals = np.asarray(phi(ens.s[:, -1]), dtype=float)
    return float(vals.mean()), stderr(vals)


# --------------------------------------------------------------------------
# quadrature grid selection
# --------------------------------------------------------------------------


def empirical_cutoff(ens: MonteCarloEnsemble, b: BoundaryVector) -> float:
    """Level beyond which every lambda_i vanishes on the sample.

    Once zeta_1(m) >= max x, all ratios are zero; on the last linear piece of
    zeta_1 with positive slope this happens from a computable level on.
    Returns inf when no such level exists.
    """
    xmax = float(ens.x[:, 1:].max())
    edges, slopes, icpts = b.components[0].linear_pieces()
    a, c = slopes[-1], icpts[-1]
    if not np.isfinite(a) or a <= 0:
        return math.inf
    last_edge = edges[-2] if len(edges) > 2 else -math.inf
    return float(max((xmax - c) / a, last_edge))


def witness_tail(phi, alpha: float, x0: float, m_max: float) -> float:
    """int_{m_max}^inf gamma m^(gamma-1) (x0/m)^beta dm with beta = 1/(1-alpha)."""
    gamma = float(phi.growth_exponent)
    if alpha >= 1:
        return 0.0
    beta = 1.0 / (1.0 - alpha)
    if not gamma < beta or not x0 > 0:
        return math.inf
    if gamma == 0:
        return 0.0
    return gamma * x0**beta * m_max ** (gamma - beta) / (beta - gamma)


def default_grid(ens: MonteCarloEnsemble, b: BoundaryVector, phi, count: int = DEFAULT_LEVELS) -> QuadratureGrid:
    x0 = ens.x0
    if not phi.has_density:
        return QuadratureGrid.atoms_only(phi, x0)
    extra = b.breakpoints()
    cut = empirical_cutoff(ens, b)
    if math.isfinite(cut):
        note = "integrand vanishes beyond the sample cutoff; truncation tail is zero"
        return QuadratureGrid.geometric(x0, cut, count, extra, 0.0, (note,))
    witness = check_integrability(b, phi)
    top = MAX_LEVEL_FACTOR * max(1.0, abs(x0))
    if not witness.ok:
        return QuadratureGrid.geometric(x0, top, count, extra, math.inf, ("no integrability witness",))
    est, _ = empirical_max_functional(ens, phi)
    target = TAIL_TARGET * max(abs(est), abs(float(phi(x0))), 1e-300)
    m_max = max(2.0 * abs(x0), 1.0)
    while witness_tail(phi, witness.alpha, x0, m_max) > target and m_max < top:
        m_max *= 2.0
    tail = witness_tail(phi, witness.alpha, x0, m_max)
    return QuadratureGrid.geometric(x0, m_max, count, extra, tail, ("truncated using the integrability witness",))


# --------------------------------------------------------------------------
# the UB functional
# --------------------------------------------------------------------------


def ub_functional(ens: MonteCarloEnsemble, b: BoundaryVector, phi, q: QuadratureGrid | None = None,
                  require_integrability: bool = True, max_tail_fraction: float | None = 0.01) -> BoundReport:
    """UB(X, phi, zeta) estimated from the ensemble marginals.

    Density payoffs use the midpoint rule per cell with the exact measure
    dphi(cell); the quadrature error is reported as |trapezoid - midpoint| / 3.
    Atom payoffs are evaluated exactly at the atom locations.
    """
    if b.n != ens.n:
        raise ValueError(f"boundary has {b.n} components, ensemble has n={ens.n}")
    x0 = ens.x0
    notes = []
    if require_integrability and phi.has_density:
        w = check_integrability(b, phi)
        if not w.ok:
            raise IntegrabilityError(
                f"integrability check failed (alpha={w.alpha:.6g}, growth {phi.growth_exponent:g})"
            )
    if q is None:
        q = default_grid(ens, b, phi)
    notes.extend(q.notes)
    base = float(phi(x0))
    quad_err = 0.0
    if not phi.has_density:
        atoms = [(a, wt) for a, wt in phi.atoms() if a > x0 and wt > 0]
        levels = np.array([a for a, _ in atoms], dtype=float)
        weights = np.array([wt for _, wt in atoms], dtype=float)
        per_path = base + weighted_lambda_paths(ens, b, levels, weights)
    else:
        if q.rule == "atoms-only":
            raise ValueError("a density payoff needs a geometric or uniform grid")
        edges = q.levels
        dphi = np.diff(np.asarray(phi(edges), dtype=float))
        mids = 0.5 * (edges[:-1] + edges[1:])
        per_path = base + weighted_lambda_paths(ens, b, mids, dphi)
        # trapezoid on the same cells; the left end is nudged into (X_0, inf)
        ends = edges.copy()
        ends[0] = np.nextafter(ends[0], np.inf) if ends[0] == x0 else ends[0]
        tw = np.zeros(edges.size)
        tw[:-1] += 0.5 * dphi
        tw[1:] += 0.5 * dphi
        trap = base + float(weighted_lambda_paths(ens, b, ends, tw).mean())
        quad_err = abs(trap - float(per_path.mean())) / 3.0
    value = float(per_path.mean())
    tail = float(q.tail_bound) if phi.has_density else 0.0
    if max_tail_fraction is not None and tail > max_tail_fraction * max(abs(value), 1e-300):
        raise TruncationError(f"truncation tail {tail:.3g} exceeds {max_tail_fraction:g} of the estimate {value:.6g}")
    return BoundReport(value, stderr(per_path), q.describe(), tail, ens.paths, tuple(notes), quad_err)


# --------------------------------------------------------------------------
# optimisation over zeta
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ZetaOptimum:
    zeta: float
    value: float


def _call_prices(xs_sorted: np.ndarray, suffix: np.ndarray, zeta):
    """mean((x - zeta)^+) from sorted samples and suffix sums."""
    n = xs_sorted.size
    k = np.searchsorted(xs_sorted, zeta, side="right")
    return (suffix[k] - (n - k) * zeta) / n


def optimize_zeta_single(samples, m: float, eps: float | None = None, x0: float | None = None) -> ZetaOptimum:
    """Minimise zeta -> mean((x - zeta)^+) / (m - zeta) over [-L, m - eps).

    Golden-section search finds the basin; the empirical objective is a ratio
    of affine functions between consecutive sample points, so the minimum sits
    at a sample point or an end of the range and is polished there.
    """
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("need at least one sample")
    if x0 is not None and not m > x0:
        raise ValueError(f"level m={m} must exceed X_0={x0}")
    m = float(m)
    eps = 1e-9 * max(1.0, abs(m)) if eps is None else float(eps)
    big = 10.0 * (float(np.abs(xs).max()) + abs(m) + 1.0)
    lo, hi = -big, m - eps
    suffix = np.concatenate([np.cumsum(xs[::-1])[::-1], [0.0]])

    def obj(z):
        return _call_prices(xs, suffix, z) / (m - z)

    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, abs(m))})
    cand = [lo, hi, float(res.x)]
    inside = xs[(xs >= lo) & (xs <= hi)]
    if inside.size:
        k = int(np.searchsorted(inside, res.x))
        cand.extend(inside[max(0, k - 3) : k + 3].tolist())
        # walk along sample points while the objective keeps decreasing
        vals = {}

        def at(j):
            if j not in vals:
                vals[j] = float(obj(inside[j]))
            return vals[j]

        j = min(max(k, 0), inside.size - 1)
        while j > 0 and at(j - 1) <= at(j):
            j -= 1
        while j + 1 < inside.size and at(j + 1) < at(j):
            j += 1
        cand.append(float(inside[j]))
    cand = np.array(cand)
    vals = obj(cand)
    # ties (a flat stretch of the objective) resolve to the smallest zeta
    tied = vals <= vals.min()
    best = int(np.flatnonzero(tied)[np.argmin(cand[tied])])
    return ZetaOptimum(float(cand[best]), float(vals[best]))


@dataclass(frozen=True)
class Family:
    """Parametric boundary family for :func:`optimize_zeta_vector`.

    ``kind`` is ``"linear"`` (one slope per stage) or ``"floored"`` (one slope
    per stage, common fixed floor level).
    """

    kind: str
    n: int
    floor: float = 1.0
    lower: float = 1e-3
    upper: float = 1.0 - 1e-3

    def build(self, params, x0: float) -> BoundaryVector:
        if self.kind == "linear":
            comps = [Linear(a) for a in params]
        elif self.kind == "floored":
            comps = [FlooredLinear(a, self.floor) for a in params]
        else:
            raise ValueError(f"unknown family {self.kind!r}")
        return BoundaryVector(tuple(comps), x0)


@dataclass(frozen=True)
class VectorOptimum:
    boundary: BoundaryVector
    params: tuple
    value: float
    evaluations: int
    history: tuple = field(default=())


def _project(params) -> np.ndarray:
    """Suffix minima, so slope_1 <= ... <= slope_n."""
    return np.minimum.accumulate(np.asarray(params, dtype=float)[::-1])[::-1]


def optimize_zeta_vector(ens: MonteCarloEnsemble, phi, family: Family, q: QuadratureGrid | None = None,
                         start=None, sweeps: int = 4, tol: float = 1e-6) -> VectorOptimum:
    """Coordinate descent of UB over the family parameters.

    Each coordinate is minimised by bounded scalar search; moving coordinate
    i up drags the later coordinates with it, moving it down is undone by the
    suffix-min projection for the earlier ones.  The result is a local optimum.
    """
    if family.n != ens.n:
        raise ValueError(f"family has n={family.n}, ensemble has n={ens.n}")
    if not 0 < family.lower < family.upper < 1 + 1e-15:
        raise ValueError("family parameter range is infeasible")
    x0 = ens.x0
    evals = [0]
    cache = {}

    def objective(params):
        key = tuple(np.round(params, 15))
        if key not in cache:
            evals[0] += 1
            b = family.build(params, x0)
            rep = ub_functional(ens, b, phi, q, require_integrability=False, max_tail_fraction=None)
            cache[key] = rep.value
        return cache[key]

    p = _project(np.full(family.n, 0.5) if start is None else np.asarray(start, dtype=float))
    p = np.clip(p, family.lower, family.upper)
    best = objective(p)
    history = [best]
    for _ in range(sweeps):
        before = best
        for i in range(family.n):
            def moved(a, i=i):
                trial = p.copy()
                trial[i] = a
                trial[i + 1 :] = np.maximum(trial[i + 1 :], a)
                return _project(trial)

            res = optimize.minimize_scalar(lambda a: objective(moved(a)), bounds=(family.lower, family.upper),
                                           method="bounded", options={"xatol": 1e-7})
            if res.fun < best:
                p = moved(res.x)
                best = objective(p)
        history.append(best)
        if before - best <= tol * max(1.0, abs(best)):
            break
    # collapse redundant stages onto their predecessor when that costs nothing
    for i in range(family.n - 1):
        trial = p.copy()
        trial[i + 1 :] = np.maximum(trial[i + 1 :], trial[i])
        trial[i + 1] = trial[i]
        trial = _project(trial)
        v = objective(trial)
        if v <= best + 1e-12 * max(1.0, abs(best)):
            p, best = trial, v
    return VectorOptimum(family.build(p, x0), tuple(float(a) for a in p), float(best), evals[0], tuple(history))


# --------------------------------------------------------------------------
# flipped-ordering witnesses
# --------------------------------------------------------------------------


class EqualBoundaries(ValueError):
    pass


def _equal_on_grid(b1: BoundaryVector, b2: BoundaryVector) -> bool:
    grid = validation_grid(b1.x0, set(b1.breakpoints()) | set(b2.breakpoints()))
    v1, n1 = b1.values(grid)
    v2, n2 = b2.values(grid)
    if not np.array_equal(n1, n2):
        return False
    return bool(np.allclose(np.where(n1, 0.0, v1), np.where(n2, 0.0, v2), rtol=1e-12, atol=1e-12))


def reconstruct_stopping(zeta: BoundaryVector, eps: float | None = None) -> StoppingBoundaryVector:
    """Stopping boundaries with the same suffix minima as ``zeta``.

    On (X_0, X_0 + eps) component j is lifted by (n - j) * delta * tent(m),
    tent(m) = min(m - X_0, X_0 + eps - m), which orders the boundaries strictly
    in reverse; beyond X_0 + eps they coincide with ``zeta``.
    """
    x0 = zeta.x0
    n = zeta.n
    eps = 0.05 * abs(x0) if eps is None else float(eps)
    if not eps > 0:
        raise ValueError("eps must be positive")
    for c in zeta.components:
        if isinstance(c, FlooredLinear) and c.floor > x0:
            raise ValueError("reconstruction needs boundaries that are real-valued above X_0")
    near = x0 + eps * np.linspace(1e-6, 1.0, 257)[:-1]
    vals, below = zeta.values(near)
    if not np.allclose(vals, vals[0], rtol=0, atol=1e-12):
        raise ValueError("zeta components must coincide on (X_0, X_0 + eps)")
    # slopes and gaps on the bump region decide how much lift is allowed
    mid = x0 + 0.5 * eps
    knots = sorted({x0, mid, x0 + eps} | {p for c in zeta.components for p in c.breakpoints()})
    top = max(knots[-1], x0 + eps) + max(1.0, eps)
    knots.append(top)
    knots = np.array(knots)
    base = zeta.values(knots)[0]
    seg_slopes = np.diff(base, axis=1) / np.diff(knots)
    in_bump = knots[:-1] < x0 + eps
    min_slope = float(seg_slopes[:, in_bump].min())
    gap = float((near - vals[0]).min())
    if min_slope <= 0:
        raise ValueError("zeta must be strictly increasing near X_0")
    spread = max(n - 1, 1)
    delta = 0.5 * min(min_slope, gap / eps) / spread
    tent = np.clip(np.minimum(knots - x0, x0 + eps - knots), 0.0, None)
    comps = []
    for j in range(1, n + 1):
        lifted = base[j - 1] + (n - j) * delta * tent
        comps.append(PiecewiseLinear(tuple(zip(knots.tolist(), lifted.tolist()))))
    return StoppingBoundaryVector(tuple(comps), x0)


@dataclass(frozen=True)
class LevelInterval:
    lo: float
    hi: float
    min_margin: float


@dataclass(frozen=True)
class OrderingReport:
    """UB per level for one ensemble under its own and the other boundary.

    ``margin_stderr`` is the standard error of the per-path difference of the
    two lambda sums; both estimates use the same paths, so this is the
    combined standard error of the margin.
    """

    levels: np.ndarray
    ub_own: np.ndarray
    ub_own_stderr: np.ndarray
    ub_other: np.ndarray
    ub_other_stderr: np.ndarray
    margin_stderr: np.ndarray
    empirical: np.ndarray
    empirical_stderr: np.ndarray
    interval: LevelInterval | None

    @property
    def margin(self) -> np.ndarray:
        return self.ub_other - self.ub_own


@dataclass(frozen=True)
class ComparisonResult:
    first: OrderingReport
    second: OrderingReport
    conclusive: bool
    paths: int


def _level_sums(ens, b: BoundaryVector, m: float) -> np.ndarray:
    z, below = b.values(np.array([float(m)]))
    return lambda_sum_array(ens.x, float(m), z[:, 0], below[:, 0])


def _scan(ens, own: BoundaryVector, other: BoundaryVector, levels) -> OrderingReport:
    rows = []
    for m in levels:
        a = _level_sums(ens, own, m)
        b = _level_sums(ens, other, m)
        hit = (ens.s[:, -1] >= m).astype(float)
        rows.append((a.mean(), stderr(a), b.mean(), stderr(b), stderr(b - a), hit.mean(), stderr(hit)))
    a = np.array(rows)
    margin = a[:, 2] - a[:, 0]
    excess = margin - 3.0 * a[:, 4]
    good = excess > 0
    interval = None
    best_len, start = 0, None
    for k, g in enumerate(np.append(good, False)):
        if g and start is None:
            start = k
        elif not g and start is not None:
            if k - start > best_len:
                best_len = k - start
                interval = LevelInterval(float(levels[start]), float(levels[k - 1]), float(excess[start:k].min()))
            start = None
    return OrderingReport(np.asarray(levels), *(a[:, j] for j in range(7)), interval)


def compare_orderings(zeta1: BoundaryVector, zeta2: BoundaryVector, paths: int = 100_000, seed: int = 0,
                      levels=None, eps: float | None = None) -> ComparisonResult:
    """Build X^k from the stopping boundaries behind zeta^k and scan indicator
    levels for an interval where zeta^k gives the strictly smaller bound on X^k.
    """
    if zeta1.n != zeta2.n or zeta1.x0 != zeta2.x0:
        raise ValueError("boundary vectors must share n and X_0")
    if _equal_on_grid(zeta1, zeta2):
        raise EqualBoundaries("the two boundary vectors coincide on the validation grid")
    x0 = zeta1.x0
    if levels is None:
        levels = np.geomspace(x0 * (1 + 1e-3), 4.0 * x0, 256) if x0 > 0 else x0 + np.geomspace(1e-3, 4.0, 256)
    levels = np.asarray(levels, dtype=float)
    xi1 = reconstruct_stopping(zeta1, eps)
    xi2 = reconstruct_stopping(zeta2, eps)
    ens1 = simulate_exact(xi1, x0, paths, seed)
    ens2 = simulate_exact(xi2, x0, paths, seed + 1)
    r1 = _scan(ens1, zeta1, zeta2, levels)
    r2 = _scan(ens2, zeta2, zeta1, levels)
    return ComparisonResult(r1, r2, r1.interval is not None and r2.interval is not None, paths)
