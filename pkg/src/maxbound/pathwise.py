"""The pathwise functional Upsilon_n and the marginal payoffs lambda_i.

All vectorised routines take boundary values at a single level ``m`` as a
pair ``(z, below)`` of length-n arrays, ``below`` marking the unbounded-below
sentinel.  Sentinel limits: (x - z)^+ / (m - z) -> 1, (m - x) / (m - z) -> 0,
(x' - x) / (m - z) -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    UNBOUNDED_BELOW,
    BoundaryVector,
    MarginalSnapshot,
    MonteCarloEnsemble,
    StoppingBoundaryVector,
)

RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class UpsilonBreakdown:
    total: float
    first_sum_terms: tuple
    second_sum_terms: tuple
    indicator: int


def split_extended(zvals) -> tuple[np.ndarray, np.ndarray]:
    """Turn a list of extended reals into ``(values, below)`` arrays."""
    below = np.array([z is UNBOUNDED_BELOW for z in zvals], dtype=bool)
    vals = np.array([np.nan if b else float(z) for z, b in zip(zvals, below)], dtype=float)
    return vals, below


def _check_levels(z: np.ndarray, below: np.ndarray, m: float) -> None:
    n = len(z)
    if n == 0:
        raise ValueError("need at least one boundary value")
    # sentinels may only form a leading block
    if np.any(np.diff(below.astype(int)) > 0):
        raise ValueError("unbounded-below boundary values must form a leading block")
    real = z[~below]
    if np.any(np.diff(real) < 0):
        raise ValueError("boundary values must satisfy zeta_1 <= ... <= zeta_n")
    if not below[-1] and not z[-1] < m:
        raise ValueError("boundary values must satisfy zeta_n < m")


def _ratio(x, z, zb, m):
    """(x - z)^+ / (m - z), with the sentinel limit 1."""
    if zb:
        return np.ones_like(x)
    return np.maximum(x - z, 0.0) / (m - z)


def upsilon_array(x: np.ndarray, s: np.ndarray, m: float, z: np.ndarray, below: np.ndarray):
    """Vectorised Upsilon_n over the rows of ``x``/``s``.

    Returns ``(first, second)`` sums, each of shape ``(paths,)``.
    """
    n = x.shape[1] - 1
    first = np.zeros(x.shape[0])
    for i in range(1, n + 1):
        zi, bi = z[i - 1], below[i - 1]
        first += _ratio(x[:, i], zi, bi, m)
        if not bi:
            crossed = (s[:, i - 1] < m) & (m <= s[:, i])
            first += np.where(crossed, (m - x[:, i]) / (m - zi), 0.0)
    second = np.zeros(x.shape[0])
    for i in range(1, n):
        zn, bn = z[i], below[i]
        second += _ratio(x[:, i], zn, bn, m)
        if not bn:
            active = (m <= s[:, i]) & (zn <= x[:, i])
            second += np.where(active, (x[:, i + 1] - x[:, i]) / (m - zn), 0.0)
    return first, second


def upsilon(snap: MarginalSnapshot, m: float, zvals) -> UpsilonBreakdown:
    """Exact value of Upsilon_n(omega, m, zeta) for one snapshot."""
    if m < snap.x[0]:
        raise ValueError(f"level m={m} lies below the starting value {snap.x[0]}")
    z, below = split_extended(zvals)
    if len(z) != snap.n:
        raise ValueError(f"expected {snap.n} boundary values, got {len(z)}")
    _check_levels(z, below, m)
    x = np.asarray(snap.x, dtype=float)
    s = np.asarray(snap.s, dtype=float)
    n = snap.n
    first_terms = []
    for i in range(1, n + 1):
        zi, bi = z[i - 1], below[i - 1]
        term = float(_ratio(x[i : i + 1], zi, bi, m)[0])
        if not bi and s[i - 1] < m <= s[i]:
            term += (m - x[i]) / (m - zi)
        first_terms.append(term)
    second_terms = []
    for i in range(1, n):
        zn, bn = z[i], below[i]
        term = float(_ratio(x[i : i + 1], zn, bn, m)[0])
        if not bn and m <= s[i] and zn <= x[i]:
            term += (x[i + 1] - x[i]) / (m - zn)
        second_terms.append(term)
    total = sum(first_terms) - sum(second_terms)
    return UpsilonBreakdown(total, tuple(first_terms), tuple(second_terms), int(s[n] >= m))


def lambda_i(x, m: float, zvals, i: int):
    """(x - zeta_i)^+/(m - zeta_i) - 1{i<n} (x - zeta_{i+1})^+/(m - zeta_{i+1}).

    ``i`` is 1-based; ``x`` may be a scalar or an array.
    """
    z, below = split_extended(zvals)
    n = len(z)
    if not 1 <= i <= n:
        raise IndexError(f"index {i} outside 1..{n}")
    _check_levels(z, below, m)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    out = _ratio(xa, z[i - 1], below[i - 1], m)
    if i < n:
        out = out - _ratio(xa, z[i], below[i], m)
    return float(out[0]) if np.ndim(x) == 0 else out


def lambda_sum_array(x: np.ndarray, m: float, z: np.ndarray, below: np.ndarray) -> np.ndarray:
    """Per-path sum_i lambda_i(x[:, i]) for an ensemble value array."""
    n = x.shape[1] - 1
    total = np.zeros(x.shape[0])
    for i in range(1, n + 1):
        total += _ratio(x[:, i], z[i - 1], below[i - 1], m)
        if i < n:
            total -= _ratio(x[:, i], z[i], below[i], m)
    return total


def zeta_from_xi(xi: StoppingBoundaryVector, m: float) -> list:
    """Suffix minima zeta_i(m) = min_{j >= i} xi_j(m)."""
    vals = [c(m) for c in xi.components]
    out = []
    cur = None
    for v in reversed(vals):
        if cur is None:
            cur = v
        elif v is UNBOUNDED_BELOW or (cur is not UNBOUNDED_BELOW and v < cur):
            cur = v
        out.append(cur)
    return out[::-1]


def zeta_from_xi_array(xi: StoppingBoundaryVector, m: np.ndarray):
    """Vectorised suffix minima: ``(values, below)`` of shape ``(n,) + m.shape``."""
    vals, below = xi.values(m)
    vals = vals.copy()
    below = below.copy()
    n = vals.shape[0]
    for i in range(n - 2, -1, -1):
        nb = below[i + 1]
        below[i] = below[i] | nb
        take = ~below[i] & ~nb & (vals[i + 1] < vals[i])
        vals[i] = np.where(take, vals[i + 1], vals[i])
        vals[i] = np.where(below[i], np.nan, vals[i])
    return vals, below


@dataclass(frozen=True)
class VerifyReport:
    violations: int
    worst_residual: float
    max_abs_residual: float
    pairs: int


def _boundary_at(b, m: float):
    if isinstance(b, StoppingBoundaryVector):
        z, below = zeta_from_xi_array(b, np.array([m]))
    else:
        z, below = b.values(np.array([m]))
    return z[:, 0], below[:, 0]


def verify_inequality(ens: MonteCarloEnsemble, b, m_grid) -> VerifyReport:
    """Evaluate 1{s_n >= m} - Upsilon_n on every (path, level) pair.

    ``b`` is a :class:`BoundaryVector`, or a :class:`StoppingBoundaryVector`
    whose suffix minima are used (the equality setting).  Levels where the
    ordering ``zeta_n(m) < m`` fails, or not above X_0, are skipped: at
    m = X_0 the crossing indicator 1{s_0 < m} is off while 1{s_n >= m} is on,
    so a path that starts by dipping would register a spurious violation.
    """
    if b.n != ens.n:
        raise ValueError(f"boundary has {b.n} components, ensemble has n={ens.n}")
    worst = -np.inf
    worst_abs = 0.0
    violations = 0
    pairs = 0
    for m in np.asarray(m_grid, dtype=float):
        if not m > ens.x0:
            continue
        z, below = _boundary_at(b, m)
        if not below[-1] and not z[-1] < m:
            continue
        first, second = upsilon_array(ens.x, ens.s, m, z, below)
        resid = (ens.s[:, -1] >= m).astype(float) - (first - second)
        violations += int(np.count_nonzero(resid > RESIDUAL_TOL))
        worst = max(worst, float(resid.max()))
        worst_abs = max(worst_abs, float(np.abs(resid).max()))
        pairs += resid.size
    return VerifyReport(violations, float(worst), worst_abs, pairs)
