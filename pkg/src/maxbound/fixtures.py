"""Reference (sub)martingale ensembles used by the verification harnesses.

* ``bridge_submartingale`` - drifted Brownian motion on the grid with the
  running maximum between grid times drawn exactly from the Brownian-bridge
  maximum law.
* ``jump_submartingale`` - the same plus compound-Poisson jumps (a cadlag
  path); jumps are compensated so only ``drift`` contributes to the trend.
* small closed-form ensembles: constant, two-point, delayed AY start, and a
  terminal upward shift that turns a martingale into a strict submartingale.
"""

from __future__ import annotations

import math

import numpy as np

from . import streams
from .core import Linear, MonteCarloEnsemble, StoppingBoundaryVector, TimeGrid
from .embedding import simulate_exact


def _bridge_max(a, b, var, u):
    """Maximum of a Brownian bridge from a to b with total variance ``var``;
    ``u`` uniform on (0, 1]."""
    return 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2.0 * var * np.log(u)))


def bridge_submartingale(grid: TimeGrid, x0: float, paths: int, seed: int,
                         drift: float = 0.0, sigma: float = 1.0) -> MonteCarloEnsemble:
    if drift < 0:
        raise ValueError("a submartingale needs drift >= 0")
    dts = np.diff(np.asarray(grid.times))
    n = grid.n

    def one(g, _):
        return g.standard_normal(n), 1.0 - g.random(n)

    draws = streams.per_path(one, seed, paths, streams.TAG_BRIDGE)
    z = np.array([d[0] for d in draws]).reshape(paths, n)
    u = np.array([d[1] for d in draws]).reshape(paths, n)
    x = np.empty((paths, n + 1))
    s = np.empty((paths, n + 1))
    x[:, 0] = s[:, 0] = x0
    for i in range(n):
        var = sigma * sigma * dts[i]
        x[:, i + 1] = x[:, i] + drift * dts[i] + math.sqrt(var) * z[:, i]
        if var > 0:
            top = _bridge_max(x[:, i], x[:, i + 1], var, u[:, i])
        else:
            top = np.maximum(x[:, i], x[:, i + 1])
        s[:, i + 1] = np.maximum(s[:, i], top)
    return MonteCarloEnsemble(grid, x, s, seed, streams.GENERATOR_ID)


def jump_submartingale(grid: TimeGrid, x0: float, paths: int, seed: int, drift: float = 0.0,
                       sigma: float = 1.0, rate: float = 1.0, jumps=(-0.1, 0.1), probs=(0.5, 0.5),
                       substeps: int = 16) -> MonteCarloEnsemble:
    """Brownian motion plus compensated compound-Poisson jumps.

    Each grid interval is split into ``substeps`` pieces; the continuous part
    of a piece has an exact bridge maximum and the jumps of the piece are
    applied at its right end, so ``s`` is the running maximum of a genuine
    cadlag path.
    """
    if drift < 0:
        raise ValueError("a submartingale needs drift >= 0")
    jumps = np.asarray(jumps, dtype=float)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    mean_jump = float(jumps @ probs)
    dts = np.repeat(np.diff(np.asarray(grid.times)) / substeps, substeps)
    k = dts.size
    n = grid.n

    def one(g, _):
        z = g.standard_normal(k)
        u = 1.0 - g.random(k)
        counts = g.poisson(rate * dts)
        picks = g.choice(jumps, size=int(counts.sum()), p=probs)
        owner = np.repeat(np.arange(k), counts)
        jsum = np.bincount(owner, weights=picks, minlength=k)
        return z, u, jsum

    draws = streams.per_path(one, seed, paths, streams.TAG_JUMP)
    z = np.array([d[0] for d in draws])
    u = np.array([d[1] for d in draws])
    jsum = np.array([d[2] for d in draws])
    cur = np.full(paths, float(x0))
    top = cur.copy()
    x = np.empty((paths, n + 1))
    s = np.empty((paths, n + 1))
    x[:, 0] = s[:, 0] = x0
    for j in range(k):
        var = sigma * sigma * dts[j]
        nxt = cur + (drift - rate * mean_jump) * dts[j] + math.sqrt(var) * z[:, j]
        if var > 0:
            top = np.maximum(top, _bridge_max(cur, nxt, var, u[:, j]))
        else:
            top = np.maximum(top, np.maximum(cur, nxt))
        cur = nxt + jsum[:, j]
        top = np.maximum(top, cur)
        if (j + 1) % substeps == 0:
            i = (j + 1) // substeps
            x[:, i] = cur
            s[:, i] = top
    return MonteCarloEnsemble(grid, x, s, seed, streams.GENERATOR_ID)


def constant(x0: float, n: int, paths: int) -> MonteCarloEnsemble:
    x = np.full((paths, n + 1), float(x0))
    return MonteCarloEnsemble(TimeGrid.uniform(n), x, x.copy())


def two_point(x0: float, low: float, high: float, paths: int, seed: int) -> MonteCarloEnsemble:
    """One-period martingale jumping from x0 to ``low`` or ``high``; the path
    maximum is max(x0, X_T)."""
    if not low < x0 < high:
        raise ValueError("need low < x0 < high")
    q = (x0 - low) / (high - low)
    u = streams.uniforms(seed, paths, 1, streams.TAG_FIXTURE)[:, 0]
    xt = np.where(u < q, high, low)
    x = np.column_stack([np.full(paths, float(x0)), xt])
    s = np.column_stack([x[:, 0], np.maximum(x0, xt)])
    return MonteCarloEnsemble(TimeGrid.uniform(1), x, s, seed, streams.GENERATOR_ID)


def delayed_start(x0: float, alpha: float, paths: int, seed: int, restart: float = 1.0) -> MonteCarloEnsemble:
    """Constant at x0 up to T/2, then an AY(alpha) martingale started at
    ``restart`` (an upward jump, so a submartingale when restart >= x0)."""
    if restart < x0:
        raise ValueError("restart level below x0 breaks the submartingale property")
    xi = StoppingBoundaryVector((Linear(alpha),), restart)
    inner = simulate_exact(xi, restart, paths, seed)
    x = np.column_stack([np.full(paths, float(x0)), inner.x])
    s = np.column_stack([np.full(paths, float(x0)), inner.s])
    return MonteCarloEnsemble(TimeGrid((0.0, 0.5, 1.0)), x, s, seed, streams.GENERATOR_ID)


def terminal_shift(ens: MonteCarloEnsemble, shift: float) -> MonteCarloEnsemble:
    """Add a deterministic upward jump ``shift`` at the final time."""
    if shift < 0:
        raise ValueError("shift must be non-negative")
    x = np.array(ens.x)
    s = np.array(ens.s)
    x[:, -1] += shift
    s[:, -1] = np.maximum(s[:, -1], x[:, -1])
    return MonteCarloEnsemble(ens.grid, x, s, ens.seed, ens.generator_id)
