"""Doob-type maximal inequalities: classical constants, their UB refinements,
the p in (0, 1) fixed-point bound and the improved L log L bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .bounds import QuadratureGrid, empirical_max_functional, ub_functional
from .core import BoundaryVector, BoundReport, FlooredLinear, Identity, Linear, MonteCarloEnsemble, Power, stderr
from .embedding import extremal_moments, extremal_xlogx

E = math.e
ROOT_XTOL = 1e-14
ENDPOINT_TOL = 1e-12
SCAN_POINTS = 1024


class MomentError(ValueError):
    pass


class NoRootError(RuntimeError):
    pass


def xlogx(x):
    """x log x with 0 log 0 = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * np.log(safe), 0.0)


@dataclass(frozen=True)
class MomentSummary:
    """Normalised moments of X_T: m1 = E[X_T]/X0, mp = E[X_T^p]/X0^p,
    ll = E[(X_T/X0) log(X_T/X0)].

    Sample-based summaries keep the normalised terminal values so that bound
    uncertainty can be propagated by first-order sensitivity.
    """

    x0: float
    p: float
    m1: float
    mp: float
    ll: float
    provenance: str = "analytic"
    m1_stderr: float = 0.0
    mp_stderr: float = 0.0
    ll_stderr: float = 0.0
    samples: np.ndarray | None = None

    def __post_init__(self):
        if not self.x0 > 0:
            raise MomentError("X_0 must be positive")
        slack1 = 3.0 * self.m1_stderr + 1e-12
        if self.m1 < 1.0 - slack1:
            raise MomentError(f"m1={self.m1:.12g} < 1 contradicts the submartingale property")
        if self.p < 1:
            slackp = 3.0 * (self.mp_stderr + self.p * self.m1_stderr) + 1e-12
            if self.mp > max(self.m1, 0.0) ** self.p + slackp:
                raise MomentError(f"m_p={self.mp:.12g} > m1^p={self.m1 ** self.p:.12g} contradicts Jensen")

    @classmethod
    def extremal(cls, alpha: float, x0: float, p: float) -> "MomentSummary":
        """Closed-form moments of the terminal value of the Linear(alpha) extremal martingale."""
        mom = extremal_moments(alpha, x0, p)
        return cls(x0, p, mom.terminal_mean / x0, mom.terminal_moment / x0**p, extremal_xlogx(alpha))

    @classmethod
    def constant(cls, x0: float, p: float) -> "MomentSummary":
        return cls(x0, p, 1.0, 1.0, 0.0)

    @classmethod
    def from_samples(cls, terminal, x0: float, p: float) -> "MomentSummary":
        y = np.asarray(terminal, dtype=float) / x0
        if np.any(y < 0):
            raise MomentError("moments need a non-negative terminal value")
        yp = y**p
        ent = xlogx(y)
        return cls(x0, p, float(y.mean()), float(yp.mean()), float(ent.mean()), "sample",
                   stderr(y), stderr(yp), stderr(ent), y)

    @classmethod
    def from_ensemble(cls, ens: MonteCarloEnsemble, p: float) -> "MomentSummary":
        return cls.from_samples(ens.x[:, -1], ens.x0, p)

    def with_moments(self, m1=None, mp=None, ll=None) -> "MomentSummary":
        # the stderrs travel along so a perturbed sample summary keeps its allowance
        return MomentSummary(self.x0, self.p, self.m1 if m1 is None else m1, self.mp if mp is None else mp,
                             self.ll if ll is None else ll, self.provenance,
                             self.m1_stderr, self.mp_stderr, self.ll_stderr)


# --------------------------------------------------------------------------
# p > 1
# --------------------------------------------------------------------------


def doob_lp_classical(p: float, e_xtp: float, x0: float) -> float:
    """(p/(p-1))^p E[X_T^p] - p/(p-1) X0^p."""
    if not p > 1:
        raise ValueError("the L^p bound needs p > 1")
    q = p / (p - 1.0)
    return q**p * e_xtp - q * x0**p


def doob_lp_refined(ens: MonteCarloEnsemble, p: float, q: QuadratureGrid | None = None) -> BoundReport:
    """UB with phi = m^p and every zeta_i = (p-1)/p m."""
    if not p > 1:
        raise ValueError("the L^p bound needs p > 1")
    b = BoundaryVector.repeated(Linear((p - 1.0) / p), ens.n, ens.x0)
    rep = ub_functional(ens, b, Power(p), q, require_integrability=False, max_tail_fraction=None)
    note = "zeta slope (p-1)/p sits on the boundary of the integrability condition"
    return BoundReport(rep.value, rep.stderr, rep.m_grid, rep.truncation_tail, rep.path_count,
                       rep.notes + (note,), rep.quadrature_error)


def lp_gap_leading_term(p: float, eps: float, x0: float = 1.0) -> float:
    """{(p/(p-1))^p alpha^p - 1} (p+eps)/eps X0^p for alpha = (p+eps-1)/(p+eps)."""
    alpha = (p + eps - 1.0) / (p + eps)
    return ((p / (p - 1.0)) ** p * alpha**p - 1.0) * (p + eps) / eps * x0**p


def lp_sharpness_gap(p: float, eps: float, x0: float = 1.0) -> float:
    """Classical L^p bound minus E[max^p] on the extremal martingale with
    alpha = (p+eps-1)/(p+eps)."""
    if not p > 1 or not eps > 0:
        raise ValueError("need p > 1 and eps > 0")
    return lp_gap_leading_term(p, eps, x0) - p / (p - 1.0) * x0**p


# --------------------------------------------------------------------------
# L^1
# --------------------------------------------------------------------------


def entropy_v(x: float) -> float:
    return x - x * math.log(x)


def doob_l1_classical(e_xlogx: float, x0: float) -> float:
    """e/(e-1) (E[X_T log X_T] + V(max(1, X0))) with V(x) = x - x log x."""
    return E / (E - 1.0) * (e_xlogx + entropy_v(max(1.0, x0)))


def doob_l1_refined(ens: MonteCarloEnsemble, q: QuadratureGrid | None = None) -> BoundReport:
    """UB with phi = id and every zeta_i = m/e for m >= 1, unbounded below otherwise."""
    b = BoundaryVector.repeated(FlooredLinear(1.0 / E, 1.0), ens.n, ens.x0)
    return ub_functional(ens, b, Identity(), q)


def expected_xlogx(ms: MomentSummary) -> float:
    """E[X_T log X_T] recovered from the normalised moments."""
    return ms.x0 * (ms.ll + ms.m1 * math.log(ms.x0))


# --------------------------------------------------------------------------
# p in (0, 1)
# --------------------------------------------------------------------------


def h_function(alpha, p: float, ms: MomentSummary):
    a = np.asarray(alpha, dtype=float)
    return 1.0 - p + p * ms.m1 - (1.0 - p + p * a) * ms.mp * a ** (-p)


def alpha_hat(p: float, ms: MomentSummary) -> float:
    """Unique root of h on (0, 1]; h is increasing with h(0+) = -inf."""
    if not 0 < p < 1:
        raise ValueError("alpha_hat needs p in (0, 1)")
    h1 = float(h_function(1.0, p, ms))
    if abs(h1) <= ENDPOINT_TOL:
        return 1.0
    if h1 < 0:
        raise MomentError(f"h(1)={h1:.3g} < 0: the moments violate m1 >= 1 or m_p <= m1^p")
    lo = 0.5
    while h_function(lo, p, ms) >= 0:
        lo *= 0.5
        if lo < 1e-300:
            raise NoRootError("could not bracket the root of h from below")
    return float(optimize.bisect(lambda a: float(h_function(a, p, ms)), lo, 1.0, xtol=ROOT_XTOL, maxiter=500))


@dataclass(frozen=True)
class SmallPBound:
    sharp: float
    relaxed: float
    alpha_hat: float
    identity_residual: float
    sharp_stderr: float = 0.0

    @property
    def strict(self) -> bool:
        return self.sharp < self.relaxed


def _small_p_sharp(p: float, ms: MomentSummary) -> tuple[float, float]:
    a = alpha_hat(p, ms)
    return ms.x0**p * ms.mp * a ** (-p), a


def doob_small_p(p: float, ms: MomentSummary) -> SmallPBound:
    """Sharp bound X0^p m_p alpha_hat^-p on E[max^p] and its relaxed form."""
    sharp, a = _small_p_sharp(p, ms)
    x0 = ms.x0
    mean = ms.m1 * x0
    alt = x0**p / (1.0 - p + p * a) + x0 ** (p - 1.0) * p / (1.0 - p + p * a) * (mean - x0)
    relaxed = x0**p / (1.0 - p) + x0 ** (p - 1.0) * p / (1.0 - p) * (mean - x0)
    se = 0.0
    if ms.samples is not None:
        se = _sensitivity_stderr(
            lambda m1, mp: _small_p_sharp(p, ms.with_moments(m1=m1, mp=mp))[0],
            ms, (ms.samples, ms.samples**p), (ms.m1, ms.mp),
        )
    return SmallPBound(sharp, relaxed, a, abs(sharp - alt), se)


def _sensitivity_stderr(fn, ms: MomentSummary, columns, point) -> float:
    """Delta-method standard error of fn(sample means)."""
    grad = []
    for k, v in enumerate(point):
        step = 1e-6 * max(1.0, abs(v))
        up = list(point)
        dn = list(point)
        up[k] = v + step
        dn[k] = v - step
        try:
            grad.append((fn(*up) - fn(*dn)) / (2 * step))
        except (MomentError, NoRootError):
            grad.append((fn(*up) - fn(*point)) / step)
    cols = np.vstack(columns)
    cov = np.atleast_2d(np.cov(cols)) / cols.shape[1]
    g = np.array(grad)
    return float(math.sqrt(max(g @ cov @ g, 0.0)))


# --------------------------------------------------------------------------
# improved L^1
# --------------------------------------------------------------------------


def g_function(alpha, ms: MomentSummary):
    a = np.asarray(alpha, dtype=float)
    return a * (1.0 + ms.ll) - ms.m1 * (1.0 + a * np.log(a))


@dataclass(frozen=True)
class L1Root:
    alpha: float
    multiple: bool
    brackets: tuple


def alpha_hat_l1(ms: MomentSummary) -> L1Root:
    """Root of g(alpha) = alpha (1 + ll) - m1 (1 + alpha log alpha) on (0, 1].

    Sign changes are located on a geometric scan and each is refined by
    bisection; the smallest root is returned and ``multiple`` flags more than
    one.
    """
    if abs(float(g_function(1.0, ms))) <= ENDPOINT_TOL:
        return L1Root(1.0, False, ((1.0, 1.0),))
    grid = np.geomspace(1e-12, 1.0, SCAN_POINTS)
    vals = g_function(grid, ms)
    sign = np.sign(vals)
    brackets = []
    for k in range(grid.size - 1):
        if sign[k] == 0:
            brackets.append((grid[k], grid[k]))
        elif sign[k] * sign[k + 1] < 0:
            brackets.append((grid[k], grid[k + 1]))
    if not brackets:
        raise NoRootError(
            f"g has no sign change on (0, 1]: g({grid[0]:.1e})={vals[0]:.6g}, g(1)={vals[-1]:.6g}"
        )
    roots = []
    for lo, hi in brackets:
        if lo == hi:
            roots.append(lo)
        else:
            roots.append(optimize.bisect(lambda a: float(g_function(a, ms)), lo, hi, xtol=ROOT_XTOL, maxiter=500))
    return L1Root(float(min(roots)), len(roots) > 1, tuple(brackets))


@dataclass(frozen=True)
class ImprovedL1:
    bound: float
    alpha_hat: float
    classical: float
    multiple: bool

    @property
    def dominated(self) -> bool:
        """bound <= classical, guaranteed for X0 >= 1."""
        return self.bound <= self.classical * (1 + 1e-12)


def improved_l1(ms: MomentSummary) -> ImprovedL1:
    root = alpha_hat_l1(ms)
    bound = ms.x0 * ms.m1 / root.alpha
    classical = doob_l1_classical(expected_xlogx(ms), ms.x0)
    return ImprovedL1(bound, root.alpha, classical, root.multiple)


# --------------------------------------------------------------------------
# strictness conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Flag:
    holds: bool
    estimate: float
    stderr: float

    @property
    def z_score(self) -> float:
        if self.stderr > 0:
            return self.estimate / self.stderr
        return math.copysign(math.inf, self.estimate) if self.estimate else 0.0


def _probability_flag(event: np.ndarray) -> Flag:
    est = float(event.mean())
    return Flag(bool(event.any()), est, stderr(event.astype(float)))


def _mean_excess_flag(values: np.ndarray, level: float) -> Flag:
    est = float(values.mean()) - level
    se = stderr(values)
    return Flag(bool(est > 3.0 * se), est, se)


def strictness_diagnostics(ens: MonteCarloEnsemble, mode: str = "lp", p: float = 2.0) -> dict:
    """Empirical check of the conditions under which the classical bound is strict.

    ``mode="lp"`` reports ``below_threshold`` (P(X_T < (p-1)/p X0) > 0) and
    ``strict_submartingale`` (E[X_T] > X0 at 3 SE).  ``mode="l1"`` reports
    ``high_max_below_threshold`` (max >= 1 and X_T < X0/e),
    ``high_max_mean_excess`` (max >= 1 and E[X_T] > max(X0, 1) at 3 SE) and
    ``low_max`` (P(max < 1) > 0).  A probability flag holds as soon as one
    sample realises the event; its estimate and standard error give the
    confidence.
    """
    x0 = ens.x0
    xt = ens.x[:, -1]
    top = ens.s[:, -1]
    if mode == "lp":
        return {
            "below_threshold": _probability_flag(xt < (p - 1.0) / p * x0),
            "strict_submartingale": _mean_excess_flag(xt, x0),
        }
    if mode == "l1":
        high = top >= 1.0
        mean_flag = _mean_excess_flag(xt, max(x0, 1.0))
        return {
            "high_max_below_threshold": _probability_flag(high & (xt < x0 / E)),
            "high_max_mean_excess": Flag(mean_flag.holds and bool(high.all()), mean_flag.estimate, mean_flag.stderr),
            "low_max": _probability_flag(top < 1.0),
        }
    raise ValueError(f"unknown mode {mode!r}")


def lp_table(ens: MonteCarloEnsemble, p: float, q: QuadratureGrid | None = None) -> dict:
    """Empirical E[max^p], refined and classical L^p values from one ensemble."""
    emp, emp_se = empirical_max_functional(ens, Power(p))
    ref = doob_lp_refined(ens, p, q)
    xt = ens.x[:, -1]
    cl = doob_lp_classical(p, float(np.mean(xt**p)), ens.x0)
    q_ = p / (p - 1.0)
    cl_se = q_**p * stderr(xt**p)
    return {"empirical": (emp, emp_se), "refined": (ref.value, ref.stderr), "classical": (cl, cl_se),
            "quadrature_error": ref.quadrature_error}


def l1_table(ens: MonteCarloEnsemble, q: QuadratureGrid | None = None) -> dict:
    emp, emp_se = empirical_max_functional(ens, Identity())
    ref = doob_l1_refined(ens, q)
    ent = xlogx(ens.x[:, -1])
    cl = doob_l1_classical(float(ent.mean()), ens.x0)
    cl_se = E / (E - 1.0) * stderr(ent)
    return {"empirical": (emp, emp_se), "refined": (ref.value, ref.stderr), "classical": (cl, cl_se),
            "quadrature_error": ref.quadrature_error}
