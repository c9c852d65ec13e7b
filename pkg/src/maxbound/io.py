"""Text formats: ensemble files, bound tables and the boundary/payoff syntax.

Every float is written with ``%.17g`` so that a read-back is bit-exact.
"""

from __future__ import annotations

import csv
import io
import re

import numpy as np

from .core import (
    FlooredLinear,
    Identity,
    IndicatorThreshold,
    Linear,
    MonteCarloEnsemble,
    PiecewiseLinear,
    Power,
    Tabulated,
    TimeGrid,
)
from .streams import GENERATOR_ID

HEADER_RE = re.compile(r"^# maxbound-ensemble v1 seed=(\d+) n=(\d+) x0=(\S+)$")
BOUND_COLUMNS = ("m", "ub", "ub_stderr", "empirical", "empirical_stderr", "truncation_tail")


class FormatError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------


def dump_ensemble(ens: MonteCarloEnsemble) -> str:
    n = ens.n
    out = io.StringIO()
    out.write(f"# maxbound-ensemble v1 seed={int(ens.seed)} n={n} x0={fmt(ens.x0)}\n")
    cols = [f"x_{i}" for i in range(n + 1)] + [f"s_{i}" for i in range(n + 1)]
    out.write(",".join(cols) + "\n")
    data = np.hstack([ens.x, ens.s])
    for row in data:
        out.write(",".join("%.17g" % v for v in row))
        out.write("\n")
    return out.getvalue()


def write_ensemble(path: str, ens: MonteCarloEnsemble) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_ensemble(ens))


def read_ensemble(path: str) -> MonteCarloEnsemble:
    with open(path, encoding="utf-8") as f:
        head = f.readline().rstrip("\n")
        m = HEADER_RE.match(head)
        if not m:
            raise FormatError(f"{path}: not a maxbound ensemble file (bad header)")
        seed, n, x0 = int(m.group(1)), int(m.group(2)), float(m.group(3))
        cols = f.readline().rstrip("\n").split(",")
        expect = [f"x_{i}" for i in range(n + 1)] + [f"s_{i}" for i in range(n + 1)]
        if cols != expect:
            raise FormatError(f"{path}: column header does not match n={n}")
        try:
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if data.shape[0] == 0 or data.shape[1] != 2 * (n + 1):
        raise FormatError(f"{path}: expected {2 * (n + 1)} columns and at least one row")
    x, s = data[:, : n + 1], data[:, n + 1 :]
    if not np.all(x[:, 0] == x0):
        raise FormatError(f"{path}: x_0 column disagrees with header x0={x0}")
    return MonteCarloEnsemble(TimeGrid.uniform(n), x, s, seed, GENERATOR_ID)


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------


def dump_table(columns, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return out.getvalue()


def read_table(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# --------------------------------------------------------------------------
# boundary and payoff syntax
# --------------------------------------------------------------------------


def _floats(parts, what):
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise FormatError(f"bad number in {what}") from None


def _pairs(body: str, what: str):
    items = [t for t in body.split(",") if t]
    pts = []
    for it in items:
        a = it.split(":")
        if len(a) != 2:
            raise FormatError(f"{what}: expected m:value pairs, got {it!r}")
        pts.append(tuple(_floats(a, what)))
    if not pts:
        raise FormatError(f"{what}: no breakpoints")
    return tuple(pts)


def parse_boundary(text: str):
    """``linear:<a>``, ``floored:<a>:<c>`` or ``pwl:<m:v,m:v,...>``."""
    kind, _, body = text.partition(":")
    kind = kind.strip().lower()
    if kind == "linear":
        (a,) = _floats([body], text)
        return Linear(a)
    if kind == "floored":
        parts = body.split(":")
        if len(parts) != 2:
            raise FormatError(f"floored boundary needs floored:<alpha>:<floor>, got {text!r}")
        a, c = _floats(parts, text)
        return FlooredLinear(a, c)
    if kind == "pwl":
        return PiecewiseLinear(_pairs(body, text))
    raise FormatError(f"unknown boundary kind in {text!r}")


def parse_phi(text: str):
    """``power:<p>``, ``identity``, ``indicator:<m0>`` or ``tab:<m:v,...>``."""
    kind, _, body = text.partition(":")
    kind = kind.strip().lower()
    if kind == "power":
        (p,) = _floats([body], text)
        return Power(p)
    if kind in ("identity", "id"):
        return Identity()
    if kind == "indicator":
        (m0,) = _floats([body], text)
        return IndicatorThreshold(m0)
    if kind == "tab":
        return Tabulated(_pairs(body, text))
    raise FormatError(f"unknown payoff kind in {text!r}")


def parse_scan(text: str):
    """``<min>:<max>:<count>`` geometric scan of levels."""
    parts = text.split(":")
    if len(parts) != 3:
        raise FormatError(f"scan needs min:max:count, got {text!r}")
    lo, hi = _floats(parts[:2], text)
    try:
        count = int(parts[2])
    except ValueError:
        raise FormatError(f"bad count in {text!r}") from None
    if not (count >= 1 and hi > lo):
        raise FormatError(f"scan range {text!r} is empty")
    if lo > 0:
        return np.geomspace(lo, hi, count)
    return np.linspace(lo, hi, count)
