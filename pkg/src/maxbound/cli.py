"""Command-line front end.

    maxbound simulate --boundary linear:0.5 --x0 1 --paths 100000 --seed 42 --out ens.csv
    maxbound bound    --ensemble ens.csv --zeta linear:0.5 --phi power:2
    maxbound bound    --ensemble ens.csv --zeta linear:0.5 --scan 1.01:4:256
    maxbound doob     --ensemble ens.csv --mode lp --p 2
    maxbound compare  --zeta1 linear:0.5 --zeta2 linear:0.6 --n 2
    maxbound optimize --ensemble ens.csv --phi power:2 --family linear
    maxbound verify   --ensemble ens.csv --zeta linear:0.5

Exit codes: 0 ok, 1 property violation or inconclusive comparison,
2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import fixtures
from .bounds import (
    Family,
    QuadratureGrid,
    compare_orderings,
    default_grid,
    empirical_max_functional,
    optimize_zeta_single,
    optimize_zeta_vector,
    ub_at_level,
    ub_functional,
)
from .core import BoundaryVector, IndicatorThreshold, Power, StoppingBoundaryVector, TimeGrid
from .doob import (
    MomentError,
    MomentSummary,
    NoRootError,
    doob_small_p,
    improved_l1,
    l1_table,
    lp_table,
)
from .embedding import StepBudgetExceeded, simulate_exact, simulate_walk
from .io import BOUND_COLUMNS, FormatError, dump_ensemble, dump_table, parse_boundary, parse_phi, parse_scan, read_ensemble
from .pathwise import verify_inequality

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _emit(text: str, out: str) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _stages(specs, n: int | None):
    comps = [parse_boundary(s) for s in specs]
    if n is not None and len(comps) == 1 and n > 1:
        comps = comps * n
    if n is not None and len(comps) != n:
        raise ConfigError(f"got {len(comps)} boundary stages for n={n}")
    return tuple(comps)


def _load(path: str):
    try:
        return read_ensemble(path)
    except FileNotFoundError:
        raise ConfigError(f"ensemble file not found: {path}") from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    sampler = args.sampler
    if sampler in ("exact", "walk"):
        if not args.boundary:
            raise ConfigError("--boundary is required for the embedding samplers")
        xi = StoppingBoundaryVector(_stages(args.boundary, args.n), args.x0)
        if sampler == "exact":
            ens = simulate_exact(xi, args.x0, args.paths, args.seed)
        else:
            ens = simulate_walk(xi, args.x0, args.paths, args.seed, dt=args.dt)
    elif sampler == "bridge":
        ens = fixtures.bridge_submartingale(TimeGrid.uniform(args.n or 1), args.x0, args.paths, args.seed,
                                            args.drift, args.sigma)
    elif sampler == "jump":
        ens = fixtures.jump_submartingale(TimeGrid.uniform(args.n or 1), args.x0, args.paths, args.seed,
                                          args.drift, args.sigma)
    elif sampler == "two-point":
        ens = fixtures.two_point(args.x0, args.low, args.high, args.paths, args.seed)
    else:
        raise ConfigError(f"unknown sampler {sampler!r}")
    _emit(dump_ensemble(ens), args.out)
    return EXIT_OK


def cmd_bound(args) -> int:
    ens = _load(args.ensemble)
    b = BoundaryVector(_stages(args.zeta, ens.n), ens.x0)
    rows = []
    if args.scan:
        for m in parse_scan(args.scan):
            if not m > ens.x0:
                raise ConfigError(f"scan level {m} must exceed X_0={ens.x0}")
            ub, ub_se = ub_at_level(ens, b, m)
            emp, emp_se = empirical_max_functional(ens, IndicatorThreshold(m))
            rows.append((m, ub, ub_se, emp, emp_se, 0.0))
    else:
        if not args.phi:
            raise ConfigError("either --phi or --scan is required")
        phi = parse_phi(args.phi)
        q = None
        if phi.has_density and (args.levels != 512 or args.rule != "geometric"):
            base = default_grid(ens, b, phi)
            maker = QuadratureGrid.geometric if args.rule == "geometric" else QuadratureGrid.uniform
            q = maker(ens.x0, base.m_max, args.levels, b.breakpoints(), base.tail_bound, base.notes)
        rep = ub_functional(ens, b, phi, q, require_integrability=not args.allow_nonintegrable)
        emp, emp_se = empirical_max_functional(ens, phi)
        rows.append(("total", rep.value, rep.stderr, emp, emp_se, rep.truncation_tail))
        for note in rep.notes:
            print(f"note: {note}", file=sys.stderr)
        print(f"quadrature_error={rep.quadrature_error:.3g}", file=sys.stderr)
    _emit(dump_table(BOUND_COLUMNS, rows), args.out)
    return EXIT_OK


def _summary(args, ens):
    if args.alpha is not None:
        return MomentSummary.extremal(args.alpha, args.x0, args.p), None
    if ens is None:
        raise ConfigError("--ensemble or --alpha is required")
    return MomentSummary.from_ensemble(ens, args.p), ens


def cmd_doob(args) -> int:
    ens = _load(args.ensemble) if args.ensemble else None
    mode = args.mode
    if mode in ("lp", "l1"):
        if ens is None:
            raise ConfigError("--ensemble is required for this mode")
        t = lp_table(ens, args.p) if mode == "lp" else l1_table(ens)
        cols = ("empirical", "empirical_stderr", "refined", "refined_stderr", "classical", "classical_stderr",
                "quadrature_error")
        row = (*t["empirical"], *t["refined"], *t["classical"], t["quadrature_error"])
        _emit(dump_table(cols, [row]), args.out)
        return EXIT_OK
    if mode == "small-p":
        ms, ens = _summary(args, ens)
        r = doob_small_p(args.p, ms)
        emp = empirical_max_functional(ens, Power(args.p))[0] if ens is not None else float("nan")
        cols = ("empirical", "sharp", "sharp_stderr", "relaxed", "alpha_hat", "identity_residual")
        _emit(dump_table(cols, [(emp, r.sharp, r.sharp_stderr, r.relaxed, r.alpha_hat, r.identity_residual)]),
              args.out)
        return EXIT_OK
    if mode == "improved-l1":
        args.p = 1.0
        ms, ens = _summary(args, ens)
        r = improved_l1(ms)
        emp = float(ens.s[:, -1].mean()) if ens is not None else float("nan")
        cols = ("empirical", "bound", "classical", "alpha_hat", "multiple_roots")
        _emit(dump_table(cols, [(emp, r.bound, r.classical, r.alpha_hat, r.multiple)]), args.out)
        return EXIT_OK
    raise ConfigError(f"unknown mode {mode!r}")


def cmd_compare(args) -> int:
    z1 = BoundaryVector(_stages([args.zeta1], args.n), args.x0)
    z2 = BoundaryVector(_stages([args.zeta2], args.n), args.x0)
    levels = parse_scan(args.scan) if args.scan else None
    res = compare_orderings(z1, z2, args.paths, args.seed, levels, args.eps)
    cols = ("role", "m", "ub_own", "ub_own_stderr", "ub_other", "ub_other_stderr", "margin_stderr",
            "empirical", "empirical_stderr")
    rows = []
    for role, r in (("1", res.first), ("2", res.second)):
        for k in range(r.levels.size):
            rows.append((role, r.levels[k], r.ub_own[k], r.ub_own_stderr[k], r.ub_other[k], r.ub_other_stderr[k],
                         r.margin_stderr[k], r.empirical[k], r.empirical_stderr[k]))
    _emit(dump_table(cols, rows), args.out)
    for role, r in (("1", res.first), ("2", res.second)):
        iv = r.interval
        if iv is None:
            print(f"X{role}: no level interval resolved at {res.paths} paths", file=sys.stderr)
        else:
            print(f"X{role}: strict ordering on [{iv.lo:.6g}, {iv.hi:.6g}], "
                  f"worst margin over 3 SE {iv.min_margin:.3g}", file=sys.stderr)
    if not res.conclusive:
        print("inconclusive: increase --paths", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_optimize(args) -> int:
    ens = _load(args.ensemble)
    if args.level is not None:
        r = optimize_zeta_single(ens.x[:, -1], args.level, x0=ens.x0)
        _emit(dump_table(("m", "zeta", "value"), [(args.level, r.zeta, r.value)]), args.out)
        return EXIT_OK
    if not args.phi:
        raise ConfigError("--phi is required unless --level is given")
    phi = parse_phi(args.phi)
    fam = Family(args.family, ens.n, floor=args.floor)
    r = optimize_zeta_vector(ens, phi, fam)
    rows = [(i + 1, a) for i, a in enumerate(r.params)]
    _emit(dump_table(("stage", "alpha"), rows), args.out)
    print(f"ub={r.value:.17g} evaluations={r.evaluations}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    ens = _load(args.ensemble)
    if bool(args.zeta) == bool(args.xi):
        raise ConfigError("give exactly one of --zeta or --xi")
    if args.xi:
        b = StoppingBoundaryVector(_stages(args.xi, ens.n), ens.x0)
    else:
        b = BoundaryVector(_stages(args.zeta, ens.n), ens.x0)
    levels = parse_scan(args.scan) if args.scan else np.geomspace(ens.x0 * (1 + 1e-3), 4 * ens.x0, 256)
    rep = verify_inequality(ens, b, levels)
    cols = ("violations", "worst_residual", "max_abs_residual", "pairs")
    _emit(dump_table(cols, [(rep.violations, rep.worst_residual, rep.max_abs_residual, rep.pairs)]), args.out)
    return EXIT_VIOLATION if rep.violations else EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maxbound", description="Martingale maximal inequality toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, ensemble=False):
        p.add_argument("--out", default="-", help="output path ('-' for stdout)")
        if ensemble:
            p.add_argument("--ensemble", required=True, help="ensemble file written by 'simulate'")

    p = sub.add_parser("simulate", help="simulate an ensemble")
    p.add_argument("--sampler", default="exact", choices=["exact", "walk", "bridge", "jump", "two-point"])
    p.add_argument("--boundary", action="append", default=[], help="stopping boundary per stage")
    p.add_argument("--n", type=int, default=None, help="number of stages (repeats a single --boundary)")
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=None, help="walk step variance")
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=2.0)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bound", help="UB functional or indicator-level scan")
    common(p, ensemble=True)
    p.add_argument("--zeta", action="append", required=True, help="boundary per stage (one value is repeated)")
    p.add_argument("--phi", default=None)
    p.add_argument("--scan", default=None, help="indicator levels min:max:count")
    p.add_argument("--levels", type=int, default=512)
    p.add_argument("--rule", default="geometric", choices=["geometric", "uniform"])
    p.add_argument("--allow-nonintegrable", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("doob", help="Doob-type bounds")
    p.add_argument("--out", default="-")
    p.add_argument("--ensemble", default=None)
    p.add_argument("--mode", required=True, choices=["lp", "l1", "small-p", "improved-l1"])
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=None, help="use analytic moments of the Linear(alpha) extremal law")
    p.add_argument("--x0", type=float, default=1.0)
    p.set_defaults(func=cmd_doob)

    p = sub.add_parser("compare", help="flipped-ordering witnesses for two boundary vectors")
    common(p)
    p.add_argument("--zeta1", required=True)
    p.add_argument("--zeta2", required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--scan", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("optimize", help="optimise zeta")
    common(p, ensemble=True)
    p.add_argument("--phi", default=None)
    p.add_argument("--family", default="linear", choices=["linear", "floored"])
    p.add_argument("--floor", type=float, default=1.0)
    p.add_argument("--level", type=float, default=None, help="optimise a single zeta at this level")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("verify", help="check the pathwise inequality on an ensemble")
    common(p, ensemble=True)
    p.add_argument("--zeta", action="append", default=[])
    p.add_argument("--xi", action="append", default=[], help="stopping boundaries (equality check)")
    p.add_argument("--scan", default=None)
    p.set_defaults(func=cmd_verify)
    return ap


def _check_ranges(args) -> None:
    if getattr(args, "paths", 1) < 1:
        raise ConfigError("--paths must be at least 1")
    seed = getattr(args, "seed", 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_ranges(args)
        return args.func(args)
    except (StepBudgetExceeded, NoRootError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, MomentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
