"""Command-line front end.

    firmfield value|density|equilibrium|simulate|check --scenario PATH
              [--override key=value ...] [--out DIR] [--workers N] [--format csv|json]

Exit status: 0 success, 1 failed checks, 2 invalid scenario, 3 convergence failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import report
from .density import singular_exponent, solve_density
from .economy import kappa_star
from .equilibrium import SolutionCache, clearing_residual, solve_equilibrium
from .errors import ConvergenceError, DomainError, InternalSolverError, ValidationError
from .hjb import hamiltonian, solve_value
from .scenario import Scenario, load_scenario
from .simulate import discounted_payoff, population_histogram, simulate_firm, suboptimal_payoffs, wasserstein_to_density

log = logging.getLogger("firmfield")

ENV_OUT = "FIRMFIELD_OUT"
EXIT_OK, EXIT_CHECKS, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 1, 2, 3


class Emitter:
    """Writes tables as CSV or JSON into the output directory and remembers the paths."""

    def __init__(self, out: Path, fmt: str):
        self.out = out
        self.fmt = fmt
        self.paths = {}
        out.mkdir(parents=True, exist_ok=True)

    def table(self, name, header, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if self.fmt == "csv":
            path = report.write_csv(self.out / f"{name}.csv", header, rows)
        else:
            path = report.write_json(self.out / f"{name}.json", {h: rows[:, i] for i, h in enumerate(header)})
        self.paths[name] = str(path)
        return path

    def summary(self, name, payload):
        path = report.write_json(self.out / f"{name}.json", payload)
        self.paths[name] = str(path)
        return path


def _value_rows(v):
    return ["k", "u", "du", "b", "chi"], np.column_stack([v.grid, v.u, v.du, v.b, v.chi])


def _density_rows(m):
    return ["k", "m"], np.column_stack([m.grid, m.m])


def _value_summary(sc: Scenario, v, m=None):
    out = {"scenario": sc.name, "w": v.w, "kappa_star": v.kappa_star, "k0": v.k0,
           "u_kappa_star": v.golden.u, "theta": v.golden.theta, "grid_points": v.grid.size}
    if m is not None:
        out.update(m.summary())
    return out


def cmd_value(sc: Scenario, em: Emitter, args):
    w = sc.price_vector()
    v = solve_value(sc.economy, w, sc.grid, verify=True)
    m = solve_density(sc.economy, v, h_sing_rel=sc.h_sing_rel)
    em.table("value", *_value_rows(v))
    em.table("density", *_density_rows(m))
    em.summary("summary", _value_summary(sc, v, m))
    print(f"kappa* = {v.kappa_star:.10g}  u(kappa*) = {v.golden.u:.10g}  total mass = {m.total_mass:.10g}")
    return EXIT_OK


def cmd_density(sc: Scenario, em: Emitter, args):
    w = sc.price_vector()
    v = solve_value(sc.economy, w, sc.grid)
    m = solve_density(sc.economy, v, h_sing_rel=sc.h_sing_rel)
    em.table("density", *_density_rows(m))
    em.summary("density_summary", m.summary())
    print(f"total mass = {m.total_mass:.10g}  window mass = {m.window_mass:.3e}  "
          f"p = ({m.exponent[0]:.6g}, {m.exponent[1]:.6g})")
    return EXIT_OK


def cmd_equilibrium(sc: Scenario, em: Emitter, args):
    cache = SolutionCache(sc.economy, sc.grid, sc.h_sing_rel)
    try:
        res = solve_equilibrium(sc.economy, sc.equilibrium, cache)
    except ConvergenceError as exc:
        if exc.trace is not None and exc.trace.records:
            _trace_table(em, exc.trace)
        raise
    _trace_table(em, res.trace)
    em.table("value", *_value_rows(res.value))
    em.table("density", *_density_rows(res.density))
    payload = res.report()
    payload["artifacts"] = dict(em.paths)
    em.summary("equilibrium", payload)
    print(f"w* = {np.array2string(res.w_star, precision=10)}  residual = {res.clearing_residual:.3e}  "
          f"kappa* = {res.value.kappa_star:.10g}")
    return EXIT_OK


def _trace_table(em, trace):
    d = trace.records[0].w.size
    rows = [[r.lam, r.iteration, r.gap, *r.w] for r in trace.records]
    em.table("trace", ["lambda", "iter", "gap"] + [f"w_{i + 1}" for i in range(d)], rows)


def cmd_simulate(sc: Scenario, em: Emitter, args):
    cfg = sc.simulate
    e = sc.economy
    w = sc.price_vector()
    ks = kappa_star(e.production, e.params, w)
    k0s = cfg["k0"] if cfg["k0"] is not None else [r * ks for r in cfg["k0_rel"]]
    hi = 1.25 * max(max(k0s), e.entry.a2, ks)
    grid = sc.grid if sc.grid.k_hi is not None else type(sc.grid)(**{**sc.grid.__dict__, "k_hi": hi})
    v = solve_value(e, w, grid)
    horizon = cfg["horizon"] if cfg["horizon"] is not None else 20.0 / e.params.rho
    runs = []
    for i, k0 in enumerate(k0s):
        tr = simulate_firm(v, float(k0), horizon)
        em.table(f"trajectory_{i}", ["t", "k", "chi", "payoff"],
                 np.column_stack([tr.times, tr.capital, tr.consumption, tr.payoff]))
        pay = discounted_payoff(e, tr)
        runs.append({"k0": k0, "payoff": pay, "value": v.value(float(k0)),
                     "suboptimal": {str(k): p for k, p in suboptimal_payoffs(v, float(k0), horizon).items()}})
    m = solve_density(e, v, h_sing_rel=sc.h_sing_rel)
    hist = population_histogram(e, v, cfg["n_firms"], cfg["population_horizon"], cfg["seed"], cfg["bins"],
                                workers=args.workers)
    em.table("histogram", ["bin_lo", "bin_hi", "density"],
             np.column_stack([hist.edges[:-1], hist.edges[1:], hist.density]))
    meta = dict(hist.metadata)
    meta.update({"trajectory_horizon": horizon, "trajectories": runs, "mass": hist.mass, "mass_se": hist.mass_se,
                 "expected_mass": hist.expected_mass, "wasserstein": wasserstein_to_density(hist, m)})
    em.summary("simulate", meta)
    for r in runs:
        print(f"k0 = {r['k0']:.6g}: payoff = {r['payoff']:.10g}, u(k0) = {r['value']:.10g}")
    print(f"population: {hist.n_alive} firms alive, mass {hist.mass:.6g} +- {hist.mass_se:.2g}")
    return EXIT_OK


def run_checks(sc: Scenario, workers: int = 1):
    """Invariant suite on a scenario; returns a list of (name, passed, detail)."""
    e = sc.economy
    w = sc.price_vector()
    rho = e.params.rho
    out = []

    def add(name, ok, detail):
        out.append((name, bool(ok), detail))

    v = solve_value(e, w, sc.grid, verify=True)
    res = np.abs(-rho * v.u + hamiltonian(e, v.grid, v.du, v.w)) / (1 + np.abs(rho * v.u))
    add("hjb residual", res.max() < 1e-6, f"max {res.max():.2e}")
    d1 = np.diff(v.u)
    slopes = d1 / np.diff(v.grid)
    add("u increasing and concave", np.all(d1 > 0) and np.all(np.diff(slopes) < 0), "")
    add("du positive and decreasing", np.all(v.du > 0) and np.all(np.diff(v.du) < 0), "")
    b = v.b
    ks = v.kappa_star
    add("drift sign pattern", np.all(b[v.grid < ks] > 0) and np.all(b[v.grid > ks] < 0) and v.drift(ks) == 0.0, "")
    f_star = float(e.net_output(ks, w))
    add("golden-rule boundary values",
        abs(v.golden.u - e.utility.value(f_star) / rho) < 1e-8 and abs(v.golden.q - e.utility.marginal(f_star)) < 1e-8, "")
    m = solve_density(e, v, h_sing_rel=sc.h_sing_rel)
    bal = abs(e.params.nu * m.total_mass - m.eta_integral) / m.eta_integral
    add("mass balance", bal < 1e-6, f"rel {bal:.2e}")
    c = e.params.c_hat
    lo, hi = 1 / (e.params.nu * c), c / e.params.nu
    add("mass bounds", lo * (1 - 1e-6) <= m.total_mass <= hi * (1 + 1e-6), f"{m.total_mass:.10g} in [{lo:.6g}, {hi:.6g}]")
    add("density nonnegative", np.all(m.m >= 0), "")
    ps, thetas = singular_exponent(v, e.params.nu)
    add("positive drift slopes", min(thetas) > 0, f"theta {thetas[0]:.4g}, {thetas[1]:.4g}")
    flux = np.abs(v.drift(m.grid) * m.m)
    ends = max(flux[0], flux[-1]) if m.grid.size else 0.0
    a1 = e.entry.a1
    if a1 < ks:
        pts = [x for x in (e.entry.a2,) if a1 < x < ks]
        eta_l = quad(lambda k: e.entry.rate(k, v.value(k)), a1, min(ks, e.entry.a2), points=pts or None,
                     epsabs=0, epsrel=1e-11, limit=200)[0]
        ton = abs(m.left_mass - eta_l / e.params.nu) / max(m.left_mass, 1e-300)
        add("Tonelli identity (left of kappa*)", ton < 1e-6, f"rel {ton:.2e}")
    add("no flux at support ends", ends <= 1e-8 * max(flux.max(initial=0.0), 1e-300), f"{ends:.2e}")
    horizon = 20.0 / rho
    for r in (0.5, 1.5):
        k0 = r * ks
        if not v.span[0] <= k0 <= v.span[1]:
            continue
        tr = simulate_firm(v, k0, horizon, n_out=401)
        pay = discounted_payoff(e, tr)
        u0 = v.value(k0)
        add(f"verification k0={r}*kappa*", abs(pay - u0) <= 1e-3 * max(1.0, abs(u0)), f"{pay:.8g} vs {u0:.8g}")
        sgn = np.sign(tr.offset)
        add(f"no crossing k0={r}*kappa*", np.all(sgn == sgn[0]) and np.all(np.diff(np.abs(tr.offset)) <= 0), "")
    if e.supply is not None:
        r, rel = clearing_residual(e, w, v, m)
        add("clearing residual finite", np.all(np.isfinite(r)), f"rel {rel:.3e} at configured prices")
    return out


def cmd_check(sc: Scenario, em: Emitter, args):
    rows = run_checks(sc, args.workers)
    width = max(len(n) for n, _, _ in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    em.summary("check", {"checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in rows]})
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_CHECKS


COMMANDS = {"value": cmd_value, "density": cmd_density, "equilibrium": cmd_equilibrium,
            "simulate": cmd_simulate, "check": cmd_check}


def build_parser():
    p = argparse.ArgumentParser(prog="firmfield", description="Stationary mean-field equilibria of firms.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario TOML file or bundled scenario name")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario key, e.g. params.rho=0.05 (repeatable)")
    p.add_argument("--out", default=None, help=f"output directory (default: ${ENV_OUT} or ./firmfield_out)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        sc = load_scenario(args.scenario, args.override)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = args.out or sc.output["directory"] or os.environ.get(ENV_OUT) or "firmfield_out"
    fmt = args.format or sc.output["format"]
    em = Emitter(Path(out) / args.command, fmt)
    try:
        return COMMANDS[args.command](sc, em, args)
    except (ValidationError, DomainError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, InternalSolverError) as exc:
        print(f"convergence error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
