"""The twelve acceptance criteria, each at its stated tolerance.

Every test prints one line ``CRITERION n: PASS|FAIL  detail`` before asserting.
"""
import math

import numpy as np
import pytest
from scipy.optimize import bisect, brentq

from firmfield import (CES, CobbDouglas, EconomyParams, GridSpec, integrate_against, kappa_star,
                       population_histogram, simulate_firm, singular_exponent, solve_density, solve_equilibrium,
                       solve_value)
from firmfield.economy import gross_output
from firmfield.equilibrium import clearing_residual
from firmfield.hjb import shoot_upward
from firmfield.scenario import load_scenario
from firmfield.simulate import constant_consumption_payoff, discounted_payoff, wasserstein_to_density

from conftest import W1, cd_economy, ces_economy, solved
from oracles import golden_rule_root


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _panel(seed, n=5):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.02, 0.2, n), np.exp(rng.uniform(np.log(0.3), np.log(3.0), n))


def _printed_kappa(A, alpha, beta, rho, w):
    # the closed form exactly as printed, with alpha / (alpha + rho)
    b = abs(beta)
    scale = (A * (beta / w) ** beta) ** (1 / (1 - alpha - b))
    return (alpha / (alpha + rho)) ** ((1 - b) / (1 - alpha - b)) * scale


def test_criterion_01_cobb_douglas_closed_form(capsys):
    A, alpha, beta, delta = 1.0, 0.3, 0.4, 0.1
    prod = CobbDouglas(A=A, alpha=alpha, beta=(beta,))
    rhos, ws = _panel(1)
    err_printed = err_root = err_corrected = 0.0
    for rho in rhos:
        for w in ws:
            params = EconomyParams(rho=rho, delta=delta, nu=0.1)
            ks = kappa_star(prod, params, [w])
            err_printed = max(err_printed, abs(ks / _printed_kappa(A, alpha, beta, rho, w) - 1))
            err_corrected = max(err_corrected, abs(ks / prod.kappa_closed_form(rho, delta, [w]) - 1))

            def dfdk(k, w=w):
                h = 1e-6 * k
                fp = gross_output(prod, k + h, [w]) - delta * (k + h)
                fm = gross_output(prod, k - h, [w]) - delta * (k - h)
                return (fp - fm) / (2 * h)
            err_root = max(err_root, abs(ks / golden_rule_root(dfdk, rho) - 1))
    ok = err_printed < 1e-8 and err_root < 1e-5
    report(capsys, 1, ok, f"printed form rel {err_printed:.3e} (< 1e-8), grid root-find rel {err_root:.3e} "
                          f"(< 1e-5), corrected form rel {err_corrected:.1e}")


def _lambda_oracle(prod, k, w):
    def eq(lam):
        L = sum((lam * b / wi) ** (b / (1 - b)) for b, wi in zip(prod.beta, w))
        return lam * (k ** prod.alpha + L) ** (1 - prod.gamma) - prod.gamma
    return brentq(eq, 1e-12, 1e6, xtol=1e-300, rtol=1e-15)


def test_criterion_02_ces_golden_rule(capsys):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10):
        prod = CES(alpha=rng.uniform(0.2, 0.7), beta=tuple(rng.uniform(0.2, 0.6, 2)), gamma=rng.uniform(0.3, 0.9))
        rho, delta = rng.uniform(0.02, 0.2), rng.choice([0.0, 0.1])
        w = np.exp(rng.uniform(-1, 1, 2))
        ks = kappa_star(prod, EconomyParams(rho=rho, delta=delta, nu=0.1), w)
        lam = _lambda_oracle(prod, ks, w)
        worst = max(worst, abs(prod.alpha * lam * ks ** (prod.alpha - 1) - (delta + rho)))
    report(capsys, 2, worst < 1e-8, f"max residual {worst:.3e} (< 1e-8) over 10 random (params, w)")


HJB_FAMILIES = ["cd_log_d0", "cd_log_d01", "cd_pow_d0", "cd_pow_d01", "ces_d0", "ces_d01"]


def test_criterion_03_hjb_residual(capsys):
    lines, ok = [], True
    for name in HJB_FAMILIES:
        e, v, _ = solved(name)
        rho = e.params.rho
        res = float(np.max(np.abs(v.hjb_residual()) / (1 + np.abs(rho * v.u))))
        slopes = np.diff(v.u) / np.diff(v.grid)
        ks = v.kappa_star
        shape = bool(np.all(np.diff(v.u) > 0) and np.all(np.diff(slopes) < 0))
        signs = bool(np.all(v.b[v.grid < ks] > 0) and np.all(v.b[v.grid > ks] < 0) and v.drift(ks) == 0.0)
        ok &= res < 1e-6 and shape and signs
        lines.append(f"{name}: {res:.1e}")
    report(capsys, 3, ok, "scaled residual " + ", ".join(lines) + "; increasing, concave, drift (+,0,-)")


def test_criterion_04_drift_lipschitz(capsys):
    out, ok = [], True
    for name in ("cd_log_d01", "ces_d01"):
        e, v, _ = solved(name)
        ks = v.kappa_star
        x = np.concatenate([-np.geomspace(0.05, 1e-9, 400), np.geomspace(1e-9, 0.05, 400)]) * ks
        M = float(np.max(np.abs(v.drift(ks + x)) / np.abs(x)))
        _, (t_l, t_r) = singular_exponent(v, e.params.nu)
        ok &= math.isfinite(M) and t_l > 0 and t_r > 0
        out.append(f"{name}: M={M:.4g}, theta=({t_l:.4g}, {t_r:.4g})")
    report(capsys, 4, ok, "; ".join(out))


def test_criterion_05_mass_balance(capsys):
    out, ok = [], True
    for name in HJB_FAMILIES:
        e, v, d = solved(name)
        nu, c = e.params.nu, e.params.c_hat
        rel = abs(nu * d.total_mass - d.eta_integral) / d.eta_integral
        inside = 1 / (nu * c) * (1 - 1e-6) <= d.total_mass <= c / nu * (1 + 1e-6)
        ok &= rel < 1e-6 and inside
        out.append(f"{name}: {rel:.1e}")
    report(capsys, 5, ok, "mass balance rel " + ", ".join(out) + "; total mass within [1/(nu c), c/nu]")


def _bump(c, r):
    def phi(k):
        s = (np.asarray(k, dtype=float) - c) / r
        out = np.zeros_like(s)
        i = np.abs(s) < 1
        out[i] = np.exp(-1.0 / (1.0 - s[i] ** 2))
        return out

    def dphi(k):
        s = (np.asarray(k, dtype=float) - c) / r
        out = np.zeros_like(s)
        i = np.abs(s) < 1
        out[i] = np.exp(-1.0 / (1.0 - s[i] ** 2)) * (-2.0 * s[i] / (1.0 - s[i] ** 2) ** 2) / r
        return out
    return phi, dphi


def test_criterion_06_weak_form(capsys):
    from scipy.integrate import quad

    worst, dmass, ok = 0.0, 0.0, True
    for name in ("cd_log_d01", "ces_d01"):
        e, v, d = solved(name)
        lo, hi = d.support
        ks, width = v.kappa_star, hi - lo
        tests = [_bump(lo + t * width, 0.3 * width) for t in (0.2, 0.5, 0.8)]
        tests += [_bump(ks, 0.05 * width), _bump(ks - 0.1 * width, 0.15 * width)]
        for phi, dphi in tests:
            flux = integrate_against(d, lambda k: dphi(k) * v.drift(k))
            src = quad(lambda k: float(phi(np.array([k]))[0]) * e.entry.rate(k, v.value(k)), e.entry.a1, e.entry.a2,
                       epsabs=0, epsrel=1e-12, limit=400)[0]
            res = abs(-flux - src + e.params.nu * integrate_against(d, phi)) / d.eta_integral
            worst = max(worst, res)
        half = solve_density(e, v, h_sing=d.h_sing / 2)
        dmass = max(dmass, abs(half.total_mass - d.total_mass))
    ok = worst < 1e-5 and dmass < 1e-6
    report(capsys, 6, ok, f"weak-form residual {worst:.2e}·scale (< 1e-5), h_sing halving mass change "
                          f"{dmass:.2e} (< 1e-6)")


@pytest.fixture(scope="module")
def wide():
    e = cd_economy()
    ks = kappa_star(e.production, e.params, W1)
    v = solve_value(e, W1, GridSpec(k_hi=2 * ks))
    return e, v


def test_criterion_07_verification(capsys, wide):
    e, v = wide
    ks, rho = v.kappa_star, e.params.rho
    T = 20 / rho
    worst, dominated = 0.0, True
    for r in (0.5, 1.0, 1.5):
        k0 = r * ks
        u0 = float(v.value(k0))
        pay = discounted_payoff(e, simulate_firm(v, k0, T))
        worst = max(worst, abs(pay - u0) / abs(u0))
        for fac in (0.5, 0.9, 1.1):
            dominated &= constant_consumption_payoff(e, W1, k0, fac * v.golden.f, T).payoff < pay
    ok = worst < 1e-3 and dominated
    report(capsys, 7, ok, f"max |payoff - u(k0)|/|u(k0)| {worst:.2e} (< 1e-3); "
                          f"constant-consumption policies strictly worse: {dominated}")


def test_criterion_08_no_crossing(capsys, wide):
    e, v = wide
    ks = v.kappa_star
    ok, closest = True, []
    for r in (0.25, 0.5, 0.9, 1.1, 1.5, 1.9):
        tr = simulate_firm(v, r * ks, 40 / e.params.rho)
        side = np.sign(r - 1)
        # the offset x = k - kappa* is the integrated state, exact even where k rounds to kappa*
        x = tr.offset
        ok &= bool(np.all(np.sign(x) == side) and np.all(np.diff(x) * side < 0))
        ok &= bool(np.all(np.diff(tr.capital) * side <= 0))
        closest.append(abs(tr.offset[-1]) / ks)
    report(capsys, 8, ok, f"6 starts, sign(k - kappa*) constant and monotone; closest approach {min(closest):.1e}·kappa*")


def test_criterion_09_monotone_in_prices(capsys):
    e = cd_economy()
    grid = GridSpec(k_lo=0.2, k_hi=3.0)
    k = np.linspace(0.2, 3.0, 400)
    ok, gaps = True, []
    for a, b in ((0.8, 0.9), (0.9, 1.2), (1.0, 1.5)):
        d = solve_value(e, [a], grid).value(k) - solve_value(e, [b], grid).value(k)
        ok &= bool(np.all(d >= 0))
        gaps.append(float(d.min()))
    ce = ces_economy()
    grid2 = GridSpec(k_lo=0.3, k_hi=3.0)
    k2 = np.linspace(0.3, 3.0, 400)
    d = solve_value(ce, [1.2, 1.3], grid2).value(k2) - solve_value(ce, [1.3, 1.3], grid2).value(k2)
    ok &= bool(np.all(d >= 0))
    gaps.append(float(d.min()))
    report(capsys, 9, ok, "min u(w) - u(w~) over pairs: " + ", ".join(f"{g:.3e}" for g in gaps))


@pytest.mark.parametrize("name", ["cobb_douglas_d1", "cobb_douglas_d2", "ces_d2"])
def test_criterion_10_equilibrium(capsys, name):
    sc = load_scenario(name)
    res = solve_equilibrium(sc.economy, sc.equilibrium)
    lo, hi = sc.equilibrium.box
    inside = bool(np.all(res.w_star > lo) and np.all(res.w_star < hi))
    ok = res.clearing_residual < 1e-6 and inside
    detail = f"{name}: w* = {np.array2string(res.w_star, precision=8)}, residual {res.clearing_residual:.2e}"
    if sc.economy.d == 1:
        def resid(x):
            v = solve_value(sc.economy, [x], sc.grid)
            return clearing_residual(sc.economy, [x], v, solve_density(sc.economy, v, h_sing_rel=sc.h_sing_rel))[0][0]
        w_bis = bisect(resid, 0.5, 2.0, xtol=1e-12)
        diff = abs(w_bis - res.w_star[0])
        ok &= diff < 1e-6
        detail += f", bisection diff {diff:.1e}"
    report(capsys, 10, ok, detail)


def test_criterion_11_monte_carlo(capsys, wide):
    e, v = wide
    d = solve_density(e, v)
    h = population_histogram(e, v, 100_000, seed=11)
    w1 = wasserstein_to_density(h, d)
    bound = 5 * (h.bin_width + 1 / math.sqrt(1e5))
    target = d.eta_integral / e.params.nu
    z = abs(h.mass - target) / h.mass_se
    ok = w1 < bound and z < 3
    report(capsys, 11, ok, f"W1 {w1:.2e} (< {bound:.2e}), mass {h.mass:.5g} vs {target:.5g}: {z:.2f} SE (< 3)")


def test_criterion_12_shooting(capsys):
    e, v, _ = solved("cd_log_d0")
    eps, ks = v.span[0], v.kappa_star
    targets = v.grid[(v.grid > eps) & (v.grid < ks)]
    lam, vals = shoot_upward(e, W1, eps, targets, end_gap=1e-8)
    err = max(float(np.max(np.abs(vals - v.value(targets)))), abs(lam - float(v.value(eps))))
    report(capsys, 12, err < 1e-5, f"sup |shooting - backward| on [k_lo, kappa*) {err:.2e} (< 1e-5), "
                                   f"{targets.size + 1} points")
