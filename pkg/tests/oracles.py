"""Independent reference computations used to derive the frozen test values.

Nothing here imports the solver modules beyond the model primitives, so the
values they produce are an independent route to the same quantities. Run this
file directly to print the numbers frozen into the tests.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


def grid_sup_cobb_douglas(A, alpha, beta, k, w, ell_max=50.0, step=1e-5):
    """sup_l A k^alpha l^beta - w l by brute force on a 1-d grid."""
    ell = np.arange(step, ell_max + step, step)
    vals = A * k ** alpha * ell ** beta - w * ell
    i = int(np.argmax(vals))
    # parabolic refinement of the grid maximum
    y0, y1, y2 = vals[i - 1], vals[i], vals[i + 1]
    return float(y1 + 0.125 * (y0 - y2) ** 2 / (2 * y1 - y0 - y2))


def grid_argmax_power(b, q, c_max=10.0, step=1e-6):
    c = np.arange(step, c_max + step, step)
    vals = c ** b / b - q * c
    i = int(np.argmax(vals))
    return float(c[i]), float(vals[i])


def golden_rule_root(dfdk, rho, lo=1e-8, hi=1e8, n=20001):
    """Root of dfdk(k) = rho by a log-grid scan followed by bisection."""
    ks = np.geomspace(lo, hi, n)
    g = np.array([dfdk(k) - rho for k in ks])
    j = int(np.nonzero(np.diff(np.sign(g)))[0][0])
    return brentq(lambda k: dfdk(k) - rho, ks[j], ks[j + 1], xtol=1e-15, rtol=1e-15)


class ConsumptionOracle:
    """Value function through the consumption policy c(k).

    Differentiating rho u = U(c) + U'(c)(f - c) with u' = U'(c) gives
    c' = U'(c)(rho - f') / (U''(c)(f - c)), a 0/0 at the golden rule. The
    policy leaves kappa* with the slope of the stable branch and is integrated
    outward with an implicit solver.
    """

    def __init__(self, U, dU, d2U, f, df, d2f, rho, kappa, x0=1e-5):
        self.U, self.dU, self.d2U = U, dU, d2U
        self.f, self.df = f, df
        self.rho = rho
        self.kappa = kappa
        fs = f(kappa)
        r = dU(fs) * d2f(kappa) / d2U(fs)
        self.sigma = 0.5 * (rho + math.sqrt(rho * rho + 4.0 * r))
        self.x0 = x0 * kappa
        self.fs = fs

    def _rhs(self, k, y):
        c = y[0]
        return [self.dU(c) * (self.rho - self.df(k)) / (self.d2U(c) * (self.f(k) - c))]

    def consumption(self, ks):
        ks = np.atleast_1d(np.asarray(ks, dtype=float))
        out = np.empty_like(ks)
        for side in (-1, 1):
            sel = np.sign(ks - self.kappa) == side
            if not sel.any():
                continue
            k_start = self.kappa + side * self.x0
            c_start = self.fs + self.sigma * side * self.x0
            pts = ks[sel]
            order = np.argsort(side * pts)
            t_eval = pts[order]
            sol = solve_ivp(self._rhs, (k_start, t_eval[-1]), [c_start], method="Radau", t_eval=t_eval,
                            rtol=1e-12, atol=1e-14)
            vals = np.empty(pts.size)
            vals[order] = sol.y[0]
            out[sel] = vals
        out[ks == self.kappa] = self.fs
        return out

    def value(self, ks):
        ks = np.atleast_1d(np.asarray(ks, dtype=float))
        c = self.consumption(ks)
        return (self.U(c) + self.dU(c) * (self.f(ks) - c)) / self.rho


def riemann_density(b, eta, nu, lo, kappa, n=1_000_000):
    """m on (lo, kappa) from the explicit formula by midpoint sums on n cells.

    m(k) = (1/b(k)) int_lo^k eta(s) exp(-int_s^k nu/b) ds.
    Returns cell midpoints, m at those midpoints and the cell width.
    """
    h = (kappa - lo) / n
    k = lo + h * (np.arange(n) + 0.5)
    bk = b(k)
    eh = eta(k) * h
    half = np.exp(-0.5 * nu * h / bk)
    # J at cell edges: J_{i+1} = J_i exp(-nu h / b_i) + eta_i h exp(-nu h / (2 b_i))
    J = np.empty(n)
    acc = 0.0
    for i in range(n):
        J[i] = acc
        acc = acc * half[i] * half[i] + eh[i] * half[i]
    # midpoint value: the left edge decayed over half a cell plus half of the cell source
    m = (J * half + 0.5 * eh) / bk
    return k, m, h


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    print("gross output CD k=1 w=0.4:", grid_sup_cobb_douglas(1.0, 0.3, 0.4, 1.0, 0.4))
    print("gross output CD k=1 w=0.8:", grid_sup_cobb_douglas(1.0, 0.3, 0.4, 1.0, 0.8))
    print("power argmax / conjugate q=2:", grid_argmax_power(0.5, 2.0))
