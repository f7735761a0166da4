"""Stationary state-constrained HJB equation  -rho u + H(k, u', w) = 0.

The value function is assembled from the two monotone branches of the convex
map q -> H(k, q): on the left of the golden-rule capital u' lies on the
increasing branch, on the right on the decreasing branch (which becomes the
global right inverse once f(k) <= 0). Each piece solves du/dk = F(k, u) where
F inverts the relevant branch at level rho u.

Both pieces start from the corner point (kappa*, U(f(kappa*))/rho) where the
inverse branches are not Lipschitz. Two regularizations are provided:

* ``start="taylor"`` (default): the solution is continued a short distance
  off kappa* along its analytic third-order expansion (stable-manifold slope
  from the differentiated HJB), then integrated outward.
* ``start="offset"``: the corner value is lifted by eps (1 + |u*|) and both
  pieces are integrated from kappa* itself; repeated for decreasing eps until
  successive solutions agree.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .economy import Economy, break_even_capital, kappa_star
from .errors import ConvergenceError, DomainError, InternalSolverError
from .integrate import RegionExit, integrate_through


_LOCAL_DRIFT = 1e-6


class Branch(enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    RIGHT_INVERSE = "right_inverse"


# ---------------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------------

def hamiltonian(economy: Economy, k, q, w):
    """H(k, q, w) = sup_c {U(c) - c q} + f(k, w) q."""
    return economy.utility.conjugate(q) + economy.net_output(k, w) * q


def hamiltonian_dq(economy: Economy, k, q, w):
    """H_q(k, q, w) = f(k, w) - c*(q), the drift generated by costate q."""
    return economy.net_output(k, w) - economy.utility.inverse_marginal(q)


def _invert(util, f, target, branch, tol=2e-15, max_iter=200):
    """Solve conj(q) + f q = target on one monotone branch; f is f(k, w)."""
    if not math.isfinite(target):
        raise DomainError("non-finite Hamiltonian level")

    def h(q):
        return util.conjugate(q) + f * q - target

    def dh(q):
        return f - util.inverse_marginal(q)

    if f > 0:
        q_min = util.marginal(f)
        h_min = util.value(f) - target
        if h_min > 0:
            raise DomainError("level below the minimum of the Hamiltonian")
        if h_min == 0:
            return q_min
        # quadratic model around the minimizer: H ~ U(f) + (q - q_min)^2 / (2 |U''(f)|)
        dq = math.sqrt(-2.0 * h_min / -util.second(f))
    else:
        q_min = math.inf
        dq = None

    if branch is Branch.INCREASING:
        if f <= 0:
            raise DomainError("increasing branch requires positive net output")
        lo = q_min
        hi = q_min + dq
        n = 0
        while h(hi) < 0:
            lo, hi = hi, q_min + 2.0 * (hi - q_min)
            n += 1
            if n > 2000:
                raise DomainError("cannot bracket the increasing branch")
        q = hi
    else:
        if target >= util.sup_value:
            raise DomainError("level at or above the q -> 0 limit of the Hamiltonian")
        if branch is Branch.RIGHT_INVERSE and f > 0:
            raise DomainError("right inverse is only used where net output is nonpositive")
        if f > 0:
            hi = q_min
            lo = max(q_min - dq, 0.5 * q_min)
        else:
            lo = hi = 1.0
            n = 0
            while h(hi) > 0:
                lo, hi = hi, 2.0 * hi
                n += 1
                if n > 4000:
                    raise DomainError("cannot bracket the right inverse")
        n = 0
        while h(lo) < 0:
            hi, lo = lo, 0.5 * lo
            n += 1
            if n > 4000:
                raise DomainError("cannot bracket the decreasing branch")
        q = lo
    # safeguarded Newton; h is convex so Newton from the h > 0 side is monotone
    hq = h(q)
    for _ in range(max_iter):
        d = dh(q)
        q_new = q - hq / d if d != 0 else math.nan
        if not lo <= q_new <= hi:
            q_new = 0.5 * (lo + hi)
        h_new = h(q_new)
        if (h_new > 0) == (branch is Branch.INCREASING):
            hi = q_new
        else:
            lo = q_new
        noise = 4e-16 * (abs(target) + abs(f * q_new) + 1.0)
        if abs(q_new - q) <= tol * q_new or abs(h_new) <= noise or hi - lo <= tol * hi:
            return q_new
        q, hq = q_new, h_new
    raise ConvergenceError("Hamiltonian inversion did not converge")


def invert_hamiltonian(economy: Economy, branch: Branch, k, target, w):
    """Costate q on ``branch`` with H(k, q, w) = target."""
    f = float(economy.net_output(k, w))
    if branch is Branch.RIGHT_INVERSE:
        util = economy.utility
        if not util.inf_value < target < util.sup_value:
            raise DomainError("level outside the range of the right inverse")
    return _invert(economy.utility, f, float(target), branch)


# ---------------------------------------------------------------------------
# Golden-rule expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoldenRule:
    """Local data of the solution at kappa*: u and its first three derivatives."""

    kappa: float
    f: float
    u: float
    q: float
    s: float
    t: float
    theta: float
    b2: float = 0.0

    def local_drift(self, x):
        """Second-order expansion of the optimal drift at offset x = k - kappa*."""
        return -self.theta * x + self.b2 * x * x

    def taylor(self, k):
        h = k - self.kappa
        u = self.u + self.q * h + 0.5 * self.s * h * h + self.t * h ** 3 / 6.0
        du = self.q + self.s * h + 0.5 * self.t * h * h
        d2u = self.s + self.t * h
        return u, du, d2u


def golden_rule(economy: Economy, w) -> GoldenRule:
    """Expansion of u at kappa* obtained by differentiating the HJB twice and three times.

    With H_qq = -1/U''(f), the second derivative s solves
    H_qq s^2 + rho s + f'' q = 0 (negative root, u concave). The drift slope is
    b'(kappa*) = rho + H_qq s = -theta.
    """
    util = economy.utility
    rho = economy.params.rho
    ks = kappa_star(economy.production, economy.params, w)
    f = float(economy.net_output(ks, w))
    q = util.marginal(f)
    f2 = float(economy.net_output_dkk(ks, w))
    f3 = float(economy.net_output_dkkk(ks, w))
    hqq = -1.0 / util.second(f)
    hqqq = util.third(f) / util.second(f) ** 3
    disc = math.sqrt(rho * rho - 4.0 * hqq * f2 * q)
    s = (-rho - disc) / (2.0 * hqq)
    theta = 0.5 * (disc - rho)
    t = -(f3 * q + 3.0 * f2 * s + hqqq * s ** 3) / (2.0 * rho + 3.0 * hqq * s)
    b2 = 0.5 * (f2 + hqq * t + hqqq * s * s)
    return GoldenRule(kappa=ks, f=f, u=util.value(f) / rho, q=q, s=s, t=t, theta=theta, b2=b2)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Capital grid clustered geometrically toward kappa*.

    ``k_lo``/``k_hi`` default to a margin around the entry support and kappa*.
    ``clustering`` is the ratio between the outermost and innermost spacing.
    ``h_sing`` is the half-width of the window excluded around kappa* by the
    density, relative to the width of the density support.
    """

    n_points: int = 600
    k_lo: float | None = None
    k_hi: float | None = None
    clustering: float = 2000.0
    h_sing: float = 1e-4
    taylor_window: float = 2e-3
    rtol: float = 1e-10
    atol: float = 1e-10

    def __post_init__(self):
        if self.n_points < 100:
            raise DomainError("grid needs at least 100 points")
        if self.clustering <= 1:
            raise DomainError("clustering strength must exceed 1")
        if not 0 < self.h_sing < 0.5 or not 0 < self.taylor_window < 0.5:
            raise DomainError("window sizes must lie in (0, 0.5)")


def _side_offsets(length, n, r):
    t = np.arange(1, n + 1) / n
    return length * np.expm1(t * math.log(r)) / (r - 1.0)


def build_grid(economy: Economy, w, spec: GridSpec, ks: float, k0: float | None):
    entry = economy.entry
    sup_lo, sup_hi = min(entry.a1, ks), max(entry.a2, ks)
    k_lo = spec.k_lo if spec.k_lo is not None else 0.5 * sup_lo
    k_hi = spec.k_hi if spec.k_hi is not None else 1.25 * sup_hi
    k_lo = max(k_lo, 1e-3 * ks)
    if not k_lo < ks < k_hi:
        raise DomainError(f"grid [{k_lo}, {k_hi}] must contain kappa* = {ks}")
    n_left = max(10, int(round(spec.n_points * (ks - k_lo) / (k_hi - k_lo))))
    n_left = min(max(n_left, spec.n_points // 4), 3 * spec.n_points // 4)
    n_right = spec.n_points - n_left
    left = ks - _side_offsets(ks - k_lo, n_left, spec.clustering)
    right = ks + _side_offsets(k_hi - ks, n_right, spec.clustering)
    hs = spec.h_sing * (sup_hi - sup_lo)
    ht = spec.taylor_window * ks
    special = [ks, ks - hs, ks + hs, ks - ht, ks + ht, entry.a1, entry.a2]
    if k0 is not None:
        special.append(k0)
    pts = np.concatenate([left, right, [p for p in special if k_lo <= p <= k_hi]])
    pts = np.unique(pts)
    # drop near-duplicates, never the special points
    keep = np.ones(pts.size, dtype=bool)
    gaps = np.diff(pts) < 1e-10 * pts[1:]
    specials = np.isin(pts, special)
    for i in np.nonzero(gaps)[0]:
        if specials[i + 1] and not specials[i]:
            keep[i] = False
        else:
            keep[i + 1] = keep[i + 1] and specials[i + 1]
    return pts[keep]


# ---------------------------------------------------------------------------
# Value solution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueSolution:
    grid: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    kappa_star: float
    k0: float | None
    w: np.ndarray
    economy: Economy = field(repr=False)
    golden: GoldenRule = field(repr=False)
    stats: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("grid", "u", "du", "d2u", "w"):
            getattr(self, name).flags.writeable = False
        object.__setattr__(self, "_u_interp", CubicHermiteSpline(self.grid, self.u, self.du))
        object.__setattr__(self, "_du_interp", CubicHermiteSpline(self.grid, self.du, self.d2u))

    @property
    def span(self):
        return float(self.grid[0]), float(self.grid[-1])

    def _check(self, k):
        lo, hi = self.span
        ka = np.asarray(k, dtype=float)
        if np.any(ka < lo * (1 - 1e-14)) or np.any(ka > hi * (1 + 1e-14)):
            raise DomainError(f"capital outside the solved span [{lo}, {hi}]")
        return ka

    def value(self, k):
        ka = self._check(k)
        out = self._u_interp(ka)
        return float(out) if out.ndim == 0 else out

    def derivative(self, k):
        ka = self._check(k)
        out = self._du_interp(ka)
        return float(out) if out.ndim == 0 else out

    def consumption(self, k):
        """chi(k) = c*(u'(k))."""
        return self.economy.utility.inverse_marginal(self.derivative(k))

    def drift(self, k):
        """b(k) = f(k) - c*(u'(k)); exactly zero at kappa*.

        Within 1e-6 kappa* of kappa* the difference f - c* is dominated by
        rounding, so the local expansion -theta x + b2 x^2 is used instead;
        this keeps the sign of b exact arbitrarily close to kappa*.
        """
        ka = self._check(k)
        b = self.economy.net_output(ka, self.w) - self.economy.utility.inverse_marginal(self._du_interp(ka))
        x = ka - self.kappa_star
        b = np.where(np.abs(x) < _LOCAL_DRIFT * self.kappa_star, self.golden.local_drift(x), b)
        return float(b) if b.ndim == 0 else b

    def drift_offset(self, x):
        """b(kappa* + x), evaluated without forming kappa* + x when |x| is tiny."""
        x = np.asarray(x, dtype=float)
        ks = self.kappa_star
        near = np.abs(x) < _LOCAL_DRIFT * ks
        out = self.golden.local_drift(x)
        if not np.all(near):
            out = np.where(near, out, self.drift(np.where(near, ks, ks + x)))
        return float(out) if np.ndim(out) == 0 else out

    @property
    def b(self):
        return self.drift(self.grid)

    @property
    def chi(self):
        return self.economy.utility.inverse_marginal(self.du)

    def hjb_residual(self, k=None):
        """-rho u + H(k, u', w) at the grid points (or at ``k``)."""
        k = self.grid if k is None else np.asarray(k, dtype=float)
        u = self.u if k is self.grid else self.value(k)
        du = self.du if k is self.grid else self.derivative(k)
        return -self.economy.params.rho * u + hamiltonian(self.economy, k, du, self.w)

    def to_csv(self, path):
        from .report import write_csv

        write_csv(path, ["k", "u", "du", "b", "chi"],
                  np.column_stack([self.grid, self.u, self.du, self.b, self.chi]))


def _branch_rhs(economy: Economy, w, branch: Branch):
    util = economy.utility
    rho = economy.params.rho
    net = economy.net_output

    def rhs(k, u):
        f = float(net(k, w))
        br = branch
        if branch is Branch.DECREASING and f <= 0:
            br = Branch.RIGHT_INVERSE
        return _invert(util, f, rho * u, br)

    return rhs


def _integrate_piece(economy, w, branch, k_start, u_start, targets, spec, stats):
    rhs = _branch_rhs(economy, w, branch)
    try:
        us = integrate_through(rhs, k_start, u_start, targets, rtol=spec.rtol, atol=spec.atol,
                               h_init=1e-2 * abs(targets[0] - k_start) if len(targets) else None,
                               stats=stats)
    except RegionExit as exc:
        raise InternalSolverError(
            f"{branch.value} piece left the admissible region at k={exc.x:.6g}; "
            "the exact solution exists globally, so this is an integrator failure") from exc
    return np.array(us)


def _derivatives(economy, w, grid, u, golden):
    """u' by branch inversion and u'' from the differentiated HJB."""
    util = economy.utility
    rho = economy.params.rho
    du = np.empty_like(u)
    for i, (k, ui) in enumerate(zip(grid, u)):
        if k == golden.kappa:
            du[i] = golden.q
            continue
        f = float(economy.net_output(k, w))
        if k < golden.kappa:
            br = Branch.INCREASING
        else:
            br = Branch.DECREASING if f > 0 else Branch.RIGHT_INVERSE
        du[i] = _invert(util, f, rho * ui, br)
    b = economy.net_output(grid, w) - util.inverse_marginal(du)
    fp = economy.net_output_dk(grid, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        d2u = du * (rho - fp) / b
    return du, d2u


def _solve_taylor(economy, w, grid, golden, spec, stats):
    ks = golden.kappa
    ht = spec.taylor_window * ks
    inner = np.abs(grid - ks) <= ht * (1 + 1e-12)
    u = np.empty_like(grid)
    du = np.empty_like(grid)
    d2u = np.empty_like(grid)
    u[inner], du[inner], d2u[inner] = golden.taylor(grid[inner])

    right = grid > ks + ht * (1 + 1e-12)
    if right.any():
        k_start = ks + ht
        u_start = golden.taylor(k_start)[0]
        u[right] = _integrate_piece(economy, w, Branch.DECREASING, k_start, u_start, grid[right], spec, stats)
    left = grid < ks - ht * (1 + 1e-12)
    if left.any():
        k_start = ks - ht
        u_start = golden.taylor(k_start)[0]
        u[left] = _integrate_piece(economy, w, Branch.INCREASING, k_start, u_start, grid[left][::-1],
                                   spec, stats)[::-1]
    outer = ~inner
    du_o, d2u_o = _derivatives(economy, w, grid[outer], u[outer], golden)
    du[outer], d2u[outer] = du_o, d2u_o
    return u, du, d2u


def _solve_offset(economy, w, grid, golden, spec, eps, stats):
    ks = golden.kappa
    lam = golden.u + eps * (1.0 + abs(golden.u))
    u = np.empty_like(grid)
    at = grid == ks
    u[at] = golden.u
    right = grid > ks
    left = grid < ks
    u[right] = _integrate_piece(economy, w, Branch.DECREASING, ks, lam, grid[right], spec, stats)
    u[left] = _integrate_piece(economy, w, Branch.INCREASING, ks, lam, grid[left][::-1], spec, stats)[::-1]
    du, d2u = _derivatives(economy, w, grid, u, golden)
    d2u[at] = golden.s
    return u, du, d2u


def solve_value(economy: Economy, w, grid_spec: GridSpec | None = None, start="taylor",
                verify=False, eps_reg=(1e-4, 1e-5, 1e-6), tol=1e-6) -> ValueSolution:
    """Solve the stationary HJB at prices ``w`` on a clustered capital grid.

    With ``verify=True`` the solution is recomputed with a ten times smaller
    regularization and a :class:`ConvergenceError` is raised if the two differ
    by more than ``10 * tol`` in sup-norm. In ``"offset"`` mode the
    successive lifts in ``eps_reg`` are always compared.
    """
    spec = grid_spec or GridSpec()
    w = np.atleast_1d(np.asarray(w, dtype=float)).copy()
    golden = golden_rule(economy, w)
    k0 = break_even_capital(economy.production, economy.params, w)
    grid = build_grid(economy, w, spec, golden.kappa, k0)
    stats = {}
    if start == "taylor":
        u, du, d2u = _solve_taylor(economy, w, grid, golden, spec, stats)
        if verify:
            finer = GridSpec(**{**spec.__dict__, "taylor_window": spec.taylor_window / 10})
            u_f, _, _ = _solve_taylor(economy, w, grid, golden, finer, {})
            gap = float(np.max(np.abs(u - u_f)))
            stats["regularization_gap"] = gap
            if gap > 10 * tol:
                raise ConvergenceError(f"regularized solutions differ by {gap:.3e}")
    elif start == "offset":
        prev = None
        for eps in eps_reg:
            u, du, d2u = _solve_offset(economy, w, grid, golden, spec, eps, stats)
            if prev is not None:
                gap = float(np.max(np.abs(u - prev)))
                stats.setdefault("offset_gaps", []).append(gap)
            prev = u
        gaps = stats.get("offset_gaps", [])
        if len(gaps) >= 2 and not gaps[-1] < gaps[0]:
            raise ConvergenceError(f"offset-regularized solutions do not converge: gaps {gaps}")
    else:
        raise ValueError(f"unknown start {start!r}")
    return ValueSolution(grid=grid, u=u, du=du, d2u=d2u, kappa_star=golden.kappa, k0=k0, w=w,
                         economy=economy, golden=golden, stats=stats)


def drift(solution: ValueSolution, k):
    return solution.drift(k)


# ---------------------------------------------------------------------------
# Shooting construction on the left of kappa*
# ---------------------------------------------------------------------------

def shoot_upward(economy: Economy, w, eps: float, targets, end_gap=1e-3, rtol=1e-12, atol=1e-12,
                 max_bisections=80):
    """Value on [eps, kappa*) by bisection on the left-anchor value.

    Trajectories of du/dk = F_up(k, u) started at (eps, lam) either leave the
    admissible region before kappa* (lam too small) or reach it (lam in the
    admissible set). The infimum of the admissible set is located by bisection
    and the corresponding trajectory is returned at ``targets`` (ascending,
    all in [eps, kappa*(1 - end_gap)]).
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    g = golden_rule(economy, w)
    rho = economy.params.rho
    rhs = _branch_rhs(economy, w, Branch.INCREASING)
    k_end = g.kappa * (1.0 - end_gap)
    targets = sorted(float(t) for t in targets)
    if targets and not (eps < targets[0] and targets[-1] < k_end):
        raise DomainError(f"shooting targets must lie in ({eps}, {k_end})")
    lo = economy.utility.value(float(economy.net_output(eps, w))) / rho
    hi = g.u + 1e-12 * (1.0 + abs(g.u))

    def reaches(lam):
        # values are recorded in the same run that decides admissibility
        try:
            return integrate_through(rhs, eps, lam, targets + [k_end], rtol=rtol, atol=atol)[:-1]
        except (RegionExit, DomainError):
            return None

    vals = reaches(hi)
    if vals is None:
        raise ConvergenceError("upper shooting value does not reach kappa*")
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        out = reaches(mid)
        if out is not None:
            hi, vals = mid, out
        else:
            lo = mid
    return hi, np.array(vals)
