"""Stationary capital density m(., w) from the explicit flux formula.

Writing y = b m, the stationary Fokker-Planck equation (b m)' = eta - nu m is
a linear first-order ODE in y whose solution integrates eta against the
weight exp(-int nu/|b|) *away* from kappa*. On each side the sweep runs from
the outer end of the grid toward kappa*, so every exponential weight is at
most one. The density is never evaluated within ``h_sing`` of kappa*; the
mass there comes from the local solution m ~ C |k - kappa*|^p + const.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .hjb import ValueSolution

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _gauss(a, b):
    """Nodes and weights of the 8-point rule on each [a_i, b_i]; shapes (..., 8)."""
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (_GL_X + 1.0), half * _GL_W


def _integration_matrix():
    """S[j, l] = int_{-1}^{x_j} L_l, with L_l the Lagrange basis on the Gauss nodes x."""
    leg = np.polynomial.legendre
    n = _GL_X.size
    V = leg.legvander(_GL_X, n - 1)
    prims = np.stack([leg.legval(_GL_X, leg.legint(np.eye(n)[i], lbnd=-1)) for i in range(n)], axis=1)
    return prims @ np.linalg.inv(V)


_GL_S = _integration_matrix()


def _sweep(knots, rate, source):
    """Solve y' = source - rate * y, y(knots[0]) = 0, along increasing ``knots``.

    ``rate`` = nu/|b| > 0 and ``source`` = eta are vectorized callables of the
    knot coordinate. Within each interval the cumulative integrals are taken
    with the spectral integration matrix on the 8 Gauss nodes, so rate and
    source are only sampled at those nodes. Returns y at the knots and, for the
    nodes of every interval, (nodes, weights, y(nodes)).
    """
    a, c = knots[:-1], knots[1:]
    x, wx = _gauss(a, c)                           # (n, G)
    half = 0.5 * (c - a)[:, None]
    r = rate(x)
    src = source(x)
    dP = np.sum(wx * r, axis=-1)                   # int_a^c rate
    A = half * (r @ _GL_S.T)                       # int_a^x rate at the nodes
    # int_a^c eta(x) exp(-(P(c) - P(x))) dx, every weight <= 1
    S = np.sum(wx * src * np.exp(A - dP[:, None]), axis=-1)
    # int_a^{x_j} eta(s) exp(-(A(x_j) - A(s))) ds: the factor exp(A(s) - A(x_j)) is
    # split as exp(A(s)) exp(-A(x_j)); A stays O(1) on an interval
    E = np.exp(A)
    S_x = np.exp(-A) * (half * ((src * E) @ _GL_S.T))

    y = np.zeros(knots.size)
    decay = np.exp(-dP)
    for i in range(a.size):
        y[i + 1] = decay[i] * y[i] + S[i]
    y_x = np.exp(-A) * y[:-1, None] + S_x
    return y, x, wx, y_x


@dataclass(frozen=True)
class DensitySolution:
    grid: np.ndarray
    m: np.ndarray
    kappa_star: float
    exponent: tuple
    window_mass: float
    total_mass: float
    h_sing: float
    nu: float
    eta_integral: float
    support: tuple
    quad_nodes: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)
    quad_m: np.ndarray = field(repr=False)
    window_masses: tuple = field(default=(0.0, 0.0), repr=False)
    window_nodes: tuple = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("grid", "m", "quad_nodes", "quad_weights", "quad_m"):
            getattr(self, name).flags.writeable = False

    def measure(self):
        """Nodes and weights of the discrete measure approximating m dk.

        Each half of the clip window contributes one point at the centroid of
        its local model, which makes the rule exact for integrands linear
        across the window.
        """
        centroids = self.window_nodes or (self.kappa_star, self.kappa_star)
        nodes = np.concatenate([self.quad_nodes, centroids])
        weights = np.concatenate([self.quad_weights * self.quad_m, self.window_masses])
        return nodes, weights

    @property
    def left_mass(self) -> float:
        """int_0^kappa* m, including the left half of the window."""
        left = self.quad_nodes < self.kappa_star
        return float(np.sum((self.quad_weights * self.quad_m)[left])) + self.window_masses[0]

    def cdf(self, k):
        """Cumulative mass int_{-inf}^k m, with the window mass placed at kappa*."""
        order = np.argsort(self.quad_nodes)
        nodes = self.quad_nodes[order]
        cum = np.concatenate([[0.0], np.cumsum((self.quad_weights * self.quad_m)[order])])
        k = np.asarray(k, dtype=float)
        out = cum[np.searchsorted(nodes, k, side="right")]
        out = out + np.where(k >= self.kappa_star, self.window_mass, 0.0)
        return float(out) if out.ndim == 0 else out

    def summary(self) -> dict:
        return {
            "total_mass": self.total_mass,
            "window_mass": self.window_mass,
            "exponent_left": self.exponent[0],
            "exponent_right": self.exponent[1],
            "support_lo": self.support[0],
            "support_hi": self.support[1],
            "kappa_star": self.kappa_star,
            "h_sing": self.h_sing,
        }

    def to_csv(self, path, summary_path=None):
        from .report import write_csv, write_json

        write_csv(path, ["k", "m"], np.column_stack([self.grid, self.m]))
        if summary_path is not None:
            write_json(summary_path, self.summary())


def _window_model(m_edge, eta0, theta, h, p):
    """Mass on a half-window of width h.

    Near kappa*, b ~ -theta d (d the signed offset) and the local solution of
    (b m)' = eta0 - nu m is m = m_edge x^p + (eta0/theta)(1 - x^p)/p with
    x = |d|/h (the p -> 0 limit is logarithmic). Its integral over the window is
    h (m_edge + eta0/theta)/(p + 1).
    """
    if m_edge <= 0 and eta0 <= 0:
        return 0.0
    return h * (m_edge + eta0 / theta) / (p + 1.0)


def _window_centroid(m_edge, eta0, theta, h, p):
    """Mean distance from kappa* of the window model mass."""
    c = eta0 / theta
    if m_edge + c <= 0:
        return 0.5 * h
    return h * (p + 1.0) * (m_edge + 0.5 * c) / ((p + 2.0) * (m_edge + c))


def singular_exponent(value: ValueSolution, nu, h=None):
    """p = nu/theta - 1 on each side of kappa*, theta from one-sided drift slopes.

    theta is estimated by Richardson extrapolation of b(kappa* -+ h)/(+-h) at h
    and h/2. Returns ((p_left, p_right), (theta_left, theta_right)).
    """
    ks = value.kappa_star
    h = 1e-3 * ks if h is None else h
    thetas = []
    for sgn in (-1.0, 1.0):
        t1 = -sgn * value.drift(ks + sgn * h) / h
        t2 = -sgn * value.drift(ks + sgn * h / 2) / (h / 2)
        thetas.append(2.0 * t2 - t1)
    if min(thetas) < 1e-12:
        raise DomainError(f"degenerate drift at kappa*: slopes {thetas}")
    ps = tuple(nu / t - 1.0 for t in thetas)
    return ps, tuple(thetas)


def solve_density(economy, value: ValueSolution, h_sing=None, h_sing_rel=1e-4) -> DensitySolution:
    """Stationary density at the prices of ``value``.

    ``h_sing`` is the absolute half-width of the clip window; by default it is
    ``h_sing_rel`` times the width of the support interval.
    """
    entry = economy.entry
    nu = economy.params.nu
    ks = value.kappa_star
    sup_lo, sup_hi = min(entry.a1, ks), max(entry.a2, ks)
    k_lo, k_hi = value.span
    if k_lo > sup_lo or k_hi < sup_hi:
        raise DomainError(f"value grid [{k_lo}, {k_hi}] does not cover the support [{sup_lo}, {sup_hi}]")
    if h_sing is None:
        h_sing = h_sing_rel * (sup_hi - sup_lo)
    (p_l, p_r), (th_l, th_r) = singular_exponent(value, nu)

    def eta(k):
        return entry.rate(k, value.value(k)) if entry.mode != "constant" else entry.density(k)

    def rate(k):
        return nu / np.abs(value.drift(k))

    grid = value.grid
    # left side: knots from sup_lo up to kappa* - h
    edge_l = ks - h_sing
    if sup_lo < edge_l:
        left = np.unique(np.concatenate([[sup_lo, edge_l], [ks - 2 * h_sing] if ks - 2 * h_sing > sup_lo else [],
                                         grid[(grid > sup_lo) & (grid < edge_l)]]))
        y_l, x_l, w_l, yx_l = _sweep(left, rate, eta)
        m_l = y_l / value.drift(left)
        m_l[0] = 0.0
        mx_l = yx_l / value.drift(x_l)
    else:
        left, m_l = np.empty(0), np.zeros(0)
        x_l, w_l, mx_l = np.empty((0, 8)), np.empty((0, 8)), np.empty((0, 8))

    # right side in the reflected coordinate z = -k, swept from -sup_hi toward -(kappa* + h)
    edge_r = ks + h_sing
    if sup_hi > edge_r:
        right = np.unique(np.concatenate([[edge_r, sup_hi], [ks + 2 * h_sing] if ks + 2 * h_sing < sup_hi else [],
                                          grid[(grid > edge_r) & (grid < sup_hi)]]))
        z = -right[::-1]
        y_r, x_r, w_r, yx_r = _sweep(z, lambda zz: rate(-zz), lambda zz: eta(-zz))
        m_r = (y_r / -value.drift(-z))[::-1]
        m_r[-1] = 0.0
        mx_r = yx_r / -value.drift(-x_r)
        x_r = -x_r
    else:
        right = np.empty(0)
        m_r = np.zeros(0)
        x_r, w_r, mx_r = np.empty((0, 8)), np.empty((0, 8)), np.empty((0, 8))

    # local model in the window, Richardson-corrected against the model at 2h
    # plus exact quadrature over the ring h < |k - kappa*| < 2h
    eta0 = float(eta(np.array([ks]))[0])

    def window(knots, vals, xq, wq, mq, side, theta, p):
        w_h = _window_model(float(vals[0 if side > 0 else -1]), eta0, theta, h_sing, p)
        hit = np.abs(knots - (ks + 2 * side * h_sing)) <= 1e-13 * ks
        if not hit.any():
            return w_h
        d = side * (xq - ks)
        ring = float(np.sum((wq * mq)[(d > h_sing) & (d < 2 * h_sing)]))
        w_alt = _window_model(float(vals[hit][0]), eta0, theta, 2 * h_sing, p)
        r = 2.0 ** (p + 2.0)
        w_alt -= ring
        return (r * w_h - w_alt) / (r - 1.0)

    wm_l = window(left, m_l, x_l, w_l, mx_l, -1, th_l, p_l) if left.size else 0.0
    wm_r = window(right, m_r, x_r, w_r, mx_r, 1, th_r, p_r) if right.size else 0.0
    c_l = ks - _window_centroid(float(m_l[-1]), eta0, th_l, h_sing, p_l) if left.size else ks
    c_r = ks + _window_centroid(float(m_r[0]), eta0, th_r, h_sing, p_r) if right.size else ks

    nodes = np.concatenate([x_l.ravel(), x_r.ravel()])
    weights = np.concatenate([w_l.ravel(), w_r.ravel()])
    mq = np.concatenate([mx_l.ravel(), mx_r.ravel()])
    total = float(np.sum(weights * mq)) + wm_l + wm_r

    # eta integral on the entry support with the same rule
    ek = np.unique(np.concatenate([[entry.a1, entry.a2], grid[(grid > entry.a1) & (grid < entry.a2)]]))
    xe, we = _gauss(ek[:-1], ek[1:])
    eta_int = float(np.sum(we * eta(xe)))

    below = grid[grid < min(sup_lo, edge_l)]
    above = grid[grid > max(sup_hi, edge_r)]
    out_grid = np.concatenate([below, left, right, above])
    out_m = np.concatenate([np.zeros(below.size), m_l, m_r, np.zeros(above.size)])
    if np.any(out_m < -1e-14 * np.max(np.abs(out_m))):
        raise DomainError("negative density values; drift sign pattern is broken")
    out_m = np.maximum(out_m, 0.0)
    return DensitySolution(grid=out_grid, m=out_m, kappa_star=ks, exponent=(p_l, p_r),
                           window_mass=wm_l + wm_r, total_mass=total, h_sing=h_sing, nu=nu,
                           eta_integral=eta_int, support=(sup_lo, sup_hi), quad_nodes=nodes,
                           quad_weights=weights, quad_m=mq, window_masses=(wm_l, wm_r),
                           window_nodes=(c_l, c_r))


def integrate_against(density: DensitySolution, integrand):
    """int integrand(k) m(k) dk; ``integrand`` may return shape (n,) or (n, d)."""
    nodes, weights = density.measure()
    vals = np.asarray(integrand(nodes), dtype=float)
    out = np.tensordot(weights, vals, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out
