"""Model primitives: utility, production, entry of firms and input supply.

Every function accepts either a Python float or a numpy array for the capital
argument ``k``. Prices ``w`` are always a length-``d`` sequence. Scalar calls go
through ``math`` so that the ODE right-hand sides stay cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError


def _is_scalar(x):
    return isinstance(x, float) or np.ndim(x) == 0


def _as_prices(w) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(~(w > 0)):
        raise DomainError(f"prices must be positive, got {w}")
    return w


# ---------------------------------------------------------------------------
# Utility
# ---------------------------------------------------------------------------

class Utility:
    """CRRA utility. Subclasses define U and its derivatives on (0, inf)."""

    #: lim_{c -> 0+} U(c) and lim_{c -> inf} U(c)
    inf_value = -math.inf
    sup_value = math.inf

    def _check_c(self, c):
        if isinstance(c, float):
            if not c > 0:
                raise DomainError("consumption must be positive")
        elif np.any(~(np.asarray(c) > 0)):
            raise DomainError("consumption must be positive")

    def _check_q(self, q):
        if isinstance(q, float):
            if not q > 0:
                raise DomainError("costate must be positive (the Hamiltonian is +inf for q <= 0)")
        elif np.any(~(np.asarray(q) > 0)):
            raise DomainError("costate must be positive (the Hamiltonian is +inf for q <= 0)")


@dataclass(frozen=True)
class LogUtility(Utility):
    """U(c) = ln c."""

    def value(self, c):
        self._check_c(c)
        return math.log(c) if _is_scalar(c) else np.log(c)

    def marginal(self, c):
        self._check_c(c)
        return 1.0 / c

    def second(self, c):
        return -1.0 / (c * c)

    def third(self, c):
        return 2.0 / (c * c * c)

    def inverse_marginal(self, q):
        self._check_q(q)
        return 1.0 / q

    def conjugate(self, q):
        self._check_q(q)
        return (-math.log(q) if _is_scalar(q) else -np.log(q)) - 1.0


@dataclass(frozen=True)
class PowerUtility(Utility):
    """U(c) = c**b / b with 0 < b < 1."""

    b: float = 0.5
    inf_value = 0.0

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise DomainError(f"power utility exponent must lie in (0, 1), got {self.b}")

    def value(self, c):
        self._check_c(c)
        return c ** self.b / self.b

    def marginal(self, c):
        self._check_c(c)
        return c ** (self.b - 1.0)

    def second(self, c):
        return (self.b - 1.0) * c ** (self.b - 2.0)

    def third(self, c):
        return (self.b - 1.0) * (self.b - 2.0) * c ** (self.b - 3.0)

    def inverse_marginal(self, q):
        self._check_q(q)
        return q ** (1.0 / (self.b - 1.0))

    def conjugate(self, q):
        self._check_q(q)
        return (1.0 / self.b - 1.0) * q ** (self.b / (self.b - 1.0))


def utility_value(spec: Utility, c):
    return spec.value(c)


def consumption_argmax(spec: Utility, q):
    """Consumption maximizing U(c) - c q, the inverse of U'."""
    return spec.inverse_marginal(q)


def utility_conjugate(spec: Utility, q):
    """sup_c {U(c) - c q}."""
    return spec.conjugate(q)


# ---------------------------------------------------------------------------
# Production
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CobbDouglas:
    """F(k, l) = A k**alpha * prod(l_i**beta_i)."""

    A: float
    alpha: float
    beta: tuple

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        object.__setattr__(self, "beta", beta)
        sb = sum(beta)
        if self.A <= 0:
            raise DomainError("A must be positive")
        if any(not 0.0 < b < 1.0 for b in beta) or sb >= 1.0:
            raise DomainError(f"input elasticities must lie in (0,1) with sum < 1, got {beta}")
        if not 0.0 < self.alpha < 1.0 - sb:
            raise DomainError(f"capital elasticity must lie in (0, 1-|beta|), got {self.alpha}")

    @property
    def d(self) -> int:
        return len(self.beta)

    def _scale(self, w):
        # C(w) = (A prod (beta_i/w_i)^beta_i)^(1/(1-|beta|))
        w = _as_prices(w)
        sb = sum(self.beta)
        logc = math.log(self.A) + sum(b * math.log(b / wi) for b, wi in zip(self.beta, w))
        return math.exp(logc / (1.0 - sb)), sb

    def output(self, k, ell):
        ell = np.asarray(ell, dtype=float)
        return self.A * np.asarray(k, dtype=float) ** self.alpha * np.prod(ell ** np.asarray(self.beta), axis=-1)

    def gross_output(self, k, w):
        C, sb = self._scale(w)
        a = self.alpha / (1.0 - sb)
        return (1.0 - sb) * C * k ** a

    def gross_output_dk(self, k, w):
        C, sb = self._scale(w)
        a = self.alpha / (1.0 - sb)
        return self.alpha * C * k ** (a - 1.0)

    def gross_output_dkk(self, k, w):
        C, sb = self._scale(w)
        a = self.alpha / (1.0 - sb)
        return self.alpha * (a - 1.0) * C * k ** (a - 2.0)

    def gross_output_dkkk(self, k, w):
        C, sb = self._scale(w)
        a = self.alpha / (1.0 - sb)
        return self.alpha * (a - 1.0) * (a - 2.0) * C * k ** (a - 3.0)

    def input_demand(self, k, w):
        w = _as_prices(w)
        C, sb = self._scale(w)
        a = self.alpha / (1.0 - sb)
        base = C * np.asarray(k, dtype=float) ** a
        return base[..., None] * (np.asarray(self.beta) / w)

    def kappa_closed_form(self, rho, delta, w):
        """Root of dg/dk = rho + delta in closed form."""
        w = _as_prices(w)
        sb = sum(self.beta)
        e = 1.0 - self.alpha - sb
        prod = self.A * math.exp(sum(b * math.log(b / wi) for b, wi in zip(self.beta, w)))
        return (self.alpha / (rho + delta)) ** ((1.0 - sb) / e) * prod ** (1.0 / e)


@dataclass(frozen=True)
class CES:
    """F(k, l) = (k**alpha + sum(l_i**beta_i))**gamma."""

    alpha: float
    beta: tuple
    gamma: float

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        object.__setattr__(self, "beta", beta)
        for name, v in (("alpha", self.alpha), ("gamma", self.gamma)) + tuple(("beta", b) for b in beta):
            if not 0.0 < v < 1.0:
                raise DomainError(f"CES parameter {name} must lie in (0, 1), got {v}")

    @property
    def d(self) -> int:
        return len(self.beta)

    def output(self, k, ell):
        ell = np.asarray(ell, dtype=float)
        inner = np.asarray(k, dtype=float) ** self.alpha + np.sum(ell ** np.asarray(self.beta), axis=-1)
        return inner ** self.gamma

    # lambda(k, w) solves  ln lam + (1-gamma) ln X(lam) = ln gamma
    # with X(lam) = k^alpha + sum_j (lam beta_j / w_j)^(beta_j/(1-beta_j)).

    def _multiplier_scalar(self, k, w, tol=1e-14, max_doublings=200):
        a = self.alpha
        ka = k ** a if k > 0 else 0.0
        coefs = [(b / wi, b / (1.0 - b)) for b, wi in zip(self.beta, w)]
        lg = math.log(self.gamma)
        g1 = 1.0 - self.gamma

        def phi(lam):
            X = ka + sum((lam * c) ** e for c, e in coefs)
            return math.log(lam) + g1 * math.log(X) - lg, X

        lo = hi = 1.0
        plo, _ = phi(lo)
        n = 0
        if plo > 0:
            while plo > 0:
                hi, lo = lo, lo / 2.0
                plo, _ = phi(lo)
                n += 1
                if n > max_doublings:
                    raise ConvergenceError("CES multiplier bracket expansion failed")
        else:
            phi_hi = plo
            while phi_hi < 0:
                lo, hi = hi, hi * 2.0
                phi_hi, _ = phi(hi)
                n += 1
                if n > max_doublings:
                    raise ConvergenceError("CES multiplier bracket expansion failed")
        # safeguarded Newton in log(lam)
        x_lo, x_hi = math.log(lo), math.log(hi)
        x = 0.5 * (x_lo + x_hi)
        for _ in range(100):
            lam = math.exp(x)
            p, X = phi(lam)
            if p > 0:
                x_hi = x
            else:
                x_lo = x
            dX = sum(e * (lam * c) ** e for c, e in coefs)
            dp = 1.0 + g1 * dX / X
            step = p / dp
            x_new = x - step
            if not x_lo < x_new < x_hi:
                x_new = 0.5 * (x_lo + x_hi)
            if abs(x_new - x) < tol:
                return math.exp(x_new)
            x = x_new
        raise ConvergenceError("CES multiplier Newton iteration did not converge")

    def _multiplier_array(self, k, w, tol=1e-14):
        k = np.asarray(k, dtype=float)
        ka = np.where(k > 0, np.abs(k) ** self.alpha, 0.0)
        c = np.asarray(self.beta) / w
        e = np.asarray(self.beta) / (1.0 - np.asarray(self.beta))
        g1 = 1.0 - self.gamma
        lg = math.log(self.gamma)

        def phi(x):
            terms = np.exp(e * (x[..., None] + np.log(c)))
            X = ka + terms.sum(axis=-1)
            dX = (e * terms).sum(axis=-1)
            return x + g1 * np.log(X) - lg, 1.0 + g1 * dX / X

        # phi is increasing and convex in x = log(lam) with 1 <= phi' <= 1 + (1-gamma) max(e),
        # so plain Newton converges from any start (monotonically after the first step)
        x = np.zeros_like(ka)
        for _ in range(100):
            p, dp = phi(x)
            x_new = x - p / dp
            done = np.max(np.abs(x_new - x), initial=0.0) < tol
            x = x_new
            if done:
                return np.exp(x)
        raise ConvergenceError("CES multiplier Newton iteration did not converge")

    def multiplier(self, k, w):
        w = _as_prices(w)
        if np.any(np.asarray(k) < 0):
            raise DomainError("capital must be nonnegative")
        if _is_scalar(k):
            return self._multiplier_scalar(float(k), w)
        return self._multiplier_array(k, w)

    def _parts(self, k, w):
        w = _as_prices(w)
        lam = self.multiplier(k, w)
        b = np.asarray(self.beta)
        lam_a = np.asarray(lam, dtype=float)[..., None]
        ell = (lam_a * b / w) ** (1.0 / (1.0 - b))
        L = (lam_a * b / w) ** (b / (1.0 - b))
        X = np.asarray(k, dtype=float) ** self.alpha + L.sum(axis=-1)
        return w, lam, ell, L, X

    def _gross_output_scalar(self, k, w):
        lam = self._multiplier_scalar(k, w)
        X = k ** self.alpha if k > 0 else 0.0
        cost = 0.0
        for b, wi in zip(self.beta, w):
            ell = (lam * b / wi) ** (1.0 / (1.0 - b))
            X += ell ** b
            cost += wi * ell
        return X ** self.gamma - cost

    def gross_output(self, k, w):
        if _is_scalar(k):
            w = _as_prices(w)
            if not k >= 0:
                raise DomainError("capital must be nonnegative")
            return self._gross_output_scalar(float(k), w)
        w, lam, ell, L, X = self._parts(k, w)
        out = X ** self.gamma - (ell * w).sum(axis=-1)
        return float(out) if _is_scalar(k) else out

    def gross_output_dk(self, k, w):
        lam = self.multiplier(k, w)
        return self.alpha * lam * k ** (self.alpha - 1.0)

    def _lambda_dk(self, k, w):
        w, lam, ell, L, X = self._parts(k, w)
        e = np.asarray(self.beta) / (1.0 - np.asarray(self.beta))
        g1 = 1.0 - self.gamma
        S = (e * L).sum(axis=-1)
        dlam = -lam * g1 * self.alpha * k ** (self.alpha - 1.0) / X / (1.0 + g1 * S / X)
        return lam, dlam

    def gross_output_dkk(self, k, w):
        lam, dlam = self._lambda_dk(k, w)
        a = self.alpha
        out = a * (dlam * k ** (a - 1.0) + (a - 1.0) * lam * k ** (a - 2.0))
        return float(out) if _is_scalar(k) else out

    def gross_output_dkkk(self, k, w):
        h = 1e-4 * k
        return (self.gross_output_dkk(k + h, w) - self.gross_output_dkk(k - h, w)) / (2.0 * h)

    def input_demand(self, k, w):
        w, lam, ell, L, X = self._parts(k, w)
        return ell


ProductionSpec = CobbDouglas | CES


def ces_multiplier(prod: CES, k, w):
    return prod.multiplier(k, w)


def gross_output(prod, k, w):
    """g(k, w) = sup_l F(k, l) - w . l."""
    if np.any(np.asarray(k) < 0):
        raise DomainError("capital must be nonnegative")
    return prod.gross_output(k, w)


def input_demand(prod, k, w):
    """Optimal input bundle l*(k, w); last axis indexes inputs."""
    if np.any(np.asarray(k) < 0):
        raise DomainError("capital must be nonnegative")
    return prod.input_demand(k, w)


# ---------------------------------------------------------------------------
# Parameters, entry, supply
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EconomyParams:
    rho: float
    delta: float
    nu: float
    c_hat: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if not self.nu > 0:
            raise DomainError("nu must be positive")
        if not self.delta >= 0:
            raise DomainError("delta must be nonnegative")
        if not self.c_hat >= 1:
            raise DomainError("c_hat must be at least 1")


@dataclass(frozen=True)
class EntrySpec:
    """Raised-cosine entry density on [a1, a2], optionally modulated by the firm value.

    ``mode`` is ``"constant"`` (eta = eta_hat) or ``"bounded"``, in which case
    eta(k, v) = eta_hat(k) * r(v) with r a sigmoid of v / v_scale squeezed into
    [1/c_hat, c_hat].
    """

    a1: float
    a2: float
    mode: str = "constant"
    v_scale: float = 1.0
    c_hat: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.a1 < self.a2 < math.inf:
            raise DomainError("entry support must satisfy 0 < a1 < a2 < inf")
        if self.mode not in ("constant", "bounded"):
            raise DomainError(f"unknown entry mode {self.mode!r}")
        if self.v_scale <= 0:
            raise DomainError("v_scale must be positive")
        if self.c_hat < 1:
            raise DomainError("c_hat must be at least 1")

    @property
    def width(self) -> float:
        return self.a2 - self.a1

    def density(self, k):
        """eta_hat(k); integrates to one."""
        k = np.asarray(k, dtype=float)
        x = (k - self.a1) / self.width
        inside = (x > 0) & (x < 1)
        out = np.where(inside, (1.0 - np.cos(2.0 * np.pi * x)) / self.width, 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, k):
        x = np.clip((np.asarray(k, dtype=float) - self.a1) / self.width, 0.0, 1.0)
        return x - np.sin(2.0 * np.pi * x) / (2.0 * np.pi)

    def modulation(self, v):
        if self.mode == "constant":
            return np.ones_like(np.asarray(v, dtype=float))
        lo, hi = 1.0 / self.c_hat, self.c_hat
        s = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(v, dtype=float) / self.v_scale))
        return lo + (hi - lo) * s

    def rate(self, k, v):
        """eta(k, v)."""
        out = self.density(k) * self.modulation(v)
        return float(out) if np.ndim(out) == 0 else out


def entry_rate(entry: EntrySpec, k, v):
    return entry.rate(k, v)


@dataclass(frozen=True)
class PowerCurve:
    """S(t) = scale * t**exponent; exponent 0 gives a constant supply."""

    scale: float
    exponent: float = 1.0

    def __post_init__(self):
        if self.scale <= 0 or self.exponent < 0:
            raise DomainError("supply curve needs scale > 0 and exponent >= 0")

    def value(self, t):
        return self.scale * t ** self.exponent

    def antiderivative(self, t):
        return self.scale * t ** (self.exponent + 1.0) / (self.exponent + 1.0)

    def derivative(self, t):
        if self.exponent == 0:
            return 0.0 * t
        return self.scale * self.exponent * t ** (self.exponent - 1.0)


@dataclass(frozen=True)
class SeparableSupply:
    curves: tuple

    @property
    def d(self) -> int:
        return len(self.curves)

    def value(self, w):
        w = np.asarray(w, dtype=float)
        return np.array([c.value(wi) for c, wi in zip(self.curves, w)])

    def potential(self, w):
        w = np.asarray(w, dtype=float)
        return float(sum(c.antiderivative(wi) for c, wi in zip(self.curves, w)))

    def hessian(self, w):
        w = np.asarray(w, dtype=float)
        return np.diag([c.derivative(wi) for c, wi in zip(self.curves, w)])


@dataclass(frozen=True)
class SoftmaxSupply:
    """S_i(w) = exp(w_i/sigma) / sum_{j=0..d} exp(w_j/sigma) with w_0 a reserve price."""

    sigma: float
    w0: float
    d: int = 1

    def __post_init__(self):
        if self.sigma <= 0 or self.w0 <= 0:
            raise DomainError("softmax supply needs sigma > 0 and w0 > 0")

    def shares(self, w):
        z = np.concatenate(([self.w0], np.asarray(w, dtype=float))) / self.sigma
        z = np.exp(z - z.max())
        return z / z.sum()

    def value(self, w):
        return self.shares(w)[1:]

    def potential(self, w):
        z = np.concatenate(([self.w0], np.asarray(w, dtype=float))) / self.sigma
        m = z.max()
        return float(self.sigma * (m + math.log(np.exp(z - m).sum())))

    def hessian(self, w):
        s = self.value(w)
        return (np.diag(s) - np.outer(s, s)) / self.sigma


def supply_value(supply, w):
    return supply.value(w)


def supply_potential(supply, w):
    return supply.potential(w)


# ---------------------------------------------------------------------------
# Economy bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Economy:
    utility: Utility
    production: CobbDouglas | CES
    params: EconomyParams
    entry: EntrySpec
    supply: SeparableSupply | SoftmaxSupply | None = None

    @property
    def d(self) -> int:
        return self.production.d

    def net_output(self, k, w):
        return gross_output(self.production, k, w) - self.params.delta * k

    def net_output_dk(self, k, w):
        if np.any(~(np.asarray(k) > 0)):
            raise DomainError("the capital derivative of net output is only defined for k > 0")
        return self.production.gross_output_dk(k, w) - self.params.delta

    def net_output_dkk(self, k, w):
        return self.production.gross_output_dkk(k, w)

    def net_output_dkkk(self, k, w):
        return self.production.gross_output_dkkk(k, w)


def net_output(prod, params: EconomyParams, k, w):
    """f(k, w) = g(k, w) - delta k."""
    return gross_output(prod, k, w) - params.delta * k


def net_output_dk(prod, params: EconomyParams, k, w):
    if np.any(~(np.asarray(k) > 0)):
        raise DomainError("the capital derivative of net output is only defined for k > 0")
    return prod.gross_output_dk(k, w) - params.delta


def kappa_star(prod, params: EconomyParams, w, tol=1e-13) -> float:
    """Golden-rule capital: the root of df/dk(., w) = rho.

    df/dk is decreasing from +inf to -delta, so a geometric bracket followed by
    Brent's method always succeeds.
    """
    from scipy.optimize import brentq

    w = _as_prices(w)
    target = params.rho + params.delta

    def h(logk):
        return math.log(prod.gross_output_dk(math.exp(logk), w)) - math.log(target)

    lo, hi = -1.0, 1.0
    for _ in range(400):
        if h(lo) > 0:
            break
        lo -= 2.0
    else:
        raise ConvergenceError("could not bracket the golden-rule capital from below")
    for _ in range(400):
        if h(hi) < 0:
            break
        hi += 2.0
    else:
        raise ConvergenceError("could not bracket the golden-rule capital from above")
    x = brentq(h, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(x)


def break_even_capital(prod, params: EconomyParams, w) -> float | None:
    """Unique k0 > 0 with f(k0, w) = 0 when delta > 0, else None."""
    from scipy.optimize import brentq

    if params.delta == 0:
        return None
    w = _as_prices(w)
    ks = kappa_star(prod, params, w)
    hi = 2.0 * ks
    for _ in range(400):
        if net_output(prod, params, hi, w) < 0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the break-even capital")
    return brentq(lambda k: net_output(prod, params, k, w), ks, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
