"""Forward simulation: single firm trajectories, realized payoffs and a birth-death population.

Trajectories are integrated in the offset x = k - kappa*, where the drift is
evaluated without cancellation, so convergence to kappa* can be followed to
machine precision without the state ever stepping across it.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .density import DensitySolution, _gauss
from .errors import DomainError
from .hjb import ValueSolution

GENERATOR = "PCG64"


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    capital: np.ndarray
    offset: np.ndarray
    consumption: np.ndarray
    payoff: np.ndarray
    kappa_star: float
    rho: float
    tail: float = 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path):
        from .report import write_csv

        write_csv(path, ["t", "k", "chi", "payoff"],
                  np.column_stack([self.times, self.capital, self.consumption, self.payoff]))


def simulate_firm(value: ValueSolution, k0: float, horizon: float, n_out: int = 2001,
                  rtol: float = 1e-11) -> Trajectory:
    """Integrate dk/dt = b(k) from k0 and accumulate int_0^t U(chi) e^{-rho s} ds."""
    economy, w = value.economy, value.w
    lo, hi = value.span
    if not lo <= k0 <= hi:
        raise DomainError(f"k0={k0} outside the solved span [{lo}, {hi}]")
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    rho = economy.params.rho
    util = economy.utility
    ks = value.kappa_star
    x0 = float(k0) - ks

    def consumption(x):
        return float(economy.net_output(ks + x, w)) - value.drift_offset(x)

    def rhs(t, y):
        x = y[0]
        return [value.drift_offset(x), math.exp(-rho * t) * util.value(consumption(x))]

    t_eval = np.linspace(0.0, horizon, n_out)
    if x0 == 0.0:
        x = np.zeros(n_out)
        c = np.full(n_out, float(economy.net_output(ks, w)))
        pay = util.value(c[0]) * -np.expm1(-rho * t_eval) / rho
    else:
        # pure relative control on x keeps rho*h small enough that the sign of x is preserved
        sol = solve_ivp(rhs, (0.0, horizon), [x0, 0.0], method="DOP853", t_eval=t_eval,
                        rtol=rtol, atol=[1e-300, 1e-13])
        if not sol.success:
            raise RuntimeError(f"trajectory integration failed: {sol.message}")
        x, pay = sol.y
        c = np.array([consumption(xi) for xi in x])
    tail = math.exp(-rho * horizon) * util.value(float(c[-1])) / rho
    return Trajectory(times=t_eval, capital=ks + x, offset=x, consumption=c, payoff=pay,
                      kappa_star=ks, rho=rho, tail=tail)


def discounted_payoff(economy, traj: Trajectory) -> float:
    """Running payoff at the horizon plus the stationary tail e^{-rho T} U(chi(k_T)) / rho."""
    return float(traj.payoff[-1]) + traj.tail


@dataclass(frozen=True)
class PolicyOutcome:
    payoff: float
    exhausted_at: float | None
    trajectory: Trajectory = field(repr=False)


def constant_consumption_payoff(economy, w, k0: float, c_bar: float, horizon: float,
                                k_floor: float | None = None, n_out: int = 2001) -> PolicyOutcome:
    """Payoff of consuming c_bar while k > k_floor.

    If capital runs down to k_floor the firm switches to consuming f(k_floor),
    which keeps the state admissible; the remaining payoff is then analytic.
    Without exhaustion the policy is continued past the horizon (up to 40/rho
    more) to decide whether it stays admissible.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    rho = economy.params.rho
    util = economy.utility
    k_floor = 1e-3 * k0 if k_floor is None else k_floor
    u_bar = util.value(c_bar)

    def rhs(t, y):
        return [float(economy.net_output(max(y[0], 0.0), w)) - c_bar, math.exp(-rho * t) * u_bar]

    def floor_hit(t, y):
        return y[0] - k_floor
    floor_hit.terminal = True
    floor_hit.direction = -1

    t_end = horizon + 40.0 / rho
    sol = solve_ivp(rhs, (0.0, t_end), [k0, 0.0], method="DOP853", events=floor_hit,
                    rtol=1e-11, atol=1e-13, dense_output=True)
    hit = sol.t_events[0][0] if sol.t_events[0].size else None
    if hit is not None:
        pay = u_bar * -math.expm1(-rho * hit) / rho
        pay += math.exp(-rho * hit) * util.value(float(economy.net_output(k_floor, w))) / rho
    else:
        pay = u_bar / rho
    t_plot = np.linspace(0.0, min(horizon, hit) if hit is not None else horizon, n_out)
    ys = sol.sol(t_plot)
    traj = Trajectory(times=t_plot, capital=ys[0], offset=np.full(n_out, np.nan), consumption=np.full(n_out, c_bar),
                      payoff=ys[1], kappa_star=math.nan, rho=rho)
    return PolicyOutcome(payoff=pay, exhausted_at=hit, trajectory=traj)


def suboptimal_payoffs(value: ValueSolution, k0: float, horizon: float, factors=(0.5, 0.9, 1.1)):
    """Payoffs of the constant-consumption panel c_bar = factor * f(kappa*)."""
    f_star = value.golden.f
    return {fac: constant_consumption_payoff(value.economy, value.w, k0, fac * f_star, horizon).payoff
            for fac in factors}


# ---------------------------------------------------------------------------
# Population
# ---------------------------------------------------------------------------

class FlowMap:
    """k(a) for a firm born at capital k, via the travel time tau(x) = int dx / b.

    tau is tabulated on a geometric grid in |x| on each side of kappa*; below
    ``x_end`` the linear law |x| ~ e^{-theta t} continues it.
    """

    def __init__(self, value: ValueSolution, lo: float, hi: float, n: int = 4000, x_end_rel: float = 1e-10):
        self.ks = ks = value.kappa_star
        self.x_end = x_end_rel * ks
        self.tables = {}
        for side, span in ((-1.0, ks - lo), (1.0, hi - ks)):
            if span <= self.x_end:
                continue
            s = np.linspace(math.log(span), math.log(self.x_end), n)
            nodes, wts = _gauss(s[:-1], s[1:])
            xs = side * np.exp(nodes)
            # dtau = dx / b = |x| ds / |b| along decreasing |x|
            integrand = np.abs(xs) / np.abs(value.drift_offset(xs))
            dtau = np.sum(-wts * integrand, axis=-1)
            tau = np.concatenate([[0.0], np.cumsum(dtau)])
            theta = -value.drift_offset(side * self.x_end) / (side * self.x_end)
            # both directions of the smooth monotone map s <-> tau
            self.tables[side] = (s, tau, theta, CubicSpline(-s, tau), CubicSpline(tau, s))

    def __call__(self, k, age):
        k = np.asarray(k, dtype=float)
        age = np.asarray(age, dtype=float)
        x = k - self.ks
        out = np.zeros_like(x)
        for side, (s, tau, theta, tau_of, s_of) in self.tables.items():
            sel = np.sign(x) == side
            if not sel.any():
                continue
            lx = np.log(np.abs(x[sel]))
            # tau at birth (inside x_end the start is handled by the linear law)
            t0 = np.where(lx >= s[-1], tau_of(np.clip(-lx, -s[0], -s[-1])), tau[-1] + (s[-1] - lx) / theta)
            t1 = t0 + age[sel]
            lx1 = np.where(t1 <= tau[-1], s_of(np.clip(t1, 0.0, tau[-1])), s[-1] - theta * (t1 - tau[-1]))
            out[sel] = side * np.exp(lx1)
        return self.ks + out


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    density: np.ndarray
    mass: float
    mass_se: float
    n_alive: int
    birth_intensity: float
    expected_mass: float
    metadata: dict

    @property
    def bin_width(self) -> float:
        return float(np.max(np.diff(self.edges)))

    def to_csv(self, path):
        from .report import write_csv

        write_csv(path, ["bin_lo", "bin_hi", "density"],
                  np.column_stack([self.edges[:-1], self.edges[1:], self.density]))


def _sample_entry(rng, entry, n):
    """n draws from the raised-cosine profile by rejection from the uniform law."""
    out = np.empty(0)
    while out.size < n:
        m = int(1.3 * (n - out.size)) * 2 + 16
        u = rng.random(m)
        acc = rng.random(m) * 2.0 < 1.0 - np.cos(2.0 * np.pi * u)
        out = np.concatenate([out, u[acc]])
    return entry.a1 + entry.width * out[:n]


def _chunk(value: ValueSolution, flow: FlowMap, seed: int, index: int, n: int, horizon: float,
           c_hat: float):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1, index])))
    economy = value.economy
    entry = economy.entry
    nu = economy.params.nu
    t_birth = rng.random(n) * horizon
    k_birth = _sample_entry(rng, entry, n)
    # thinning against the majorant c_hat * eta_hat
    ratio = np.asarray(entry.modulation(value.value(k_birth)), dtype=float) / c_hat
    keep = rng.random(n) < ratio
    life = rng.exponential(1.0 / nu, n)
    alive = keep & (t_birth + life > horizon)
    return flow(k_birth[alive], horizon - t_birth[alive])


def population_histogram(economy, value: ValueSolution, n_firms: int = 100_000, horizon: float | None = None,
                         seed: int = 0, bins: int = 200, chunk_size: int = 1 << 16, workers: int = 1,
                         return_samples: bool = False):
    """Birth-death simulation of the firm population at time ``horizon``.

    Candidate births arrive at rate Lambda * c_hat on [0, horizon] with capital
    drawn from eta_hat and are kept with probability eta(k, u(k)) / (c_hat
    eta_hat(k)). Lambda is chosen so that about ``n_firms`` firms are alive at
    the horizon. Lifetimes are exponential with rate nu. The histogram is
    scaled to the units of m (mass ~ int eta / nu).

    Each chunk of candidates owns the stream SeedSequence([seed, 1, i]), so the
    result does not depend on ``workers``.
    """
    entry = economy.entry
    nu = economy.params.nu
    c_hat = max(economy.params.c_hat, entry.c_hat)
    horizon = 40.0 / nu if horizon is None else float(horizon)
    ks = value.kappa_star
    lo, hi = min(entry.a1, ks), max(entry.a2, ks)

    knots = np.linspace(entry.a1, entry.a2, 257)
    xq, wq = _gauss(knots[:-1], knots[1:])
    eta_int = float(np.sum(wq * entry.rate(xq, value.value(xq))))
    survive = -math.expm1(-nu * horizon)
    lam = n_firms * nu / (eta_int * survive)

    root = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    n_cand = int(root.poisson(lam * c_hat * horizon))
    sizes = [chunk_size] * (n_cand // chunk_size) + ([n_cand % chunk_size] if n_cand % chunk_size else [])
    flow = FlowMap(value, lo, hi)
    args = [(value, flow, seed, i, n, horizon, c_hat) for i, n in enumerate(sizes)]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk, *zip(*args)))
    else:
        parts = [_chunk(*a) for a in args]
    k = np.concatenate(parts) if parts else np.empty(0)

    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(k, lo, hi), bins=edges)
    dens = counts / (lam * np.diff(edges))
    meta = {"generator": GENERATOR, "numpy": np.__version__, "seed": seed, "n_firms": n_firms,
            "horizon": horizon, "n_alive": int(k.size), "n_candidates": n_cand, "chunk_size": chunk_size,
            "birth_intensity": lam}
    hist = Histogram(edges=edges, density=dens, mass=k.size / lam, mass_se=math.sqrt(max(k.size, 1)) / lam,
                     n_alive=int(k.size), birth_intensity=lam, expected_mass=eta_int * survive / nu,
                     metadata=meta)
    return (hist, k) if return_samples else hist


def wasserstein_to_density(hist: Histogram, density: DensitySolution, n: int = 20001) -> float:
    """W1 between the normalized histogram (uniform within bins) and the normalized m."""
    lo, hi = hist.edges[0], hist.edges[-1]
    k = np.linspace(lo, hi, n)
    cum_h = np.concatenate([[0.0], np.cumsum(hist.density * np.diff(hist.edges))])
    F_h = np.interp(k, hist.edges, cum_h) / cum_h[-1]
    F_m = density.cdf(k)
    F_m = F_m / density.cdf(hi + 1.0)
    return float(np.trapezoid(np.abs(F_h - F_m), k))
