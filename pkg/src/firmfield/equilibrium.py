"""Market-clearing input prices via homotopy continuation of the map T_lambda.

T_lambda(w) minimizes Phi(v) + int g(k, v) dmu(k) over the price box, with
mu = (1 - lambda) eta_hat + lambda m(., w). By the envelope theorem the
gradient is S(v) - int l*(k, v) dmu, so a fixed point of T_1 clears every
input market.
"""
from __future__ import annotations

import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .density import DensitySolution, _gauss, integrate_against, solve_density
from .economy import Economy, gross_output, input_demand
from .errors import BoxViolationError, ConvergenceError, DomainError
from .hjb import GridSpec, ValueSolution, solve_value


@dataclass(frozen=True)
class EquilibriumConfig:
    eps_box: float = 1e-3
    tol: float = 1e-6
    stage_tol: float = 1e-4
    final_tol: float = 1e-10
    schedule: tuple = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
    tau: float = 0.5
    stage_budget: int = 60
    max_bisections: int = 6
    inner_tol: float = 1e-10
    w_init: tuple | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    h_sing_rel: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.eps_box < 1:
            raise DomainError("eps_box must lie in (0, 1)")
        s = tuple(float(x) for x in self.schedule)
        # a schedule of (1.0,) is a cold start directly on T_1
        if s[0] < 0.0 or s[-1] != 1.0 or any(b <= a for a, b in zip(s, s[1:])):
            raise DomainError("homotopy schedule must increase within [0, 1] and end at 1")
        object.__setattr__(self, "schedule", s)
        if not 0 < self.tau <= 1:
            raise DomainError("damping must lie in (0, 1]")

    @property
    def box(self):
        return self.eps_box, 1.0 / self.eps_box


@dataclass
class StageRecord:
    lam: float
    iteration: int
    gap: float
    w: np.ndarray
    inner_iterations: int = 0


@dataclass
class HomotopyTrace:
    records: list = field(default_factory=list)

    def append(self, rec: StageRecord):
        self.records.append(rec)

    @property
    def stages(self):
        """Final record of every completed stage."""
        out = []
        for i, r in enumerate(self.records):
            nxt = self.records[i + 1] if i + 1 < len(self.records) else None
            if nxt is None or nxt.lam != r.lam:
                out.append(r)
        return out

    @property
    def total_inner_iterations(self) -> int:
        return sum(r.inner_iterations for r in self.records)

    @property
    def total_outer_iterations(self) -> int:
        return len(self.records)

    def to_csv(self, path):
        from .report import write_csv

        d = self.records[0].w.size if self.records else 0
        rows = [[r.lam, r.iteration, r.gap, *r.w] for r in self.records]
        write_csv(path, ["lambda", "iter", "gap"] + [f"w_{i + 1}" for i in range(d)], rows)


@dataclass(frozen=True)
class EquilibriumResult:
    w_star: np.ndarray
    clearing_residual: float
    residuals: np.ndarray
    value: ValueSolution = field(repr=False)
    density: DensitySolution = field(repr=False)
    trace: HomotopyTrace = field(repr=False)

    def report(self) -> dict:
        return {
            "w_star": self.w_star,
            "clearing_residual": self.clearing_residual,
            "residuals": self.residuals,
            "kappa_star": self.value.kappa_star,
            "total_mass": self.density.total_mass,
            "outer_iterations": self.trace.total_outer_iterations,
            "inner_iterations": self.trace.total_inner_iterations,
        }


# ---------------------------------------------------------------------------
# Measures and demand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Measure:
    nodes: np.ndarray
    weights: np.ndarray

    @staticmethod
    def entry(economy: Economy, n_intervals=64):
        e = economy.entry
        knots = np.linspace(e.a1, e.a2, n_intervals + 1)
        x, w = _gauss(knots[:-1], knots[1:])
        x, w = x.ravel(), w.ravel()
        return _Measure(x, w * e.density(x))

    @staticmethod
    def of_density(density: DensitySolution):
        return _Measure(*density.measure())

    def blend(self, other: "_Measure", lam: float) -> "_Measure":
        if lam == 0.0:
            return self
        if lam == 1.0:
            return other
        return _Measure(np.concatenate([self.nodes, other.nodes]),
                        np.concatenate([(1 - lam) * self.weights, lam * other.weights]))


def aggregate_demand(economy: Economy, value: ValueSolution, density: DensitySolution, w=None):
    """int l*(k, w) m(k) dk for every input."""
    w = value.w if w is None else np.atleast_1d(np.asarray(w, dtype=float))
    return np.atleast_1d(integrate_against(density, lambda k: input_demand(economy.production, k, w)))


def clearing_residual(economy: Economy, w, value: ValueSolution, density: DensitySolution):
    """(S(w) - demand(w), max_i |S_i - D_i| / max(max_i S_i, tiny))."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    S = np.atleast_1d(economy.supply.value(w))
    r = S - aggregate_demand(economy, value, density, w)
    scale = max(float(np.max(np.abs(S))), 1e-300)
    return r, float(np.max(np.abs(r)) / scale)


# ---------------------------------------------------------------------------
# T_lambda
# ---------------------------------------------------------------------------

def _objective(economy, mu: _Measure, v):
    return economy.supply.potential(v) + float(np.dot(mu.weights, gross_output(economy.production, mu.nodes, v)))


def _gradient(economy, mu: _Measure, v):
    dem = mu.weights @ input_demand(economy.production, mu.nodes, v)
    return np.atleast_1d(economy.supply.value(v)) - dem


def _minimize(economy, mu: _Measure, w0, box, tol, max_iter=100):
    """Projected damped Newton for Phi + int g dmu on the box; returns (v, iterations)."""
    lo, hi = box
    v = np.clip(np.asarray(w0, dtype=float), lo, hi)
    d = v.size
    J = _objective(economy, mu, v)
    for it in range(1, max_iter + 1):
        g = _gradient(economy, mu, v)
        on_lo = (v <= lo) & (g > 0)
        on_hi = (v >= hi) & (g < 0)
        free = ~(on_lo | on_hi)
        if np.max(np.abs(g[free]), initial=0.0) < tol:
            if not free.all():
                raise BoxViolationError(
                    f"T_lambda minimizer lies on the price box boundary at {v}; "
                    "the box assumption fails for this scenario")
            return v, it
        # finite-difference curvature of the demand term, analytic supply Hessian
        Hm = np.empty((d, d))
        for j in range(d):
            h = 1e-6 * v[j]
            e = np.zeros(d)
            e[j] = h
            dp = mu.weights @ input_demand(economy.production, mu.nodes, v + e)
            dm = mu.weights @ input_demand(economy.production, mu.nodes, v - e)
            Hm[:, j] = -(dp - dm) / (2 * h)
        H = np.atleast_2d(economy.supply.hessian(v)) + 0.5 * (Hm + Hm.T)
        step = np.zeros(d)
        idx = np.nonzero(free)[0]
        step[idx] = -np.linalg.solve(H[np.ix_(idx, idx)], g[idx])
        t = 1.0
        if np.max(np.abs(g[free])) < 1e-6:
            # inside the quadratic basin the objective change drops below rounding;
            # take the full Newton step
            v = np.clip(v + step, lo, hi)
            J = _objective(economy, mu, v)
            continue
        while True:
            v_new = np.clip(v + t * step, lo, hi)
            J_new = _objective(economy, mu, v_new)
            if J_new <= J + 1e-4 * t * float(g @ (v_new - v)) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and J_new > J:
            # objective flat to rounding: accept if the gradient is already tiny
            if np.max(np.abs(g[free])) < 1e3 * tol:
                return v, it
            raise ConvergenceError(f"T_lambda line search failed at {v}")
        v, J = v_new, J_new
    raise ConvergenceError("T_lambda inner minimization did not converge")


def t_map(economy: Economy, lam: float, w_current, density: DensitySolution | None,
          config: EquilibriumConfig | None = None, w_start=None, return_iterations=False):
    """w_next = argmin over the box of Phi + int g d((1-lam) eta_hat + lam m(., w_current))."""
    config = config or EquilibriumConfig()
    if not 0.0 <= lam <= 1.0:
        raise DomainError("homotopy weight must lie in [0, 1]")
    mu = _Measure.entry(economy)
    if lam > 0:
        if density is None:
            raise DomainError("a density is required for lambda > 0")
        mu = mu.blend(_Measure.of_density(density), lam)
    if w_start is not None:
        start = w_start
    elif lam == 0.0:
        # T_0 does not depend on w_current; a fixed start makes that exact
        start = np.ones(np.size(w_current))
    else:
        start = w_current
    v, its = _minimize(economy, mu, np.atleast_1d(np.asarray(start, dtype=float)), config.box, config.inner_tol)
    return (v, its) if return_iterations else v


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def _solve_pair(economy, w, grid, h_sing_rel=1e-4):
    value = solve_value(economy, w, grid)
    return value, solve_density(economy, value, h_sing_rel=h_sing_rel)


class SolutionCache:
    """Value/density pairs keyed by w quantized at 1e-12; concurrent reads, serialized insertion."""

    def __init__(self, economy: Economy, grid: GridSpec, h_sing_rel=1e-4):
        self.economy = economy
        self.grid = grid
        self.h_sing_rel = h_sing_rel
        self._store = {}
        self._lock = threading.Lock()
        self.misses = 0

    @staticmethod
    def key(w):
        return tuple(np.round(np.asarray(w, dtype=float) / 1e-12).astype(np.int64).tolist())

    def get(self, w):
        key = self.key(w)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        pair = _solve_pair(self.economy, np.asarray(w, dtype=float), self.grid, self.h_sing_rel)
        with self._lock:
            self.misses += 1
            return self._store.setdefault(key, pair)

    def prefetch(self, ws, workers=1):
        """Solve several price vectors, in parallel processes when ``workers > 1``."""
        todo = [np.asarray(w, dtype=float) for w in ws if self.key(w) not in self._store]
        if workers <= 1 or len(todo) <= 1:
            for w in todo:
                self.get(w)
            return
        with ProcessPoolExecutor(max_workers=workers) as ex:
            pairs = list(ex.map(_solve_pair, [self.economy] * len(todo), todo,
                                [self.grid] * len(todo), [self.h_sing_rel] * len(todo)))
        with self._lock:
            for w, pair in zip(todo, pairs):
                self.misses += 1
                self._store.setdefault(self.key(w), pair)


def _run_stage(economy, lam, w, config, cache, trace, tol):
    """Damped fixed-point iteration w <- (1-tau) w + tau T_lam(w). Returns (w, converged)."""
    if lam == 0.0:
        w_new, its = t_map(economy, 0.0, w, None, config, return_iterations=True)
        trace.append(StageRecord(0.0, 1, 0.0, w_new.copy(), its))
        return w_new, True
    tau = config.tau
    prev_gap = np.inf
    n_dec = 0
    for it in range(1, config.stage_budget + 1):
        _, density = cache.get(w)
        w_t, its = t_map(economy, lam, w, density, config, return_iterations=True)
        gap = float(np.max(np.abs(w - w_t)))
        trace.append(StageRecord(lam, it, gap, w.copy(), its))
        if gap < tol:
            return w, True
        if gap > prev_gap:
            tau *= 0.5
            n_dec = 0
        else:
            n_dec += 1
            if n_dec >= 3:
                tau = config.tau
        prev_gap = gap
        w = (1.0 - tau) * w + tau * w_t
        lo, hi = config.box
        if np.any(w <= lo) or np.any(w >= hi):
            raise BoxViolationError(f"homotopy iterate left the price box at lambda={lam}: {w}")
    return w, False


def _predict(path, lam, w, box):
    """Secant predictor along the solution path from the last two completed stages."""
    if len(path) < 2:
        return w
    (l0, w0), (l1, w1) = path[-2:]
    guess = w1 + (lam - l1) / (l1 - l0) * (w1 - w0)
    lo, hi = box
    if np.any(guess <= lo) or np.any(guess >= hi):
        return w
    return guess


def solve_equilibrium(economy: Economy, config: EquilibriumConfig | None = None,
                      cache: SolutionCache | None = None) -> EquilibriumResult:
    """Homotopy continuation from lambda = 0 to 1 with adaptive step bisection."""
    config = config or EquilibriumConfig()
    if economy.supply is None:
        raise DomainError("equilibrium requires a supply specification")
    d = economy.d
    cache = cache or SolutionCache(economy, config.grid, config.h_sing_rel)
    w = np.ones(d) if config.w_init is None else np.asarray(config.w_init, dtype=float)
    trace = HomotopyTrace()
    pending = list(config.schedule)
    done_lam = None
    path = []
    n_bisect = 0
    while pending:
        lam = pending[0]
        tol = config.final_tol if lam == 1.0 else config.stage_tol
        w_new, ok = _run_stage(economy, lam, _predict(path, lam, w, config.box), config, cache, trace, tol)
        if ok:
            w, done_lam = w_new, lam
            path.append((lam, w.copy()))
            pending.pop(0)
            continue
        if done_lam is None or n_bisect >= config.max_bisections:
            raise ConvergenceError(f"homotopy stage lambda={lam} did not converge", trace=trace)
        n_bisect += 1
        pending.insert(0, 0.5 * (done_lam + lam))
    value, density = cache.get(w)
    r, rel = clearing_residual(economy, w, value, density)
    lo, hi = config.box
    if np.any(w <= lo) or np.any(w >= hi):
        raise BoxViolationError(f"equilibrium price {w} is not inside the box")
    if rel > config.tol:
        raise ConvergenceError(f"clearing residual {rel:.3e} above tolerance {config.tol:.1e}", trace=trace)
    return EquilibriumResult(w_star=w, clearing_residual=rel, residuals=r, value=value, density=density,
                             trace=trace)


def bisect_clearing(economy: Economy, lo: float, hi: float, grid: GridSpec | None = None, tol=1e-10,
                    max_iter=100):
    """Scalar bisection on the d=1 clearing residual; an oracle for the homotopy driver."""
    if economy.d != 1:
        raise DomainError("bisection oracle only applies to a single input")
    grid = grid or GridSpec()

    def resid(x):
        value, density = _solve_pair(economy, np.array([x]), grid)
        return clearing_residual(economy, [x], value, density)[0][0]

    r_lo, r_hi = resid(lo), resid(hi)
    if r_lo * r_hi > 0:
        raise DomainError("clearing residual has the same sign at both bracket ends")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r_mid = resid(mid)
        if (r_mid > 0) == (r_hi > 0):
            hi, r_hi = mid, r_mid
        else:
            lo, r_lo = mid, r_mid
        if hi - lo < tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)
