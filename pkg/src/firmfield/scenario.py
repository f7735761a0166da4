"""Scenario files: TOML with a fixed schema, dotted-path overrides and validation.

Every key is declared in ``SCHEMA`` with its type and default; unknown keys
and out-of-range values raise :class:`ValidationError` naming the offending
path before any solver runs.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .economy import (CES, CobbDouglas, Economy, EconomyParams, EntrySpec, LogUtility, PowerCurve,
                      PowerUtility, SeparableSupply, SoftmaxSupply)
from .equilibrium import EquilibriumConfig
from .errors import DomainError, ValidationError
from .hjb import GridSpec

_NUM = (int, float)
_REQUIRED = object()

SCHEMA = {
    "name": (str, "scenario"),
    "utility": {"variant": (str, "log"), "b": (_NUM, 0.5)},
    "production": {
        "variant": (str, "cobb_douglas"),
        "A": (_NUM, 1.0),
        "alpha": (_NUM, _REQUIRED),
        "beta": (list, _REQUIRED),
        "gamma": (_NUM, None),
    },
    "params": {"rho": (_NUM, _REQUIRED), "delta": (_NUM, 0.0), "nu": (_NUM, _REQUIRED), "c_hat": (_NUM, 1.0)},
    "entry": {"a1": (_NUM, _REQUIRED), "a2": (_NUM, _REQUIRED), "mode": (str, "constant"), "v_scale": (_NUM, 1.0)},
    "supply": {
        "variant": (str, "separable"),
        "sigma": (_NUM, None),
        "w0": (_NUM, None),
        "curves": (list, None),
    },
    "prices": {"w": (list, None)},
    "grid": {
        "k_lo": (_NUM, None),
        "k_hi": (_NUM, None),
        "n_points": (int, 600),
        "clustering": (_NUM, 2000.0),
        "h_sing": (_NUM, 1e-4),
        "taylor_window": (_NUM, 2e-3),
    },
    "equilibrium": {
        "eps_box": (_NUM, 1e-3),
        "tol": (_NUM, 1e-6),
        "stage_tol": (_NUM, 1e-4),
        "final_tol": (_NUM, 1e-10),
        "inner_tol": (_NUM, 1e-10),
        "schedule": (list, [0.0, 0.25, 0.5, 0.75, 0.9, 1.0]),
        "tau": (_NUM, 0.5),
        "stage_budget": (int, 60),
        "w_init": (list, None),
    },
    "simulate": {
        "k0": (list, None),
        "k0_rel": (list, [0.5, 1.0, 1.5]),
        "horizon": (_NUM, None),
        "n_firms": (int, 100_000),
        "population_horizon": (_NUM, None),
        "seed": (int, 0),
        "bins": (int, 200),
    },
    "output": {"directory": (str, None), "format": (str, "csv")},
}

_CURVE_KEYS = {"scale": _NUM, "exponent": _NUM}


def _check_type(path, value, typ):
    if typ is _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        name = "number" if typ is _NUM else typ.__name__
        raise ValidationError(f"{path}: expected {name}, got {value!r}")


def _merge(schema, data, path=""):
    """Fill defaults and reject unknown keys."""
    if not isinstance(data, dict):
        raise ValidationError(f"{path or '<root>'}: expected a table")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ValidationError("unknown configuration key(s): " + ", ".join(f"{path}{k}" for k in unknown))
    out = {}
    for key, spec in schema.items():
        p = f"{path}{key}"
        if isinstance(spec, dict):
            out[key] = _merge(spec, data.get(key, {}), p + ".")
            continue
        typ, default = spec
        if key in data:
            _check_type(p, data[key], typ)
            out[key] = copy.deepcopy(data[key])
        elif default is _REQUIRED:
            raise ValidationError(f"{p}: required key missing")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _parse_override(text):
    if "=" not in text:
        raise ValidationError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for text in overrides or ():
        key, value = _parse_override(text)
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {key}: {part} is not a table")
        node[parts[-1]] = value
    return data


def _positive(path, x, strict=True):
    if x is None:
        return
    if not (x > 0 if strict else x >= 0):
        raise ValidationError(f"{path}: must be {'positive' if strict else 'nonnegative'}, got {x}")


@dataclass(frozen=True)
class Scenario:
    name: str
    economy: Economy
    prices: np.ndarray | None
    grid: GridSpec
    h_sing_rel: float
    equilibrium: EquilibriumConfig
    simulate: dict
    output: dict
    raw: dict

    def price_vector(self) -> np.ndarray:
        if self.prices is not None:
            return self.prices
        return np.ones(self.economy.d)


def _build(cfg) -> Scenario:
    u = cfg["utility"]
    if u["variant"] == "log":
        utility = LogUtility()
    elif u["variant"] == "power":
        utility = PowerUtility(float(u["b"]))
    else:
        raise ValidationError(f"utility.variant: unknown variant {u['variant']!r}")

    pr = cfg["production"]
    beta = pr["beta"]
    for i, b in enumerate(beta):
        _check_type(f"production.beta[{i}]", b, _NUM)
    if pr["variant"] == "cobb_douglas":
        production = CobbDouglas(A=float(pr["A"]), alpha=float(pr["alpha"]), beta=tuple(beta))
    elif pr["variant"] == "ces":
        if pr["gamma"] is None:
            raise ValidationError("production.gamma: required for the ces variant")
        production = CES(alpha=float(pr["alpha"]), beta=tuple(beta), gamma=float(pr["gamma"]))
    else:
        raise ValidationError(f"production.variant: unknown variant {pr['variant']!r}")
    d = production.d

    p = cfg["params"]
    for key in ("rho", "nu"):
        _positive(f"params.{key}", p[key])
    _positive("params.delta", p["delta"], strict=False)
    params = EconomyParams(rho=float(p["rho"]), delta=float(p["delta"]), nu=float(p["nu"]), c_hat=float(p["c_hat"]))

    e = cfg["entry"]
    entry = EntrySpec(a1=float(e["a1"]), a2=float(e["a2"]), mode=e["mode"], v_scale=float(e["v_scale"]),
                      c_hat=params.c_hat)

    s = cfg["supply"]
    supply = None
    if s["variant"] == "separable":
        if s["curves"] is not None:
            if len(s["curves"]) != d:
                raise ValidationError(f"supply.curves: expected {d} curves, got {len(s['curves'])}")
            curves = []
            for i, c in enumerate(s["curves"]):
                path = f"supply.curves[{i}]"
                if not isinstance(c, dict):
                    raise ValidationError(f"{path}: expected a table")
                unknown = sorted(set(c) - set(_CURVE_KEYS))
                if unknown:
                    raise ValidationError("unknown configuration key(s): " + ", ".join(f"{path}.{k}" for k in unknown))
                for k, typ in _CURVE_KEYS.items():
                    if k in c:
                        _check_type(f"{path}.{k}", c[k], typ)
                curves.append(PowerCurve(scale=float(c.get("scale", 1.0)), exponent=float(c.get("exponent", 1.0))))
            supply = SeparableSupply(tuple(curves))
    elif s["variant"] == "softmax":
        if s["sigma"] is None or s["w0"] is None:
            raise ValidationError("supply.sigma and supply.w0 are required for the softmax variant")
        supply = SoftmaxSupply(sigma=float(s["sigma"]), w0=float(s["w0"]), d=d)
    else:
        raise ValidationError(f"supply.variant: unknown variant {s['variant']!r}")
    economy = Economy(utility, production, params, entry, supply)

    prices = cfg["prices"]["w"]
    if prices is not None:
        if len(prices) != d:
            raise ValidationError(f"prices.w: expected {d} prices, got {len(prices)}")
        prices = np.array(prices, dtype=float)
        if np.any(~(prices > 0)):
            raise ValidationError("prices.w: prices must be positive")

    g = cfg["grid"]
    if g["n_points"] < 100:
        raise ValidationError("grid.n_points: must be at least 100")
    for key in ("k_lo", "k_hi", "h_sing", "taylor_window"):
        _positive(f"grid.{key}", g[key])
    if g["clustering"] <= 1:
        raise ValidationError("grid.clustering: must exceed 1")
    grid = GridSpec(n_points=g["n_points"], k_lo=g["k_lo"], k_hi=g["k_hi"], clustering=float(g["clustering"]),
                    h_sing=float(g["h_sing"]), taylor_window=float(g["taylor_window"]))

    q = cfg["equilibrium"]
    if not 0 < q["eps_box"] < 1:
        raise ValidationError(f"equilibrium.eps_box: must lie in (0, 1), got {q['eps_box']}")
    for key in ("tol", "stage_tol", "final_tol", "inner_tol", "tau"):
        _positive(f"equilibrium.{key}", q[key])
    if q["tau"] > 1:
        raise ValidationError("equilibrium.tau: must not exceed 1")
    if q["w_init"] is not None and len(q["w_init"]) != d:
        raise ValidationError(f"equilibrium.w_init: expected {d} prices")
    eq = EquilibriumConfig(eps_box=float(q["eps_box"]), tol=float(q["tol"]), stage_tol=float(q["stage_tol"]),
                           final_tol=float(q["final_tol"]), inner_tol=float(q["inner_tol"]),
                           schedule=tuple(q["schedule"]), tau=float(q["tau"]), stage_budget=q["stage_budget"],
                           w_init=tuple(q["w_init"]) if q["w_init"] is not None else None, grid=grid,
                           h_sing_rel=float(g["h_sing"]))

    sim = cfg["simulate"]
    for key in ("horizon", "population_horizon"):
        _positive(f"simulate.{key}", sim[key])
    if sim["n_firms"] < 1 or sim["bins"] < 1:
        raise ValidationError("simulate.n_firms and simulate.bins must be positive")

    out = cfg["output"]
    if out["format"] not in ("csv", "json"):
        raise ValidationError(f"output.format: expected csv or json, got {out['format']!r}")
    return Scenario(name=cfg["name"], economy=economy, prices=prices, grid=grid, h_sing_rel=float(g["h_sing"]),
                    equilibrium=eq, simulate=sim, output=out, raw=cfg)


def load_scenario(source, overrides=()) -> Scenario:
    """Load a scenario from a path, a bundled scenario name, or a dict."""
    if isinstance(source, dict):
        data = source
    else:
        path = Path(source)
        if not path.exists():
            bundled = resources.files("firmfield") / "scenarios" / f"{source}.toml"
            if not bundled.is_file():
                raise ValidationError(f"scenario {source!r} not found")
            text = bundled.read_text()
        else:
            text = path.read_text()
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"cannot parse scenario: {exc}") from exc
    data = apply_overrides(data, overrides)
    cfg = _merge(SCHEMA, data)
    try:
        return _build(cfg)
    except DomainError as exc:
        raise ValidationError(str(exc)) from exc


def bundled_scenarios():
    root = resources.files("firmfield") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))
