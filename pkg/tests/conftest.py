import numpy as np
import pytest

from firmfield import (CES, CobbDouglas, Economy, EconomyParams, EntrySpec, GridSpec, LogUtility, PowerCurve,
                       PowerUtility, SeparableSupply, SoftmaxSupply, solve_density, solve_value)

W1 = np.array([1.0])
W2 = np.array([1.2, 1.3])


def cd_economy(delta=0.1, utility=None, rho=0.05, nu=0.1, entry=(0.2, 0.8), mode="constant", c_hat=1.0,
               supply=None):
    return Economy(utility or LogUtility(), CobbDouglas(A=1.0, alpha=0.3, beta=(0.4,)),
                   EconomyParams(rho=rho, delta=delta, nu=nu, c_hat=c_hat),
                   EntrySpec(*entry, mode=mode, c_hat=c_hat),
                   supply or SeparableSupply((PowerCurve(2.0, 1.0),)))


def ces_economy(delta=0.1, nu=0.1, entry=(0.5, 3.0)):
    return Economy(PowerUtility(0.5), CES(alpha=0.5, beta=(0.5, 0.4), gamma=0.6),
                   EconomyParams(rho=0.05, delta=delta, nu=nu), EntrySpec(*entry),
                   SoftmaxSupply(sigma=0.5, w0=1.0, d=2))


FAMILIES = {
    "cd_log_d0": (lambda: cd_economy(delta=0.0), W1),
    "cd_log_d01": (lambda: cd_economy(delta=0.1), W1),
    "cd_pow_d0": (lambda: cd_economy(delta=0.0, utility=PowerUtility(0.5)), W1),
    "cd_pow_d01": (lambda: cd_economy(delta=0.1, utility=PowerUtility(0.5)), W1),
    "ces_d0": (lambda: ces_economy(delta=0.0), W2),
    "ces_d01": (lambda: ces_economy(delta=0.1), W2),
}

_cache = {}


def solved(name, grid=None):
    """Value and density for a named test economy, computed once per session."""
    if name not in _cache:
        make, w = FAMILIES[name]
        e = make()
        v = solve_value(e, w, grid or GridSpec())
        _cache[name] = (e, v, solve_density(e, v))
    return _cache[name]


@pytest.fixture(scope="session")
def cd_d1():
    return solved("cd_log_d01")


@pytest.fixture(scope="session")
def cd_d0():
    return solved("cd_log_d0")


@pytest.fixture(scope="session")
def ces():
    return solved("ces_d01")
