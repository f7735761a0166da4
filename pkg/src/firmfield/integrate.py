"""Scalar Dormand-Prince 5(4) integrator that rejects steps leaving the admissible region.

The right-hand side signals that a trial point lies outside its domain by
raising :class:`~firmfield.errors.DomainError`; the step is then halved. If the
step cannot be shrunk further the integrator raises :class:`RegionExit`, which
carries the last accepted point.
"""
from __future__ import annotations

from .errors import DomainError

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


class RegionExit(Exception):
    """The solution cannot be continued without leaving the admissible region."""

    def __init__(self, x, y):
        super().__init__(f"trajectory leaves the admissible region near x={x!r}")
        self.x = x
        self.y = y


def _step(rhs, x, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * kj for a, kj in zip(_A[i], ks))
        ks.append(rhs(x + _C[i] * h, yi))
    y5 = y + h * sum(b * kj for b, kj in zip(_B5, ks))
    err = h * sum(e * kj for e, kj in zip(_E, ks))
    return y5, err, ks[6]


def integrate_through(rhs, x0, y0, targets, rtol=1e-10, atol=1e-10, h_init=None,
                      h_min_rel=1e-14, max_steps=1_000_000, stats=None):
    """Integrate y' = rhs(x, y) from (x0, y0) and return y at each of ``targets``.

    ``targets`` must be monotone in the direction of integration. Steps are
    clipped so every target is hit exactly.
    """
    targets = list(targets)
    out = []
    if not targets:
        return out
    direction = 1.0 if targets[-1] >= x0 else -1.0
    x, y = x0, y0
    k1 = rhs(x, y)
    span = abs(targets[-1] - x0)
    h = abs(h_init) if h_init else max(span * 1e-6, 1e-12)
    h_min = h_min_rel * max(abs(x0), abs(targets[-1]), span)
    n_steps = n_rej = 0
    for xt in targets:
        while direction * (xt - x) > 0:
            hs = min(h, abs(xt - x))
            last = hs == abs(xt - x)
            try:
                y_new, err, k_new = _step(rhs, x, y, direction * hs, k1)
            except DomainError:
                n_rej += 1
                if hs <= h_min:
                    raise RegionExit(x, y)
                h = hs / 2.0
                continue
            sc = atol + rtol * max(abs(y), abs(y_new))
            ratio = abs(err) / sc
            if ratio <= 1.0:
                x = xt if last else x + direction * hs
                y = y_new
                k1 = k_new
                n_steps += 1
                if n_steps > max_steps:
                    raise RuntimeError("maximum number of integration steps exceeded")
                fac = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** -0.2)
                if not last or fac < 1.0:
                    h = hs * max(0.2, fac)
            else:
                n_rej += 1
                if hs <= h_min:
                    raise RegionExit(x, y)
                h = hs * max(0.1, 0.9 * ratio ** -0.25)
        out.append(y)
    if stats is not None:
        stats["steps"] = stats.get("steps", 0) + n_steps
        stats["rejected"] = stats.get("rejected", 0) + n_rej
    return out
