"""The penalty beta_delta and the penalized residual.

beta_delta(t) = 0 for t <= 0, t/delta for t >= delta, joined by the cubic
2t^2/delta^2 - t^3/delta^3, which matches value and slope at both ends.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PenaltyFn:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"penalty scale must be positive, got {self.delta}")

    @property
    def max_slope(self) -> float:
        return 4.0 / (3.0 * self.delta)

    def __call__(self, t):
        return beta_eval(self, t)


def beta_eval(p: PenaltyFn, t):
    d = p.delta
    t = np.asarray(t, dtype=float)
    r = t / d
    out = np.where(r >= 1, r, np.where(r > 0, 2 * r**2 - r**3, 0.0))
    return float(out) if out.ndim == 0 else out


def beta_deriv(p: PenaltyFn, t):
    d = p.delta
    t = np.asarray(t, dtype=float)
    out = np.where(t >= d, 1.0 / d, np.where(t > 0, t * (4 * d - 3 * t) / d**3, 0.0))
    return float(out) if out.ndim == 0 else out


def penal_residual(u, Iu, f, m, p: PenaltyFn):
    """F(u) = -Iu - f - beta(psi^- - u) + beta(u - psi^+), nodewise.

    ``m`` carries the obstacles: either an object with ``psi_minus`` and
    ``psi_plus`` (callables, evaluated at the nodes of the Field ``u``, or
    arrays) or a plain ``(psi_minus, psi_plus)`` pair.
    """
    if isinstance(m, tuple):
        lo, hi = m
    else:
        lo, hi = m.psi_minus, m.psi_plus
    if callable(lo) or callable(hi):
        pts = u.grid.points
        lo = lo(pts) if callable(lo) else lo
        hi = hi(pts) if callable(hi) else hi
    u, Iu, f, lo, hi = (np.asarray(getattr(a, "values", a), dtype=float) for a in (u, Iu, f, lo, hi))
    return -Iu - f - beta_eval(p, lo - u) + beta_eval(p, u - hi)
