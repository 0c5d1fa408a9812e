"""Nonlocal kernels K(y), ellipticity classes and closed-form tails."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gamma


@dataclass(frozen=True)
class EllipticityParams:
    """Bounds of the class L0: (1-s) lam |y|^{-n-2s} <= K <= (1-s) Lam |y|^{-n-2s}."""

    lam: float
    Lam: float
    s: float
    s0: float | None = None

    def __post_init__(self):
        if not 0 < self.lam <= self.Lam:
            raise ValueError(f"need 0 < lambda <= Lambda, got {self.lam}, {self.Lam}")
        if not 0 < self.s < 1:
            raise ValueError(f"order s must lie in (0, 1), got {self.s}")
        if self.s0 is None:
            object.__setattr__(self, "s0", 0.5 * self.s)
        if not 0 < self.s0 < self.s:
            raise ValueError(f"need 0 < s0 < s, got s0={self.s0}, s={self.s}")


def frac_constant(n: int, s: float) -> float:
    """Standard constant 4^s Gamma(n/2+s) / (pi^{n/2} |Gamma(-s)|)."""
    return 4.0**s * gamma(0.5 * n + s) / (math.pi ** (0.5 * n) * abs(gamma(-s)))


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A symmetric kernel written as K(y) = m(y) |y|^{-n-2s}.

    ``variant`` is one of ``fractional`` (m = c), ``homogeneous``
    (m = a(theta), piecewise constant on sectors) or ``power_bounded``
    (arbitrary callable K). For homogeneous kernels ``a_values`` holds one
    value per half-turn sector; the opposite sector repeats it, which is
    what keeps K(-y) = K(y).
    """

    variant: str
    n: int
    s: float
    c: float = 0.0
    a_values: tuple = ()
    func: Callable | None = None

    def __post_init__(self):
        if not 0 < self.s < 1:
            raise ValueError(f"order s must lie in (0, 1), got {self.s}")
        if self.n not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.n}")
        if self.variant == "fractional" and not self.c > 0:
            raise ValueError("fractional kernel needs c > 0")
        if self.variant == "homogeneous":
            a = tuple(float(v) for v in self.a_values)
            if not a or min(a) <= 0:
                raise ValueError("homogeneous kernel needs positive sector values")
            if self.n == 1 and len(a) != 1:
                raise ValueError("a 1D homogeneous kernel has a single sector value")
            object.__setattr__(self, "a_values", a)
        if self.variant == "power_bounded" and self.func is None:
            raise ValueError("power_bounded kernel needs a callable")
        if self.variant not in ("fractional", "homogeneous", "power_bounded"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")

    @property
    def sectors(self) -> int:
        return len(self.a_values) if self.variant == "homogeneous" else 1

    def multiplier(self, y, sector=None):
        """m(y) = K(y) |y|^{n+2s}; ``sector`` may be passed to skip the angle."""
        y = _pts(y, self.n)
        if self.variant == "fractional":
            return np.full(y.shape[:-1], self.c)
        if self.variant == "homogeneous":
            if sector is None:
                sector = sector_index(y, len(self.a_values))
            return np.asarray(self.a_values)[sector]
        r = np.linalg.norm(y, axis=-1)
        return np.asarray(self.func(y), dtype=float) * r ** (self.n + 2 * self.s)

    def __call__(self, y):
        y = _pts(y, self.n)
        r = np.linalg.norm(y, axis=-1)
        if self.variant == "power_bounded":
            return np.asarray(self.func(y), dtype=float)
        return self.multiplier(y) * r ** (-self.n - 2 * self.s)

    def angular_mass(self) -> float:
        """Integral of m over the unit sphere."""
        if self.variant == "fractional":
            return self.c * (2.0 if self.n == 1 else 2 * math.pi)
        if self.variant == "homogeneous":
            if self.n == 1:
                return 2.0 * self.a_values[0]
            m = len(self.a_values)
            return 2.0 * sum(self.a_values) * math.pi / m
        raise ValueError("no closed-form angular mass for a callable kernel")


def _pts(y, n):
    y = np.asarray(y, dtype=float)
    if n == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    return y


def sector_index(y, m: int):
    """Half-turn sector number floor((theta mod pi) / (pi/m)) of offsets y."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] == 1 or m == 1:
        return np.zeros(y.shape[:-1], dtype=np.int64)
    theta = np.mod(np.arctan2(y[..., 1], y[..., 0]), math.pi)
    return np.minimum((theta / (math.pi / m)).astype(np.int64), m - 1)


def frac_kernel(n: int, s: float) -> KernelSpec:
    """Kernel of -(-Delta)^s written against the second difference.

    Since delta u counts both u(x+y) and u(x-y), the weight is half the
    standard constant; then L u = -(-Delta)^s u exactly.
    """
    if not 0 < s < 1:
        raise ValueError(f"order s must lie in (0, 1), got {s}")
    return KernelSpec("fractional", n, s, c=0.5 * frac_constant(n, s))


def homogeneous_kernel(n: int, s: float, a_values) -> KernelSpec:
    return KernelSpec("homogeneous", n, s, a_values=tuple(a_values))


def tail_mass(K: KernelSpec, R: float) -> float:
    """Integral of K over |y| > R, in closed form."""
    if not R > 0:
        raise ValueError("tail radius must be positive")
    if K.s <= 0:
        raise ValueError("non-integrable tail")
    if math.isinf(R):
        return 0.0
    return K.angular_mass() * R ** (-2 * K.s) / (2 * K.s)


def power_tail(n: int, s: float, R: float) -> float:
    """Tail mass of the bare power |y|^{-n-2s}."""
    omega = 2.0 if n == 1 else 2 * math.pi
    return omega * R ** (-2 * s) / (2 * s)


def l0_check(K: KernelSpec, p: EllipticityParams, samples) -> dict:
    """Check the L0 sandwich at sample offsets and list the violations."""
    y = _pts(samples, K.n)
    if y.size == 0:
        raise ValueError("empty sample set")
    r = np.linalg.norm(y, axis=-1)
    if np.any(r == 0):
        raise ValueError("samples must be nonzero offsets")
    ratio = K(y) * r ** (K.n + 2 * K.s) / (1 - K.s)
    rtol = 1e-12
    low = ratio < p.lam * (1 - rtol)
    high = ratio > p.Lam * (1 + rtol)
    bad = np.flatnonzero(low | high)
    return {
        "passed": bool(bad.size == 0),
        "n_samples": int(r.size),
        "min_ratio": float(ratio.min()),
        "max_ratio": float(ratio.max()),
        "violations": [
            {"y": y[k].tolist(), "ratio": float(ratio[k]), "side": "lower" if low[k] else "upper"}
            for k in bad[:50]
        ],
    }


def frac_params(n: int, s: float, spread: float = 2.0) -> EllipticityParams:
    """Class bounds centred on the fractional kernel, widened by ``spread``."""
    m = 0.5 * frac_constant(n, s) / (1 - s)
    return EllipticityParams(m / spread, m * spread, s)
