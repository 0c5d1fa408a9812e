"""Linear, extremal and inf-sup operators evaluated on stencils."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..geometry import Grid
from ..kernel import EllipticityParams, KernelSpec, l0_check, power_tail, tail_mass
from .stencil import Stencil, get_stencil


class TailError(ValueError):
    """The truncated far field cannot meet the requested tolerance."""


@dataclass(eq=False)
class Field:
    """Values at the interior nodes of a grid plus exterior data on R^n.

    ``exterior`` is a callable taking an (k, n) array of points. When it is
    None the function is known only on the stored lattice: zero on halo
    nodes and unknown beyond, so far-field quadrature gets truncated.
    """

    grid: Grid
    values: np.ndarray
    exterior: Callable | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_interior,):
            raise ValueError(
                f"field needs {self.grid.n_interior} interior values, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def at(self, pts) -> np.ndarray:
        """Evaluate at arbitrary points: stored value on interior nodes, else exterior."""
        g = self.grid
        pts = np.asarray(pts, dtype=float).reshape(-1, g.dim)
        mi = np.rint(pts / g.h).astype(np.int64)
        on_lattice = np.all(np.abs(pts - mi * g.h) <= 1e-9 * g.h, axis=-1)
        idx = np.where(on_lattice, g.find(mi), -1)
        out = np.empty(len(pts))
        inside = idx >= 0
        out[inside] = self.values[idx[inside]]
        if np.any(~inside):
            if self.exterior is not None:
                out[~inside] = self.exterior(pts[~inside])
            else:
                lo = g.lo * g.h
                hi = (g.lo + np.asarray(g.shape) - 1) * g.h
                inbox = np.all((pts[~inside] >= lo - 1e-12) & (pts[~inside] <= hi + 1e-12), -1)
                if not np.all(inbox):
                    raise TailError("point beyond the stored halo and no exterior data")
                out[~inside] = 0.0
        return out

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values, _ext_combine(self, other, -1.0))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values, _ext_combine(self, other, 1.0))


def _ext_combine(u, v, sign):
    if u.exterior is None and v.exterior is None:
        return None
    gu = u.exterior or (lambda p: np.zeros(len(p)))
    gv = v.exterior or (lambda p: np.zeros(len(p)))
    return lambda p: gu(p) + sign * gv(p)


def zero_exterior(p):
    return np.zeros(len(p))


@dataclass(eq=False)
class OperatorSpec:
    """Which operator to apply.

    kind: linear | pucci_plus | pucci_minus | pucci_star_plus |
    pucci_star_minus | infsup. ``kernel`` is used by linear, ``params`` by
    the extremal operators (and to validate the others), ``families`` by
    infsup: the value is min over families of max over their kernels.
    """

    kind: str
    s: float
    kernel: KernelSpec | None = None
    params: EllipticityParams | None = None
    sectors: int = 16
    families: list = field(default_factory=list)

    def __post_init__(self):
        kinds = ("linear", "pucci_plus", "pucci_minus", "pucci_star_plus",
                 "pucci_star_minus", "infsup")
        if self.kind not in kinds:
            raise ValueError(f"unknown operator {self.kind!r}")
        if self.kind == "linear" and self.kernel is None:
            raise ValueError("linear operator needs a kernel")
        if self.kind.startswith("pucci") and self.params is None:
            raise ValueError(f"{self.kind} needs ellipticity parameters")
        if self.kind == "infsup" and not (self.families and all(self.families)):
            raise ValueError("infsup needs nonempty kernel families")
        if self.sectors < 1:
            raise ValueError("sector count must be positive")

    @property
    def kernels(self) -> list:
        if self.kind == "linear":
            return [self.kernel]
        return [k for fam in self.families for k in fam]

    def validate(self, n: int, n_probe: int = 512) -> dict:
        """l0_check of every member kernel on random offsets (fixed seed)."""
        if self.params is None or not self.kernels:
            return {"passed": True, "checked": 0}
        rng = np.random.default_rng(0)
        r = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), n_probe))
        if n == 1:
            y = (r * rng.choice([-1.0, 1.0], n_probe))[:, None]
        else:
            t = rng.uniform(0, 2 * math.pi, n_probe)
            y = np.stack([r * np.cos(t), r * np.sin(t)], -1)
        reps = [l0_check(K, self.params, y) for K in self.kernels]
        return {"passed": all(rp["passed"] for rp in reps), "checked": len(reps), "reports": reps}


def linear(K: KernelSpec, params: EllipticityParams | None = None) -> OperatorSpec:
    return OperatorSpec("linear", K.s, kernel=K, params=params)


def pucci(p: EllipticityParams, sign: int, star: bool = False, sectors: int = 16) -> OperatorSpec:
    kind = ("pucci_star_" if star else "pucci_") + ("plus" if sign > 0 else "minus")
    return OperatorSpec(kind, p.s, params=p, sectors=sectors)


def infsup(families, params: EllipticityParams | None = None) -> OperatorSpec:
    fams = [list(f) for f in families]
    return OperatorSpec("infsup", fams[0][0].s, params=params, families=fams)


class DiscreteOperator:
    """An OperatorSpec bound to a stencil.

    ``evaluate(delta)`` returns the nodal values and the per-sample weights
    a_q of the active linear piece, so that the generalized Jacobian is
    sum_q a_q dS_q/du. Every operator here is piecewise linear in delta.
    """

    def __init__(self, spec: OperatorSpec, stencil: Stencil):
        if abs(spec.s - stencil.s) > 1e-14:
            raise ValueError("operator order and stencil order differ")
        self.spec = spec
        self.st = stencil
        self.N = stencil.N
        self._mult = {}
        self._A = None

    def multiplier(self, K: KernelSpec) -> np.ndarray:
        key = id(K)
        if key not in self._mult:
            sec = self.st.sectors(K.sectors) if K.variant == "homogeneous" else None
            self._mult[key] = (K, K.multiplier(self.st.y, sector=sec) * self.st.kappa)
        return self._mult[key][1]

    @property
    def is_linear(self) -> bool:
        return self.spec.kind == "linear"

    def linear_matrix(self) -> np.ndarray:
        if self._A is None:
            self._A = self.st.jacobian(self.multiplier(self.spec.kernel))
        return self._A

    def evaluate(self, delta):
        st, sp_ = self.st, self.spec
        kind = sp_.kind
        if kind == "linear":
            a = self.multiplier(sp_.kernel)
            return st.aggregate(a * delta), a
        if kind in ("pucci_plus", "pucci_minus"):
            p = sp_.params
            hi, lo = (p.Lam, p.lam) if kind == "pucci_plus" else (p.lam, p.Lam)
            a = (1 - p.s) * st.kappa * np.where(delta > 0, hi, lo)
            return st.aggregate(a * delta), a
        if kind in ("pucci_star_plus", "pucci_star_minus"):
            p = sp_.params
            hi, lo = (p.Lam, p.lam) if kind == "pucci_star_plus" else (p.lam, p.Lam)
            m = sp_.sectors if st.grid.dim > 1 else 1
            bin_ = st.row * m + st.sectors(m)
            J = np.bincount(bin_, weights=st.kappa * delta, minlength=self.N * m)
            coef = np.where(J > 0, hi, lo)
            val = (1 - p.s) * (coef * J).reshape(self.N, m).sum(axis=1)
            return val, (1 - p.s) * st.kappa * coef[bin_]
        # infsup
        best = None
        for fam in sp_.families:
            inner = None
            for K in fam:
                a = self.multiplier(K)
                v = st.aggregate(a * delta)
                if inner is None:
                    inner, pick = v, np.zeros(self.N, dtype=np.int64)
                    mats = [a]
                else:
                    better = v > inner
                    inner = np.where(better, v, inner)
                    pick = np.where(better, len(mats), pick)
                    mats.append(a)
            a_fam = np.choose(pick[st.row], mats) if len(mats) > 1 else mats[0]
            if best is None:
                best, a_best = inner, a_fam
            else:
                lower = inner < best
                best = np.where(lower, inner, best)
                a_best = np.where(lower[st.row], a_fam, a_best)
        return best, a_best

    def delta(self, u, e):
        return self.st.S @ u + e

    def apply(self, u, e):
        if self.is_linear:
            return self.linear_matrix() @ u + self.st.aggregate(self.multiplier(self.spec.kernel) * e)
        return self.evaluate(self.delta(u, e))[0]

    def apply_jac(self, u, e):
        """Value, dense generalized Jacobian and the affine offset I - J u."""
        if self.is_linear:
            A = self.linear_matrix()
            c = self.st.aggregate(self.multiplier(self.spec.kernel) * e)
            return A @ u + c, A, c
        val, a = self.evaluate(self.delta(u, e))
        J = self.st.jacobian(a)
        return val, J, val - J @ u

    def diag_bound(self) -> float:
        """Largest |d(Iu)_i/du_i| over the class (used for the step size)."""
        st = self.st
        if self.is_linear:
            d = np.diag(self.linear_matrix())
            return float(np.max(-d))
        top = self.max_multiplier()
        return float(np.max(-st.aggregate(top * st.kappa * st.selfc)))

    def max_multiplier(self) -> float:
        sp_ = self.spec
        if sp_.kind.startswith("pucci"):
            return (1 - sp_.params.s) * sp_.params.Lam
        return max(float(np.max(self.multiplier(K) / self.st.kappa)) for K in sp_.kernels)

    def node_value(self, i: int, delta_row):
        """Operator value at node i from that row's sample deltas."""
        lo, hi = self.st.rowptr[i], self.st.rowptr[i + 1]
        st, sp_ = self.st, self.spec
        kap = st.kappa[lo:hi]
        kind = sp_.kind
        if kind == "linear":
            return float(np.dot(self.multiplier(sp_.kernel)[lo:hi], delta_row))
        if kind in ("pucci_plus", "pucci_minus"):
            p = sp_.params
            hi_, lo_ = (p.Lam, p.lam) if kind == "pucci_plus" else (p.lam, p.Lam)
            t = kap * delta_row
            return float((1 - p.s) * np.sum(np.where(t > 0, hi_ * t, lo_ * t)))
        if kind.startswith("pucci_star"):
            p = sp_.params
            hi_, lo_ = (p.Lam, p.lam) if kind == "pucci_star_plus" else (p.lam, p.Lam)
            m = sp_.sectors if st.grid.dim > 1 else 1
            J = np.bincount(st.sectors(m)[lo:hi], weights=kap * delta_row, minlength=m)
            return float((1 - p.s) * np.sum(np.where(J > 0, hi_ * J, lo_ * J)))
        return float(min(
            max(np.dot(self.multiplier(K)[lo:hi], delta_row) for K in fam) for fam in sp_.families
        ))

    def tail_bound(self, sup_u: float) -> float:
        """4 sup|u| times the kernel mass beyond the lattice radius."""
        sp_ = self.spec
        n = self.st.grid.dim
        R = self.st.R
        if sp_.kind == "linear" and sp_.kernel.variant != "power_bounded":
            mass = tail_mass(sp_.kernel, R)
        else:
            top = self.max_multiplier() if sp_.kind != "linear" else 1.0
            mass = top * power_tail(n, sp_.s, R)
        return 4.0 * sup_u * mass


def bind(spec: OperatorSpec, grid: Grid, mode: str = "auto", stencil: Stencil | None = None):
    st = stencil if stencil is not None else get_stencil(grid, spec.s, mode)
    return DiscreteOperator(spec, st)


def _apply(spec: OperatorSpec, u: Field, tol_tail: float, mode: str, stencil=None) -> Field:
    op = bind(spec, u.grid, mode, stencil)
    truncate = u.exterior is None
    bound = op.tail_bound(float(np.max(np.abs(u.values), initial=0.0)))
    if truncate and bound > tol_tail:
        raise TailError(
            f"far-field bound {bound:.3g} exceeds tol_tail={tol_tail:.3g} and no exterior data "
            "is available beyond the halo; supply exterior data or enlarge R_cut"
        )
    e = op.st.exterior_offset(u.exterior, truncate=truncate)
    vals = op.apply(u.values, e)
    return Field(u.grid, vals, None, meta={"tail_bound": bound, "truncated": truncate})


def second_diff(u: Field, x, y) -> float:
    """u(x+y) + u(x-y) - 2u(x), reading stored nodes or exterior data."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    vals = u.at(np.stack([x + y, x - y, x]))
    return float(vals[0] + vals[1] - 2 * vals[2])


def apply_linear(u: Field, K: KernelSpec, tol_tail: float = 1e-6, mode: str = "auto",
                 stencil=None) -> Field:
    """L u(x) = int delta u(x, y) K(y) dy at every interior node."""
    return _apply(linear(K), u, tol_tail, mode, stencil)


def apply_pucci(u: Field, p: EllipticityParams, sign: int, tol_tail: float = 1e-6,
                mode: str = "auto", stencil=None) -> Field:
    """M+ (sign=+1) or M- (sign=-1) over the class L0."""
    return _apply(pucci(p, sign), u, tol_tail, mode, stencil)


def apply_pucci_star(u: Field, p: EllipticityParams, sign: int, sectors: int = 16,
                     tol_tail: float = 1e-6, mode: str = "auto", stencil=None) -> Field:
    """Extremal operators over homogeneous kernels with ``sectors`` half-turn sectors."""
    return _apply(pucci(p, sign, star=True, sectors=sectors), u, tol_tail, mode, stencil)


def apply_operator(spec: OperatorSpec, u: Field, tol_tail: float = 1e-6, mode: str = "auto",
                   stencil=None) -> Field:
    return _apply(spec, u, tol_tail, mode, stencil)


def ellipticity_test(spec: OperatorSpec, u: Field, v: Field, tol: float,
                     params: EllipticityParams | None = None, mode: str = "auto",
                     tol_tail: float = np.inf) -> dict:
    """Check M-(u-v) <= Iu - Iv <= M+(u-v) at every interior node."""
    p = params or spec.params
    if p is None:
        raise ValueError("ellipticity_test needs ellipticity parameters")
    w = u - v
    Iu = apply_operator(spec, u, tol_tail, mode).values
    Iv = apply_operator(spec, v, tol_tail, mode).values
    lo = apply_pucci(w, p, -1, tol_tail, mode).values
    hi = apply_pucci(w, p, +1, tol_tail, mode).values
    diff = Iu - Iv
    below = np.flatnonzero(diff < lo - tol)
    above = np.flatnonzero(diff > hi + tol)
    return {
        "passed": bool(below.size == 0 and above.size == 0),
        "max_lower_violation": float(np.max(lo - diff, initial=-np.inf)),
        "max_upper_violation": float(np.max(diff - hi, initial=-np.inf)),
        "violations": sorted(set(below.tolist()) | set(above.tolist())),
        "M_minus": lo,
        "difference": diff,
        "M_plus": hi,
    }
