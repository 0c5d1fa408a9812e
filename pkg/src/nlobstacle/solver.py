"""Penalized, continued and direct solvers for the double obstacle problem

    max{ min{ -Iu - f, u - psi^- }, u - psi^+ } = 0 in U,   u = phi outside.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .geometry import Domain, Grid, build_grid, dilate
from .nonlocal_op import Field, OperatorSpec, bind
from .obstacles import ObstacleSet, mollify_set
from .penalty import PenaltyFn, beta_deriv, beta_eval

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    def __init__(self, msg, best_residual=None, solution=None):
        super().__init__(msg)
        self.best_residual = best_residual
        self.solution = solution


def default_delta_schedule():
    return [0.1 * 2.0**-j for j in range(7)]


def default_epsilon_schedule():
    return [0.16 * 2.0**-k for k in range(4)]


@dataclass
class SolveConfig:
    method: str = "semismooth_newton"  # or damped_fixed_point
    tau: float | None = None
    tol_residual: float = 1e-9
    max_iter: int = 200
    delta_schedule: list = field(default_factory=default_delta_schedule)
    epsilon_schedule: list = field(default_factory=default_epsilon_schedule)
    tol_tail: float = 1e-6
    direct_method: str = "active_set"  # or pgs, pgs_redblack

    def __post_init__(self):
        if self.method not in ("semismooth_newton", "damped_fixed_point"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.direct_method not in ("active_set", "pgs", "pgs_redblack"):
            raise ValueError(f"unknown direct method {self.direct_method!r}")
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        for name in ("delta_schedule", "epsilon_schedule"):
            sch = list(getattr(self, name))
            if any(v <= 0 for v in sch) or any(b >= a for a, b in zip(sch, sch[1:])):
                raise ValueError(f"{name} must be strictly decreasing and positive")


class ProblemInstance:
    """Grid, operator, right-hand side, obstacles and exterior data.

    ``obstacles`` is anything with ``psi_plus``, ``psi_minus`` and ``phi``
    callables (raw, mollified or blended pairs).
    """

    def __init__(self, grid: Grid, operator: OperatorSpec, f, obstacles, mode: str = "auto"):
        self.grid = grid
        self.operator = operator
        self.f = f
        self.obstacles = obstacles
        self.mode = mode
        P = grid.points
        self.fvals = _eval_f(f, P)
        self.lo = np.asarray(obstacles.psi_minus(P), dtype=float)
        self.hi = np.asarray(obstacles.psi_plus(P), dtype=float)
        if np.any(self.lo > self.hi + 1e-14):
            raise ValueError("psi^- exceeds psi^+ at an interior node")
        self._op = None
        self._e = None

    @property
    def domain(self) -> Domain:
        return self.grid.domain

    @property
    def phi(self) -> Callable:
        return self.obstacles.phi

    @property
    def op(self):
        if self._op is None:
            self._op = bind(self.operator, self.grid, self.mode)
        return self._op

    @property
    def e(self):
        if self._e is None:
            self._e = self.op.st.exterior_offset(self.phi)
        return self._e

    def apply(self, u) -> np.ndarray:
        return self.op.apply(u, self.e)

    def field(self, u) -> Field:
        return Field(self.grid, u, self.phi)


def _eval_f(f, P):
    if callable(f):
        return np.asarray(f(P), dtype=float) * np.ones(len(P))
    return np.full(len(P), float(f))


@dataclass
class SolutionField:
    u: Field
    provenance: str
    iterations: int
    residual: float
    C0_tilde: float | None = None
    delta: float | None = None
    eps: float | None = None
    trace: list = field(default_factory=list)
    instance: ProblemInstance | None = None

    @property
    def values(self):
        return self.u.values


# ---------------------------------------------------------------------- residuals

def residual_maxmin(inst: ProblemInstance, u) -> np.ndarray:
    """max{min{-Iu - f, u - psi^-}, u - psi^+} at every interior node."""
    u = np.asarray(getattr(u, "values", u), dtype=float)
    A = -inst.apply(u) - inst.fvals
    return np.maximum(np.minimum(A, u - inst.lo), u - inst.hi)


def penalized_residual(inst: ProblemInstance, u, p: PenaltyFn) -> np.ndarray:
    return -inst.apply(u) - inst.fvals - beta_eval(p, inst.lo - u) + beta_eval(p, u - inst.hi)


def measured_C0(inst, u, p):
    return float(max(np.max(beta_eval(p, u - inst.hi), initial=0.0),
                     np.max(beta_eval(p, inst.lo - u), initial=0.0)))


def overshoots(inst, u):
    return (float(np.max(np.maximum(u - inst.hi, 0.0), initial=0.0)),
            float(np.max(np.maximum(inst.lo - u, 0.0), initial=0.0)))


# ---------------------------------------------------------------------- penalized

def stable_step(inst: ProblemInstance, p: PenaltyFn) -> float:
    diag = inst.op.diag_bound()
    if not diag > 0 or not math.isfinite(diag):
        raise NonConvergence("cannot derive a pseudo-time step: degenerate operator diagonal")
    return 0.9 * min(1.0 / diag, 3.0 * p.delta / 8.0)


def solve_penalized(inst: ProblemInstance, p: PenaltyFn, cfg: SolveConfig, warm=None
                    ) -> SolutionField:
    """Solve -Iu - f - beta(psi^- - u) + beta(u - psi^+) = 0 at the interior nodes."""
    N = inst.grid.n_interior
    u = np.zeros(N) if warm is None else np.array(getattr(warm, "values", warm), dtype=float)
    F = penalized_residual(inst, u, p)
    res = float(np.max(np.abs(F), initial=0.0))
    it = 0
    if cfg.method == "damped_fixed_point":
        tau = cfg.tau or stable_step(inst, p)
        while res > cfg.tol_residual and it < cfg.max_iter:
            u = u - tau * F
            F = penalized_residual(inst, u, p)
            res = float(np.max(np.abs(F)))
            it += 1
    else:
        while res > cfg.tol_residual and it < cfg.max_iter:
            Iu, J, c = inst.op.apply_jac(u, inst.e)
            D = beta_deriv(p, inst.lo - u) + beta_deriv(p, u - inst.hi)
            JF = -J + np.diag(D)
            du = sla.solve(JF, -F, check_finite=False)
            t = 1.0
            norm0 = float(np.linalg.norm(F))
            while True:
                un = u + t * du
                Fn = penalized_residual(inst, un, p)
                if np.linalg.norm(Fn) <= (1 - 1e-4 * t) * norm0 or t < 1e-6:
                    break
                t *= 0.5
            u, F = un, Fn
            res = float(np.max(np.abs(F)))
            it += 1
    sol = SolutionField(inst.field(u), "penalized", it, res, measured_C0(inst, u, p),
                        delta=p.delta, eps=getattr(inst.obstacles, "eps", None), instance=inst)
    if res > cfg.tol_residual:
        raise NonConvergence(
            f"penalized solve stalled at residual {res:.3e} after {it} iterations (delta={p.delta})",
            res, sol)
    return sol


def continuation_delta(inst: ProblemInstance, cfg: SolveConfig, warm=None) -> SolutionField:
    """Run the penalized solve along the delta schedule with warm starts."""
    if not cfg.delta_schedule:
        raise ValueError("empty delta schedule")
    trace = []
    sol = None
    cur = warm
    for d in cfg.delta_schedule:
        p = PenaltyFn(d)
        sol = solve_penalized(inst, p, cfg, cur)
        up, lo = overshoots(inst, sol.values)
        trace.append({"delta": d, "overshoot_upper": up, "overshoot_lower": lo,
                      "C0_tilde": sol.C0_tilde, "iterations": sol.iterations,
                      "residual": sol.residual})
        cur = sol.u
    sol.trace = trace
    sol.provenance = "continued_eps"
    return sol


@dataclass
class BaseProblem:
    """Data for the epsilon continuation: everything except the grid."""

    domain: Domain
    h: float
    operator: OperatorSpec
    f: object
    obstacles: ObstacleSet
    R_cut: float | None = None
    mode: str = "auto"

    def grid(self, eps: float = 0.0) -> Grid:
        dom = dilate(self.domain, eps)
        R = max(self.R_cut or 0.0, dom.diam)
        return build_grid(dom, self.h, R)

    def direct_instance(self) -> ProblemInstance:
        return ProblemInstance(self.grid(0.0), self.operator, self.f, self.obstacles, self.mode)


def restrict(u: Field, grid: Grid) -> np.ndarray:
    """Transfer nodal values between grids on the same lattice; new nodes get exterior data."""
    src = u.grid
    if abs(src.h - grid.h) > 1e-15:
        raise ValueError("grids must share the lattice spacing")
    idx = src.find(grid.interior_lattice_index())
    out = np.empty(grid.n_interior)
    have = idx >= 0
    out[have] = u.values[idx[have]]
    if np.any(~have):
        g = u.exterior
        out[~have] = g(grid.points[~have]) if g is not None else 0.0
    return out


def continuation_epsilon(base: BaseProblem, cfg: SolveConfig, V_margin: float = 0.3
                         ) -> SolutionField:
    """Mollify, dilate and run the delta continuation for each epsilon."""
    if not cfg.epsilon_schedule:
        raise ValueError("empty epsilon schedule")
    levels = []
    prev = None
    sol = None
    for eps in cfg.epsilon_schedule:
        if not eps > 2 * base.h:
            raise ValueError(f"epsilon={eps} is under-resolved: need eps > 2h = {2 * base.h}")
        grid = base.grid(eps)
        mol = mollify_set(base.obstacles, eps, grid)
        inst = ProblemInstance(grid, base.operator, base.f, mol, base.mode)
        warm = restrict(prev.u, grid) if prev is not None else None
        sol = continuation_delta(inst, cfg, warm)
        entry = {"eps": eps, "n_nodes": grid.n_interior, "delta_trace": sol.trace,
                 "V_k_margin": 3 * eps + base.h}
        if prev is not None:
            d = base.domain.signed_distance(grid.points)
            V = d >= V_margin
            entry["sup_diff_on_V"] = float(np.max(np.abs(sol.values - restrict(prev.u, grid))[V],
                                                  initial=0.0))
        levels.append(entry)
        prev = sol
    sol.trace = levels
    sol.provenance = "continued"
    return sol


# ------------------------------------------------------------------------ direct

def _branches(A, u, lo, hi, diag):
    """0 = equation, 1 = lower obstacle, 2 = upper obstacle.

    A node is put on an obstacle when its one-point relaxation
    z = u - A/diag leaves [psi^-, psi^+]. Picking the active piece of the
    max-min directly can flip a node between the two obstacles forever
    when the gap is small compared to A/diag.
    """
    z = u - A / diag
    return np.where(z >= hi, 2, np.where(z <= lo, 1, 0))


def solve_direct(inst: ProblemInstance, cfg: SolveConfig, warm=None) -> SolutionField:
    """Solve the max-min system directly.

    ``active_set`` is a semismooth Newton (policy) iteration: each step picks
    the active piece at every node and solves the resulting linear system.
    ``pgs`` is projected Gauss-Seidel (lexicographic sweeps) and
    ``pgs_redblack`` its two-colour variant.
    """
    if cfg.direct_method == "active_set":
        return _direct_active_set(inst, cfg, warm)
    return _direct_pgs(inst, cfg, warm, redblack=cfg.direct_method == "pgs_redblack")


def _free_guess(inst):
    """Clipped solution of the linearization at 0 with every node free."""
    Iu, J, c = inst.op.apply_jac(np.zeros(inst.grid.n_interior), inst.e)
    u = sla.solve(-J, inst.fvals + c, check_finite=False)
    return np.clip(u, inst.lo, inst.hi)


def _direct_active_set(inst, cfg, warm):
    if warm is None:
        u = _free_guess(inst)
    else:
        u = np.clip(np.array(getattr(warm, "values", warm), dtype=float), inst.lo, inst.hi)
    best = np.inf
    it = 0
    res = np.inf
    seen = set()
    while it < cfg.max_iter:
        Iu, J, c = inst.op.apply_jac(u, inst.e)
        A = -Iu - inst.fvals
        G = np.maximum(np.minimum(A, u - inst.lo), u - inst.hi)
        res = float(np.max(np.abs(G), initial=0.0))
        best = min(best, res)
        if res <= cfg.tol_residual:
            break
        br = _branches(A, u, inst.lo, inst.hi, -np.diag(J))
        key = br.tobytes() + hash(J.tobytes()).to_bytes(8, 'little', signed=True)
        B = -J.copy()
        rhs = inst.fvals + c
        fix = br > 0
        B[fix, :] = 0.0
        B[fix, fix] = 1.0
        rhs = np.where(br == 1, inst.lo, np.where(br == 2, inst.hi, rhs))
        un = sla.solve(B, rhs, check_finite=False)
        if key in seen:
            # a repeated active pattern: damp toward the new iterate
            t = 1.0
            while t > 1e-4:
                cand = u + t * (un - u)
                if np.max(np.abs(residual_maxmin(inst, cand))) < res:
                    break
                t *= 0.5
            un = u + t * (un - u)
        seen.add(key)
        u = un
        it += 1
    sol = SolutionField(inst.field(u), "direct", it, res, instance=inst)
    if res > cfg.tol_residual:
        raise NonConvergence(f"direct solve stalled at residual {res:.3e}", best, sol)
    return sol


def _node_solve(op, i, u, e, f_i):
    """Root z of -I_i(u with u_i = z) = f_i by bracketing and bisection."""
    st = op.st
    lo_q, hi_q = st.rowptr[i], st.rowptr[i + 1]
    d0 = st.S[lo_q:hi_q] @ u + e[lo_q:hi_q]
    sc = st.selfc[lo_q:hi_q]
    ui = u[i]

    def g(z):
        return -op.node_value(i, d0 + sc * (z - ui)) - f_i

    if op.is_linear:
        a = op.multiplier(op.spec.kernel)[lo_q:hi_q]
        slope = -float(np.dot(a, sc))
        return ui - g(ui) / slope
    step = max(1.0, abs(ui))
    a, b = ui - step, ui + step
    ga, gb = g(a), g(b)
    while ga > 0:
        a -= 2 * step
        step *= 2
        ga = g(a)
    while gb < 0:
        b += 2 * step
        step *= 2
        gb = g(b)
    while b - a > 1e-12 * max(1.0, abs(a), abs(b)):
        m = 0.5 * (a + b)
        if g(m) > 0:
            b = m
        else:
            a = m
    return 0.5 * (a + b)


def _direct_pgs(inst, cfg, warm, redblack=False):
    N = inst.grid.n_interior
    u = np.zeros(N) if warm is None else np.array(getattr(warm, "values", warm), dtype=float)
    u = np.clip(u, inst.lo, inst.hi)
    op, e = inst.op, inst.e
    if redblack:
        parity = inst.grid.interior_lattice_index().sum(axis=1) % 2
        colours = [np.flatnonzero(parity == 0), np.flatnonzero(parity == 1)]
    else:
        colours = None
    res = float(np.max(np.abs(residual_maxmin(inst, u))))
    it = 0
    while res > cfg.tol_residual and it < cfg.max_iter:
        if colours is None:
            for i in range(N):
                z = _node_solve(op, i, u, e, inst.fvals[i])
                u[i] = min(max(z, inst.lo[i]), inst.hi[i])
        else:
            for col in colours:
                frozen = u.copy()
                for i in col:
                    z = _node_solve(op, i, frozen, e, inst.fvals[i])
                    u[i] = min(max(z, inst.lo[i]), inst.hi[i])
        res = float(np.max(np.abs(residual_maxmin(inst, u))))
        it += 1
    sol = SolutionField(inst.field(u), "direct", it, res, instance=inst)
    if res > cfg.tol_residual:
        raise NonConvergence(f"projected sweeps stalled at residual {res:.3e}", res, sol)
    return sol


def contact_flags(inst: ProblemInstance, u, tol: float) -> np.ndarray:
    """'lower', 'upper' or 'none' per node; lower wins where the obstacles meet."""
    u = np.asarray(getattr(u, "values", u))
    return np.where(u <= inst.lo + tol, "lower", np.where(u >= inst.hi - tol, "upper", "none"))
