"""Obstacle pairs, exterior data, mollification and boundary blending.

All obstacle functions are plain callables on arrays of points with shape
(k, n). Presets:

* ``distance``: psi = +-rho with rho the distance to the boundary
  (zero outside), phi = 0.
* ``smoothed_distance``: the same pair rounded near the boundary so it is
  C^2 across it.
* ``constant``: psi = +-bound inside U, phi = 0 outside. Far from active,
  this is the unconstrained setting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Domain, Grid, dilate


class ZeroFunction:
    """phi = 0, recognised so that mollification and quadrature can skip work."""

    def __call__(self, p):
        return np.zeros(np.asarray(p).shape[0])

    def __repr__(self):
        return "ZeroFunction()"


def is_zero(g) -> bool:
    return isinstance(g, ZeroFunction)


def collar_profile(t, w: float):
    """C^2 rounding of max(t, 0): w(tau^3 - tau^4/2) on [0, w], t - w/2 beyond.

    Slope lies in [0, 1] and the second derivative is at most 1.5/w.
    """
    t = np.asarray(t, dtype=float)
    tau = np.clip(t / w, 0.0, 1.0)
    inner = w * (tau**3 - 0.5 * tau**4)
    return np.where(t >= w, t - 0.5 * w, np.where(t > 0, inner, 0.0))


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)

    def f(z):
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(-1.0 / z[pos])
        return out

    a, b = f(t), f(1.0 - t)
    return a / (a + b)


@dataclass(eq=False)
class ObstacleSet:
    domain: Domain
    psi_plus: Callable
    psi_minus: Callable
    phi: Callable
    C1: float
    semiconcavity: Callable  # margin -> C(margin), a bound for +-delta psi^+- / |y|^2
    name: str = "custom"
    smoothing_width: float | None = None


def preset_distance_obstacles(domain: Domain) -> ObstacleSet:
    """psi^+- = +-rho, rho = max(d, 0); phi = 0.

    For the interval and the disk d is concave in U, so +-delta psi^+- <= 0
    and the semiconcavity constant is 0 at every margin.
    """

    def rho(p):
        return np.maximum(domain.signed_distance(p), 0.0)

    return ObstacleSet(
        domain=domain,
        psi_plus=rho,
        psi_minus=lambda p: -rho(p),
        phi=ZeroFunction(),
        C1=1.0,
        semiconcavity=lambda eps: 0.0,
        name="distance",
    )


def preset_smoothed_distance_obstacles(domain: Domain, width: float = 0.1) -> ObstacleSet:
    """psi^+- = +-g(d) with g the C^2 collar rounding of max(d, 0)."""
    if not 0 < width < domain.inradius:
        raise ValueError("smoothing width must lie in (0, inradius)")

    def g(p):
        return collar_profile(domain.signed_distance(p), width)

    return ObstacleSet(
        domain=domain,
        psi_plus=g,
        psi_minus=lambda p: -g(p),
        phi=ZeroFunction(),
        C1=1.0,
        semiconcavity=lambda eps: 1.5 / width,
        name="smoothed_distance",
        smoothing_width=width,
    )


def preset_constant_obstacles(domain: Domain, bound: float = 1.0) -> ObstacleSet:
    """psi^+- = +-bound in U and 0 outside: not Lipschitz across the boundary."""
    if not bound > 0:
        raise ValueError("bound must be positive")

    def plus(p):
        return np.where(domain.signed_distance(p) > 0, bound, 0.0)

    return ObstacleSet(
        domain=domain,
        psi_plus=plus,
        psi_minus=lambda p: -plus(p),
        phi=ZeroFunction(),
        C1=math.inf,
        semiconcavity=lambda eps: 0.0,
        name="constant",
    )


def make_preset(name: str, domain: Domain, **kw) -> ObstacleSet:
    if name == "distance":
        return preset_distance_obstacles(domain)
    if name == "smoothed_distance":
        return preset_smoothed_distance_obstacles(domain, kw.get("width", 0.1))
    if name == "constant":
        return preset_constant_obstacles(domain, kw.get("bound", 1.0))
    raise ValueError(f"unknown obstacle preset {name!r}")


# ---------------------------------------------------------------- mollification

def mollifier_weights(eps: float, h: float, n: int):
    """Lattice offsets with |y| < eps and normalized bump weights."""
    k = int(math.ceil(eps / h))
    r1 = np.arange(-k, k + 1)
    if n == 1:
        offs = r1[:, None] * h
    else:
        I, J = np.meshgrid(r1, r1, indexing="ij")
        offs = np.stack([I.ravel(), J.ravel()], -1) * h
    r = np.linalg.norm(offs, axis=-1) / eps
    keep = r < 1
    offs, r = offs[keep], r[keep]
    w = np.exp(-1.0 / (1.0 - r**2))
    return offs, w / w.sum()


class Mollified:
    """x -> sum_j eta_j f(x - y_j) on a fixed set of lattice offsets."""

    def __init__(self, f: Callable, offsets, weights):
        self.f = f
        self.offsets = offsets
        self.weights = weights

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(len(p))
        for y, w in zip(self.offsets, self.weights):
            out += w * self.f(p - y)
        return out


@dataclass(eq=False)
class MollifiedObstacles:
    eps: float
    domain_eps: Domain
    psi_plus: Callable
    psi_minus: Callable
    phi: Callable
    offsets: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    base: ObstacleSet | None = None


def mollify(psi: Callable, eps: float, grid: Grid):
    """Mollify ``psi`` at radius eps with the lattice bump of ``grid``.

    Returns the nodal values on the whole lattice box and the callable.
    """
    if not eps > 2 * grid.h:
        raise ValueError(f"mollifier radius eps={eps} must exceed 2h={2 * grid.h}")
    offs, w = mollifier_weights(eps, grid.h, grid.dim)
    fn = ZeroFunction() if is_zero(psi) else Mollified(psi, offs, w)
    return fn(grid.coords), fn


def mollify_set(obs: ObstacleSet, eps: float, grid: Grid) -> MollifiedObstacles:
    _, pp = mollify(obs.psi_plus, eps, grid)
    _, pm = mollify(obs.psi_minus, eps, grid)
    _, ph = mollify(obs.phi, eps, grid)
    offs, w = mollifier_weights(eps, grid.h, grid.dim)
    return MollifiedObstacles(eps, dilate(obs.domain, eps), pp, pm, ph, offs, w, obs)


# ------------------------------------------------------------------ verification

def _difference_quotients(f, grid: Grid):
    """Axis difference quotients of f between neighbouring box nodes."""
    vals = f(grid.coords).reshape(grid.shape)
    out = []
    for k in range(grid.dim):
        out.append(np.abs(np.diff(vals, axis=k)).ravel() / grid.h)
    return np.concatenate(out)


def verify_assumption1(obs: ObstacleSet, grid: Grid, margins=(0.1, 0.2), n_pairs: int = 20000,
                       seed: int = 0) -> dict:
    """Lipschitz bound, gap bound, and measured semiconcavity constants."""
    rng = np.random.default_rng(seed)
    X = grid.coords
    i = rng.integers(0, len(X), n_pairs)
    j = rng.integers(0, len(X), n_pairs)
    ok = i != j
    i, j = i[ok], j[ok]
    dist = np.linalg.norm(X[i] - X[j], axis=-1)
    lip = 0.0
    for f in (obs.psi_plus, obs.psi_minus, obs.phi):
        v = f(X)
        lip = max(lip, float(np.max(np.abs(v[i] - v[j]) / dist)))
    # neighbours catch jumps that random pairs at O(1) distance would average out
    for f in (obs.psi_plus, obs.psi_minus, obs.phi):
        lip = max(lip, float(np.max(_difference_quotients(f, grid))))
    a_ok = lip <= obs.C1 * (1 + 1e-9)

    P = grid.points
    d = grid.domain.signed_distance(P)
    gap = obs.psi_plus(P) - obs.psi_minus(P)
    b_ok = bool(np.all(gap > 0) and np.all(gap <= 2 * obs.C1 * d * (1 + 1e-12) + 1e-14))

    semi = {}
    c_ok = True
    for eps in margins:
        Cm = _measure_semiconcavity(obs, grid, eps, rng)
        table = obs.semiconcavity(eps)
        semi[str(eps)] = {"measured": Cm, "table": table}
        if Cm is not None and Cm > table + 1e-9:
            c_ok = False
    return {
        "passed": bool(a_ok and b_ok and c_ok),
        "lipschitz": {"passed": bool(a_ok), "measured": lip, "C1": obs.C1},
        "gap": {"passed": b_ok, "min_gap": float(gap.min()) if gap.size else None},
        "semiconcavity": {"passed": c_ok, "margins": semi},
    }


def _measure_semiconcavity(obs, grid, eps, rng, max_nodes=400, max_offsets=400):
    P = grid.points
    d = grid.domain.signed_distance(P)
    cand = np.flatnonzero(d > eps)
    if cand.size == 0:
        return None
    if cand.size > max_nodes:
        cand = np.sort(rng.choice(cand, max_nodes, replace=False))
    h = grid.h
    kmax = int(np.floor((d[cand].max() - eps) / h))
    if kmax < 1:
        return None
    r1 = np.arange(-kmax, kmax + 1)
    if grid.dim == 1:
        offs = r1[r1 > 0][:, None] * h
    else:
        I, J = np.meshgrid(r1, r1, indexing="ij")
        offs = np.stack([I.ravel(), J.ravel()], -1) * h
        offs = offs[(offs[:, 0] > 0) | ((offs[:, 0] == 0) & (offs[:, 1] > 0))]
    if len(offs) > max_offsets:
        offs = offs[rng.choice(len(offs), max_offsets, replace=False)]
    best = -np.inf
    for x, dx in zip(P[cand], d[cand]):
        y = offs[np.linalg.norm(offs, axis=-1) <= dx - eps + 1e-12]
        if len(y) == 0:
            continue
        r2 = np.sum(y**2, -1)
        for f, sgn in ((obs.psi_plus, 1.0), (obs.psi_minus, -1.0)):
            dl = f(x + y) + f(x - y) - 2 * f(x[None])[0]
            best = max(best, float(np.max(sgn * dl / r2)))
    return None if best == -np.inf else best


def verify_mollified(m: MollifiedObstacles, obs: ObstacleSet, grid: Grid) -> dict:
    """Uniform closeness, Lipschitz bound, strict gap on U_eps, agreement outside.

    ``grid`` should cover U_eps. The strict gap is checked at U_eps nodes
    whose mollifier support reaches a node inside U; outer-ring nodes whose
    lattice bump sees only exterior values are counted separately.
    """
    X = grid.coords
    eps = m.eps
    C1 = obs.C1
    closeness = 0.0
    for f, fe in ((obs.psi_plus, m.psi_plus), (obs.psi_minus, m.psi_minus)):
        closeness = max(closeness, float(np.max(np.abs(fe(X) - f(X)))))
    lip = max(float(np.max(_difference_quotients(fe, grid))) for fe in (m.psi_plus, m.psi_minus))
    d_u = obs.domain.signed_distance(X)
    in_ueps = d_u > -eps
    reach = np.max(np.linalg.norm(m.offsets, axis=-1))
    resolved = in_ueps & (d_u > -reach + 1e-12)
    gap = m.psi_plus(X) - m.psi_minus(X)
    outside = d_u <= -eps
    phi_e = m.phi(X)
    agree = float(np.max(np.abs(np.concatenate([
        m.psi_plus(X[outside]) - phi_e[outside], m.psi_minus(X[outside]) - phi_e[outside]
    ])), initial=0.0))
    checks = {
        "closeness": {"passed": closeness <= C1 * eps * (1 + 1e-9), "sup": closeness,
                      "bound": C1 * eps},
        "lipschitz": {"passed": lip <= C1 * (1 + 1e-6), "max_quotient": lip},
        "gap": {"passed": bool(np.all(gap[resolved] > 0)),
                "min_gap": float(gap[resolved].min()) if resolved.any() else None,
                "unresolved_nodes": int(np.sum(in_ueps & ~resolved))},
        "exterior": {"passed": agree <= 1e-12, "max_diff": agree},
    }
    return {"passed": all(c["passed"] for c in checks.values()), **checks}


# ----------------------------------------------------------------------- blending

@dataclass(eq=False)
class BlendedObstacles:
    zeta: Callable
    collars: tuple
    psi_plus: Callable
    psi_minus: Callable
    phi: Callable
    c: float
    eps: float
    domain: Domain
    report: dict = field(default_factory=dict)


def blend(obs: ObstacleSet, m: MollifiedObstacles, collars=(0.3, 0.2, 0.1), grid: Grid | None = None
          ) -> BlendedObstacles:
    """psi_hat = zeta psi + (1 - zeta) psi_eps with zeta = 1 on W1, 0 off W.

    Collars are distances to the boundary, w > w1 > w2 > 0, describing
    W = {|d| < w}, W1 = {|d| < w1}, W2 = {|d| < w2}. The gap floor c is the
    minimum of psi^+ - psi^- over U minus W2, measured on ``grid`` nodes.
    """
    w, w1, w2 = (float(v) for v in collars)
    if not w > w1 > w2 > 0:
        raise ValueError(f"collars must satisfy w > w1 > w2 > 0, got {collars}")
    dom = obs.domain

    def zeta(p):
        d = dom.signed_distance(p)
        return 1.0 - smooth_step((d - w1) / (w - w1))

    def mix(f, fe):
        def g(p):
            z = zeta(p)
            return z * f(p) + (1 - z) * fe(p)
        return g

    if grid is None:
        from .geometry import build_grid
        grid = build_grid(dom, min(w2, dom.inradius) / 20)
    P = grid.points
    d = dom.signed_distance(P)
    off_w2 = d >= w2
    gap = obs.psi_plus(P) - obs.psi_minus(P)
    c = float(gap[off_w2].min()) if off_w2.any() else 0.0
    if not c > 0:
        raise ValueError("gap floor c must be positive")
    b = BlendedObstacles(zeta, (w, w1, w2), mix(obs.psi_plus, m.psi_plus),
                         mix(obs.psi_minus, m.psi_minus), obs.phi, c, m.eps, dom)
    off_w1 = d >= w1
    bgap = b.psi_plus(P) - b.psi_minus(P)
    b.report = {
        "c": c,
        "min_blend_gap_off_W1": float(bgap[off_w1].min()) if off_w1.any() else None,
        "gap_floor_ok": bool(np.all(bgap[off_w1] >= c - 1e-12)),
        "strict_gap_in_U": bool(np.all(bgap > 0)),
    }
    return b
