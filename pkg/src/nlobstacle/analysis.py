"""Measurements on computed solutions.

Penalty decay, operator bounds on mollified obstacles, interior Hoelder
seminorms, the boundary quotient (u - phi)/d^s, contact-sign checks and the
s -> 1 comparison with the classical double obstacle problem. Every report is
a deterministic function of its inputs (random pair sampling uses a fixed seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Interval, build_grid
from .kernel import EllipticityParams
from .nonlocal_op import Field, OperatorSpec, apply_operator, apply_pucci, apply_pucci_star
from .obstacles import ZeroFunction, mollify_set

ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


# ------------------------------------------------------------------ penalty decay

@dataclass
class DecayReport:
    deltas: list
    overshoots: list
    C0_tilde: list
    bounds: list
    holds: list
    slope: float | None
    status: str  # "fitted" or "inactive"

    @property
    def passed(self) -> bool:
        return all(self.holds)

    def to_dict(self) -> dict:
        return {"deltas": self.deltas, "overshoots": self.overshoots, "C0_tilde": self.C0_tilde,
                "bounds": self.bounds, "holds": self.holds, "slope": self.slope,
                "status": self.status, "passed": self.passed}


def penal_decay(trace) -> DecayReport:
    """Overshoot against delta along a continuation trace.

    Checks overshoot_j <= delta_j (C0_j + 1) at every level, where C0_j is
    the penalty size measured on the same run, and fits the slope of
    log(overshoot) against log(delta).
    """
    if len(trace) < 3:
        raise ValueError(f"need at least 3 schedule points, got {len(trace)}")
    deltas = [float(t["delta"]) for t in trace]
    over = [max(float(t["overshoot_upper"]), float(t["overshoot_lower"])) for t in trace]
    C0 = [float(t["C0_tilde"]) for t in trace]
    bounds = [d * (c + 1.0) for d, c in zip(deltas, C0)]
    holds = [o <= b for o, b in zip(over, bounds)]
    pos = [(d, o) for d, o in zip(deltas, over) if o > 0]
    if len(pos) < 2:
        return DecayReport(deltas, over, C0, bounds, holds, None, "inactive")
    x = np.log([p[0] for p in pos])
    y = np.log([p[1] for p in pos])
    slope = float(np.polyfit(x, y, 1)[0])
    return DecayReport(deltas, over, C0, bounds, holds, slope, "fitted")


# ------------------------------------------------------------- operator bounds

def _apply_to(spec: OperatorSpec, grid, g):
    """I g at the interior nodes of ``grid`` with g known on all of R^n."""
    return apply_operator(spec, Field(grid, g(grid.points), g), tol_tail=math.inf).values


def lemma1_bound(obstacles, operator: OperatorSpec, eps_list, h: float, V_margin: float = 0.3,
                 R_cut: float | None = None, factor: float = 2.0) -> dict:
    """sup over V = {d >= V_margin} of I psi_eps^+ and -I psi_eps^- for each eps.

    ``uniform`` compares the two-sided size sup_V |I psi_eps^+-| with
    ``factor`` times its value at the first eps; ``one_sided_uniform`` does
    the same for the one-sided quantities, which are the ones bounded
    by semiconcavity.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("empty epsilon list")
    grid = build_grid(obstacles.domain, h, R_cut)
    V = grid.distance() >= V_margin
    if not V.any():
        raise ValueError(f"region d >= {V_margin} has no nodes")
    s = operator.s
    rows = []
    for eps in eps_list:
        m = mollify_set(obstacles, eps, grid)
        Ip = _apply_to(operator, grid, m.psi_plus)[V]
        Im = _apply_to(operator, grid, m.psi_minus)[V]
        rows.append({
            "eps": eps,
            "sup_I_plus": float(Ip.max()),
            "sup_minus_I_minus": float((-Im).max()),
            "sup_abs": float(max(np.abs(Ip).max(), np.abs(Im).max())),
        })
    e0 = eps_list[0]
    for r in rows:
        r["ratio_to_eps0_power"] = r["sup_abs"] / e0 ** (2 - 2 * s)
    first = rows[0]
    one0 = max(first["sup_I_plus"], first["sup_minus_I_minus"], 0.0)
    C_V = max(max(r["sup_I_plus"], r["sup_minus_I_minus"]) for r in rows)
    return {
        "V_margin": V_margin,
        "V_nodes": int(V.sum()),
        "margin_ok": V_margin >= 3 * max(eps_list),
        "levels": rows,
        "C_V": max(C_V, 0.0),
        "uniform": all(r["sup_abs"] <= factor * first["sup_abs"] * (1 + 1e-12) for r in rows),
        "one_sided_uniform": all(
            max(r["sup_I_plus"], r["sup_minus_I_minus"], 0.0) <= factor * one0 + 1e-9 for r in rows),
    }


def operator_bound_C(inst, margin: float = 0.0) -> float:
    """max(sup I psi^+, sup -I psi^-, 0) over interior nodes with d >= margin.

    Evaluated with the instance's own stencil and exterior data, so that the
    discrete comparison at contact nodes is exact.
    """
    op, e = inst.op, inst.e
    mask = inst.grid.distance() >= margin
    if not mask.any():
        return 0.0
    Ip = op.apply(inst.hi, e)
    Im = op.apply(inst.lo, e)
    return float(max(np.max(Ip[mask]), np.max(-Im[mask]), 0.0))


# ------------------------------------------------------------ Hoelder seminorms

def _bands(L: float, h: float):
    out = []
    k = 0
    while True:
        hi = L * 2.0**-k
        lo = hi / 2
        out.append((lo, hi))
        if lo <= h * (1 + 1e-9):
            break
        k += 1
    return out


def holder_seminorm(points, values, alpha: float, h: float | None = None, bands=None,
                    n_samples: int = 10_000, seed: int = 0) -> dict:
    """max |u(x) - u(y)| / |x - y|^alpha over pairs grouped in dyadic distance bands.

    One-dimensional data is enumerated over all pairs. In two dimensions each
    band draws ``n_samples`` random (node, lattice offset) pairs.

    Returns
    -------
    dict
        ``value`` (the maximum), the argmax ``pair`` and its ``distance``,
        and per-band maxima.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    v = np.asarray(values, dtype=float)
    if len(P) < 2:
        raise ValueError("region needs at least two nodes")
    n = P.shape[1]
    if h is None:
        if n == 1:
            h = float(np.min(np.diff(np.unique(P[:, 0]))))
        else:
            raise ValueError("lattice spacing h is required in 2D")
    span = P.max(0) - P.min(0)
    L = float(np.linalg.norm(span)) if n > 1 else float(span[0])
    bands = bands or _bands(L, h)
    best = {"value": 0.0, "pair": None, "distance": None}
    per_band = []
    if n == 1:
        order = np.argsort(P[:, 0])
        x, w = P[order, 0], v[order]
        i, j = np.triu_indices(len(x), 1)
        dist = x[j] - x[i]
        quot = np.abs(w[j] - w[i]) / dist**alpha
        for lo, hi in bands:
            sel = np.flatnonzero((dist > lo) & (dist <= hi * (1 + 1e-12)))
            if sel.size == 0:
                per_band.append({"lo": lo, "hi": hi, "value": None, "n_pairs": 0})
                continue
            k = sel[np.argmax(quot[sel])]
            per_band.append({"lo": lo, "hi": hi, "value": float(quot[k]), "n_pairs": int(sel.size)})
            if quot[k] > best["value"] or best["pair"] is None:
                best = {"value": float(quot[k]), "pair": (int(order[i[k]]), int(order[j[k]])),
                        "distance": float(dist[k])}
    else:
        rng = np.random.default_rng(seed)
        mi = np.rint(P / h).astype(np.int64)
        base = mi.min(0)
        shape = tuple(mi.max(0) - base + 1)
        look = np.full(shape, -1, dtype=np.int64)
        look[tuple((mi - base).T)] = np.arange(len(P))
        for lo, hi in bands:
            src = rng.integers(0, len(P), n_samples)
            r = rng.uniform(lo, hi, n_samples)
            t = rng.uniform(0, 2 * math.pi, n_samples)
            off = np.rint(np.stack([r * np.cos(t), r * np.sin(t)], -1) / h).astype(np.int64)
            tgt = mi[src] + off - base
            ok = np.all((tgt >= 0) & (tgt < np.asarray(shape)), -1) & np.any(off != 0, -1)
            dst = np.full(n_samples, -1)
            dst[ok] = look[tuple(tgt[ok].T)]
            ok &= dst >= 0
            if not ok.any():
                per_band.append({"lo": lo, "hi": hi, "value": None, "n_pairs": 0})
                continue
            a, b = src[ok], dst[ok]
            dist = np.linalg.norm(P[a] - P[b], axis=-1)
            quot = np.abs(v[a] - v[b]) / dist**alpha
            k = int(np.argmax(quot))
            per_band.append({"lo": lo, "hi": hi, "value": float(quot[k]), "n_pairs": int(ok.sum())})
            if quot[k] > best["value"] or best["pair"] is None:
                best = {"value": float(quot[k]), "pair": (int(a[k]), int(b[k])),
                        "distance": float(dist[k])}
    return {"alpha": alpha, **best, "bands": per_band}


def difference_quotients(points, values, h: float):
    """Central difference quotients along each axis, where both neighbours exist.

    Returns a list of (points, quotients) per axis.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    v = np.asarray(values, dtype=float)
    mi = np.rint(P / h).astype(np.int64)
    base = mi.min(0) - 1
    shape = tuple(mi.max(0) - base + 2)
    look = np.full(shape, -1, dtype=np.int64)
    look[tuple((mi - base).T)] = np.arange(len(P))
    out = []
    for k in range(P.shape[1]):
        e = np.zeros(P.shape[1], dtype=np.int64)
        e[k] = 1
        ip = look[tuple((mi - base + e).T)]
        im = look[tuple((mi - base - e).T)]
        ok = (ip >= 0) & (im >= 0)
        out.append((P[ok], (v[ip[ok]] - v[im[ok]]) / (2 * h)))
    return out


def c1alpha_seminorm(points, values, alpha: float, h: float, **kw) -> float:
    """Largest Hoelder seminorm among the difference-quotient fields."""
    best = 0.0
    for pts, dq in difference_quotients(points, values, h):
        if len(pts) >= 2:
            best = max(best, holder_seminorm(pts, dq, alpha, h, **kw)["value"])
    return best


@dataclass
class RegularityReport:
    V_margin: float
    alphas: tuple
    holder_u: dict
    holder_dq: dict
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"V_margin": self.V_margin, "alphas": list(self.alphas),
                "holder_u": self.holder_u, "holder_dq": self.holder_dq, "history": self.history}


def regularity_report(u: Field, V_margin: float = 0.3, alphas=ALPHA_GRID, refinements=()
                      ) -> RegularityReport:
    """Seminorms of u and of its difference quotients on {d >= V_margin}.

    ``refinements`` are further solutions (e.g. at h/2) whose alpha = 0.5
    values are appended to ``history``.
    """

    def measure(fld, al):
        g = fld.grid
        V = g.distance() >= V_margin
        if V.sum() < 2:
            raise ValueError(f"region d >= {V_margin} has fewer than two nodes")
        P, w = g.points[V], fld.values[V]
        hu = {a: holder_seminorm(P, w, a, g.h)["value"] for a in al}
        hd = {a: c1alpha_seminorm(P, w, a, g.h) for a in al}
        return hu, hd

    hu, hd = measure(u, alphas)
    hist = [{"h": u.grid.h, "u": hu.get(0.5), "dq": hd.get(0.5)}]
    for r in refinements:
        a, b = measure(r, (0.5,))
        hist.append({"h": r.grid.h, "u": a[0.5], "dq": b[0.5]})
    return RegularityReport(V_margin, tuple(alphas), {str(k): v for k, v in hu.items()},
                            {str(k): v for k, v in hd.items()}, hist)


# ------------------------------------------------------------ boundary quotient

@dataclass
class BoundaryReport:
    x0: np.ndarray
    r: float
    s: float
    points: np.ndarray
    q: np.ndarray
    sup: float
    inf: float
    seminorms: dict

    @property
    def ratio(self) -> float:
        return self.sup / self.inf if self.inf > 0 else math.inf

    def to_dict(self) -> dict:
        return {"x0": self.x0.tolist(), "r": self.r, "s": self.s, "n_nodes": int(len(self.q)),
                "sup": self.sup, "inf": self.inf, "ratio": self.ratio,
                "seminorms": self.seminorms}


def boundary_quotient(u: Field, phi, s: float, r: float, alphas=ALPHA_GRID, x0=None
                      ) -> BoundaryReport:
    """q = (u - phi)/d^s on interior nodes within r of the boundary point x0.

    x0 defaults to the last listed boundary point of the domain. The value
    at x0 itself is taken from the nearest node and included in the
    seminorm pairs.
    """
    g = u.grid
    dom = g.domain
    if x0 is None:
        x0 = np.asarray(dom.boundary_points(), dtype=float).reshape(-1, g.dim)[-1]
    x0 = np.asarray(x0, dtype=float).reshape(g.dim)
    P = g.points
    d = g.distance()
    near = (np.linalg.norm(P - x0, axis=-1) < r) & (d > 0)
    if not near.any():
        raise ValueError(f"no nodes within r={r} of the boundary point at h={g.h}")
    phi = phi if phi is not None else ZeroFunction()
    q = (u.values[near] - phi(P[near])) / d[near] ** s
    pts = P[near]
    k = int(np.argmin(np.linalg.norm(pts - x0, axis=-1)))
    ext_pts = np.vstack([pts, x0[None]])
    ext_q = np.append(q, q[k])
    semis = {}
    for a in alphas:
        if len(ext_q) >= 2:
            # x0 sits off the lattice in general; include it only in 1D enumeration
            if g.dim == 1:
                semis[str(a)] = holder_seminorm(ext_pts, ext_q, a, g.h)["value"]
            else:
                semis[str(a)] = holder_seminorm(pts, q, a, g.h)["value"] if len(q) >= 2 else 0.0
    return BoundaryReport(x0, r, s, pts, q, float(q.max()), float(q.min()), semis)


# ---------------------------------------------------------------- complementarity

def complementarity_check(inst, u, tol: float, C_V: float | None = None, V_margin: float = 0.3
                          ) -> dict:
    """Contact-sign checks and the operator sandwich on V = {d >= V_margin}.

    Nodes within ``tol`` of psi^- (psi^+) count as lower (upper) contact.
    There A = -Iu - f must satisfy A >= -tol (A <= tol); elsewhere |A| <= tol.
    When C_V is not given it is measured from I psi^+- on V.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    Iu = inst.apply(u)
    A = -Iu - inst.fvals
    lower = u <= inst.lo + tol
    upper = (u >= inst.hi - tol) & ~lower
    free = ~lower & ~upper
    inside = (u >= inst.lo - tol) & (u <= inst.hi + tol)
    bad_lower = np.flatnonzero(lower & (A < -tol))
    bad_upper = np.flatnonzero(upper & (A > tol))
    bad_free = np.flatnonzero(free & (np.abs(A) > tol))
    V = inst.grid.distance() >= V_margin
    if C_V is None:
        C_V = operator_bound_C(inst, V_margin)
    fsup = float(np.max(np.abs(inst.fvals), initial=0.0))
    bound = fsup + C_V + tol
    bad_V = np.flatnonzero(V & (np.abs(Iu) > bound))
    checks = {
        "sandwich": bool(inside.all()),
        "lower_sign": bad_lower.size == 0,
        "upper_sign": bad_upper.size == 0,
        "free_equation": bad_free.size == 0,
        "operator_bound_on_V": bad_V.size == 0,
    }
    return {
        "passed": all(checks.values()),
        "checks": checks,
        "tol": tol,
        "counts": {"lower": int(lower.sum()), "upper": int(upper.sum()), "free": int(free.sum())},
        "violations": {"sandwich": np.flatnonzero(~inside).tolist()[:50],
                       "lower": bad_lower.tolist()[:50], "upper": bad_upper.tolist()[:50],
                       "free": bad_free.tolist()[:50], "V": bad_V.tolist()[:50]},
        "max_abs_residual": float(np.max(np.abs(np.maximum(np.minimum(A, u - inst.lo),
                                                               u - inst.hi)), initial=0.0)),
        "C_V": C_V,
        "operator_bound": bound,
        "sup_abs_Iu_on_V": float(np.max(np.abs(Iu[V]), initial=0.0)),
        "residual": np.maximum(np.minimum(A, u - inst.lo), u - inst.hi),
        "flags": np.where(lower, "lower", np.where(upper, "upper", "none")),
    }


# ---------------------------------------------------------------- local limit

def classical_obstacle_1d(domain: Interval, f, psi_minus, psi_plus, phi=None, h: float = 1 / 1600,
                          tol: float = 1e-13, max_sweeps: int = 200_000):
    """Double obstacle problem for -u'' = f on an interval by red-black projected SOR.

    Returns the grid (including the two endpoints) and the solution.
    """
    a, b = domain.a, domain.b
    M = int(round((b - a) / h))
    x = a + (b - a) * np.arange(M + 1) / M
    hh = (b - a) / M
    P = x[:, None]
    fv = np.asarray(f(P), dtype=float) * np.ones(M + 1) if callable(f) else np.full(M + 1, float(f))
    lo, hi = psi_minus(P), psi_plus(P)
    u = np.zeros(M + 1)
    phi = phi if phi is not None else ZeroFunction()
    u[0], u[-1] = phi(P[:1])[0], phi(P[-1:])[0]
    u[1:-1] = np.clip(0.0, lo[1:-1], hi[1:-1])
    omega = 2.0 / (1.0 + math.sin(math.pi / M))
    idx = np.arange(1, M)
    colours = (idx[idx % 2 == 0], idx[idx % 2 == 1])
    for _ in range(max_sweeps):
        change = 0.0
        for c in colours:
            gs = 0.5 * (u[c - 1] + u[c + 1] + hh * hh * fv[c])
            new = np.clip(u[c] + omega * (gs - u[c]), lo[c], hi[c])
            change = max(change, float(np.max(np.abs(new - u[c]))))
            u[c] = new
        if change < tol:
            break
    return x, u


def classical_distance_solution(x, f: float):
    """Closed form for -u'' = f (constant) with obstacles +-(1 - |x|) on (-1, 1)."""
    x = np.abs(np.asarray(x, dtype=float))
    sgn = 1.0 if f >= 0 else -1.0
    f = abs(f)
    if f <= 1:
        return sgn * 0.5 * f * (1 - x**2)
    a = 1.0 / f
    return sgn * np.where(x <= a, 1 - 0.5 / f - 0.5 * f * x**2, 1 - x)


def local_limit_error(solutions: dict, f, obstacles, h_oracle: float = 1 / 3200,
                      V_margin: float = 0.3, alpha: float = 0.5, factor: float = 2.0) -> dict:
    """Compare solutions for several s with the classical problem.

    ``solutions`` maps s to a Field (or anything with ``.u``) on an interval.
    """
    ss = sorted(solutions)
    if not ss:
        raise ValueError("no solutions given")
    flds = {s: getattr(solutions[s], "u", solutions[s]) for s in ss}
    dom = flds[ss[0]].grid.domain
    if not isinstance(dom, Interval):
        raise ValueError("the classical oracle is one-dimensional")
    xo, uo = classical_obstacle_1d(dom, f, obstacles.psi_minus, obstacles.psi_plus,
                                   obstacles.phi, h_oracle)
    rows = []
    for s in ss:
        u = flds[s]
        x = u.grid.points[:, 0]
        err = float(np.max(np.abs(u.values - np.interp(x, xo, uo))))
        V = u.grid.distance() >= V_margin
        semi = c1alpha_seminorm(u.grid.points[V], u.values[V], alpha, u.grid.h)
        rows.append({"s": s, "sup_error": err, "dq_seminorm": semi})
    tail = [r["sup_error"] for r in rows if r["s"] >= 0.9]
    ref = rows[0]["dq_seminorm"]
    return {
        "rows": rows,
        "nonincreasing_tail": all(b <= a * (1 + 1e-9) for a, b in zip(tail, tail[1:])),
        "uniform_seminorm": all(r["dq_seminorm"] <= factor * ref * (1 + 1e-12) for r in rows),
        "oracle_h": h_oracle,
    }


# ------------------------------------------------------------ extremal bounds

def boundary_constant(inst, p: EllipticityParams) -> dict:
    """C0 = C_U + sup_U |M+- phi| measured on the instance grid.

    C_U is max(sup_U I psi^+, sup_U -I psi^-, 0) for the obstacles the
    instance carries (e.g. blended ones).
    """
    C_U = operator_bound_C(inst, 0.0)
    g = inst.grid
    phi = inst.phi
    ph = Field(g, phi(g.points), phi)
    Mp = apply_pucci(ph, p, +1, tol_tail=math.inf).values
    Mm = apply_pucci(ph, p, -1, tol_tail=math.inf).values
    Mphi = float(max(np.max(np.abs(Mp), initial=0.0), np.max(np.abs(Mm), initial=0.0)))
    return {"C_U": C_U, "sup_M_phi": Mphi, "C0": C_U + Mphi}


def pucci_star_bound_check(inst, u, p: EllipticityParams, collar: float, C0: float | None = None,
                           sectors: int = 16, tol: float = 1e-8) -> dict:
    """M*+ v >= -|f|_inf - C0 and M*- v <= |f|_inf + C0 for v = u - phi on {0 < d < collar}."""
    u = np.asarray(getattr(u, "values", u), dtype=float)
    g = inst.grid
    phi = inst.phi
    v = Field(g, u - phi(g.points), ZeroFunction())
    if C0 is None:
        C0 = boundary_constant(inst, p)["C0"]
    fsup = float(np.max(np.abs(inst.fvals), initial=0.0))
    mask = g.distance() < collar
    Mp = apply_pucci_star(v, p, +1, sectors, tol_tail=math.inf).values[mask]
    Mm = apply_pucci_star(v, p, -1, sectors, tol_tail=math.inf).values[mask]
    lo_ok = bool(np.all(Mp >= -fsup - C0 - tol))
    hi_ok = bool(np.all(Mm <= fsup + C0 + tol))
    return {
        "passed": lo_ok and hi_ok,
        "collar": collar,
        "n_nodes": int(mask.sum()),
        "C0": C0,
        "f_sup": fsup,
        "min_M_star_plus": float(Mp.min()) if Mp.size else None,
        "max_M_star_minus": float(Mm.max()) if Mm.size else None,
        "lower_ok": lo_ok,
        "upper_ok": hi_ok,
    }


# ------------------------------------------------------------ closed forms

def getoor_profile(domain, s: float, f: float = 1.0):
    """Solution of (-Delta)^s u = f in a ball (interval or disk), u = 0 outside.

    u(x) = f * Gamma(n/2) / (4^s Gamma(1+s) Gamma(n/2+s)) * (R^2 - |x - c|^2)_+^s.
    """
    from scipy.special import gamma

    n = domain.dim
    if isinstance(domain, Interval):
        c, R = np.array([0.5 * (domain.a + domain.b)]), 0.5 * (domain.b - domain.a)
    else:
        c, R = np.asarray(domain.center, dtype=float), domain.radius
    k = gamma(0.5 * n) / (4.0**s * gamma(1 + s) * gamma(0.5 * n + s))

    def u(p):
        p = np.asarray(p, dtype=float).reshape(-1, n)
        r2 = np.sum((p - c) ** 2, axis=-1)
        return f * k * np.maximum(R * R - r2, 0.0) ** s

    return u
