"""Quadrature stencils for integrals of second differences.

Every operator in this package is a reduction over *samples*. Sample q
belongs to an interior node i, carries an offset y_q and a positive weight
kappa_q, and approximates the second difference

    delta_q = u(x_i + y_q) + u(x_i - y_q) - 2 u(x_i)

as an affine function of the interior unknowns: delta = S @ u + e, where
``e`` collects exterior data. A linear operator with kernel
m(y)|y|^{-n-2s} is then sum_q m(y_q) kappa_q delta_q. Two builders exist:

``lattice``
    Classical lattice sum. Offsets are lattice vectors, each weighted by
    the integral of |y|^{-n-2s} over its cell, with a second-order
    correction for the cell at the origin. Translation equivariant.
``fitted`` (1D only)
    Writes u - g = omega * w with omega = rho(d)^s, interpolates the
    smooth factor w and integrates omega and the kernel exactly up to
    quadrature error. Breakpoints are inserted where x +- y crosses the
    boundary and graded Gauss rules resolve the d^s endpoint behaviour,
    so solutions that vanish like d^s at the boundary are integrated
    at full order.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

from ..geometry import Grid, Interval, smoothed_distance
from ..kernel import sector_index
from ..obstacles import is_zero

N_TAIL = 8
N_FAR = 2
N_JACOBI = 6
N_GRADED = 6


@dataclass(eq=False)
class Stencil:
    grid: Grid
    s: float
    mode: str
    R: float
    row: np.ndarray
    rowptr: np.ndarray
    kappa: np.ndarray
    y: np.ndarray
    S: sp.csr_matrix = field(repr=False)
    selfc: np.ndarray = field(repr=False)
    pp: np.ndarray | None = field(repr=False)  # x + y and x - y; None when computed on demand
    pm: np.ndarray | None = field(repr=False)
    tail: np.ndarray = field(repr=False)  # True for samples beyond the lattice radius
    plus_node: np.ndarray | None = field(default=None, repr=False)
    minus_node: np.ndarray | None = field(default=None, repr=False)
    plus_ext: np.ndarray | None = field(default=None, repr=False)
    minus_ext: np.ndarray | None = field(default=None, repr=False)
    _agg: sp.csr_matrix | None = field(default=None, repr=False)
    _sectors: dict = field(default_factory=dict, repr=False)

    @property
    def n_samples(self) -> int:
        return len(self.kappa)

    @property
    def N(self) -> int:
        return self.grid.n_interior

    def sectors(self, m: int) -> np.ndarray:
        if m not in self._sectors:
            self._sectors[m] = sector_index(self.y, m)
        return self._sectors[m]

    def aggregate(self, a) -> np.ndarray:
        """Per-node sums of per-sample values."""
        return np.bincount(self.row, weights=a, minlength=self.N)

    def weighted_rows(self, a) -> sp.csr_matrix:
        """Sparse N x Q matrix with a_q at (row_q, q)."""
        Q = self.n_samples
        return sp.csr_matrix((a, (self.row, np.arange(Q))), shape=(self.N, Q))

    def jacobian(self, a) -> np.ndarray:
        """Dense d/du of sum_q a_q delta_q, node by node."""
        return (self.weighted_rows(a) @ self.S).toarray()

    def exterior_offset(self, g, halo=None, truncate=False) -> np.ndarray:
        """The affine part e of delta = S u + e for exterior data ``g``.

        ``g`` maps points (k, n) to values. In lattice mode ``halo`` may
        give values at stored exterior nodes (flat box index -> value);
        when ``truncate`` is set the samples beyond the lattice radius see
        zero instead of g.
        """
        if self.mode == "fitted":
            x = self.grid.points
            gx = _call(g, x)
            e = _call(g, self.pp) + _call(g, self.pm) - 2 * gx[self.row]
            e -= self.S @ gx
            if truncate:
                e[self.tail] = 0.0
            return e
        e = np.zeros(self.n_samples)
        x = self.grid.points
        for sgn, node, ext in ((1.0, self.plus_node, self.plus_ext),
                               (-1.0, self.minus_node, self.minus_ext)):
            on = ext & (node >= 0)
            off = np.flatnonzero(ext & (node < 0))
            if halo is not None:
                e[on] += halo[node[on]]
            else:
                e[on] += _call(g, self.grid.coords[node[on]])
            if not truncate and off.size:
                e[off] += _call(g, x[self.row[off]] + sgn * self.y[off])
        return e


def _call(g, pts):
    if g is None or is_zero(g):
        return np.zeros(len(pts))
    v = np.asarray(g(pts), dtype=float)
    return np.broadcast_to(v, (len(pts),)).copy() if v.ndim == 0 else v


_CACHE: "weakref.WeakKeyDictionary[Grid, dict]" = weakref.WeakKeyDictionary()


def get_stencil(grid: Grid, s: float, mode: str = "auto", R: float | None = None) -> Stencil:
    """Build (or fetch the cached) stencil of a grid for order s."""
    if mode == "auto":
        mode = "fitted" if grid.dim == 1 else "lattice"
    key = (float(s), mode, R)
    cache = _CACHE.setdefault(grid, {})
    if key not in cache:
        if mode == "fitted":
            cache[key] = build_fitted_1d(grid, s, R)
        elif mode == "lattice":
            cache[key] = build_lattice(grid, s, R)
        else:
            raise ValueError(f"unknown stencil mode {mode!r}")
    return cache[key]


def _tail_rule(s, R, n_pts=N_TAIL):
    """Points and weights with sum_g w_g F(y_g) ~ 2 int_R^inf F(y) y^{-1-2s} dy."""
    t, w = leggauss(n_pts)
    tau = 0.5 * (t + 1)
    y = R * tau ** (-1.0 / (2 * s))
    return y, 2 * R ** (-2 * s) / (2 * s) * 0.5 * w


def _finish(grid, s, mode, R, rows, ys, kap, ent_q, ent_c, ent_v, tail, **extra):
    on_self = ent_c == rows[ent_q]
    selfc = np.bincount(ent_q[on_self], weights=ent_v[on_self], minlength=len(rows))
    order = np.argsort(rows, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    rows = rows[order]
    ys = ys[order]
    kap = kap[order]
    tail = tail[order]
    selfc = selfc[order]
    N = grid.n_interior
    Q = len(rows)
    S = sp.csr_matrix((ent_v, (inv[ent_q], ent_c)), shape=(Q, N))
    S.sum_duplicates()
    x = grid.points
    pp = x[rows] + ys
    pm = x[rows] - ys
    extra = {k: v[order] for k, v in extra.items()}
    rowptr = np.searchsorted(rows, np.arange(N + 1))
    return Stencil(
        grid=grid, s=s, mode=mode, R=R, row=rows, rowptr=rowptr, kappa=kap, y=ys,
        S=S, selfc=selfc, pp=pp, pm=pm, tail=tail, **extra,
    )


# --------------------------------------------------------------------- lattice

def _cell_weights_1d(s, h, k):
    lo = (k - 0.5) * h
    hi = (k + 0.5) * h
    return 2 * (lo ** (-2 * s) - hi ** (-2 * s)) / (2 * s)


def _cell_weights_2d(s, h, offs):
    t, w = leggauss(4)
    t = 0.5 * h * t
    w = 0.5 * h * w
    out = np.zeros(len(offs))
    for a, wa in zip(t, w):
        for b, wb in zip(t, w):
            r = np.hypot(offs[:, 0] + a, offs[:, 1] + b)
            out += wa * wb * r ** (-2 - 2 * s)
    return 2 * out


def _center_moment_2d(s, h):
    """int over the cell [-h/2, h/2]^2 of y_1^2 |y|^{-2-2s}."""
    t, w = leggauss(24)
    th = 0.25 * math.pi * (t + 1) / 2  # one octant, 0..pi/4
    wt = 0.25 * math.pi * w / 2
    rho = (0.5 * h) / np.cos(th)
    radial = rho ** (2 - 2 * s) / (2 - 2 * s)
    # by symmetry the y_1^2 moment is half the |y|^2 moment; eight octants
    return float(0.5 * 8 * np.sum(wt * radial))


def build_lattice(grid: Grid, s: float, R: float | None = None) -> Stencil:
    """Lattice-sum stencil on the half lattice of offsets within R."""
    h = grid.h
    n = grid.dim
    R = grid.R_cut if R is None else min(R, grid.R_cut)
    M = int(math.floor(R / h + 1e-9))
    if n == 1:
        k = np.arange(1, M + 1)
        offs = k[:, None].astype(np.int64)
        kap = _cell_weights_1d(s, h, k.astype(float))
        kap[0] += 2 * (0.5 * h) ** (2 - 2 * s) / (2 - 2 * s) / h**2
        R_eff = (M + 0.5) * h
        dirs = np.array([[1.0]])
        dir_w = np.array([1.0])
    else:
        rng = np.arange(-M, M + 1)
        I, J = np.meshgrid(rng, rng, indexing="ij")
        offs = np.stack([I.ravel(), J.ravel()], -1)
        # half lattice: first nonzero coordinate positive
        half = (offs[:, 0] > 0) | ((offs[:, 0] == 0) & (offs[:, 1] > 0))
        offs = offs[half]
        offs = offs[np.hypot(offs[:, 0], offs[:, 1]) * h <= R + 1e-12]
        kap = _cell_weights_2d(s, h, offs * h)
        Qc = _center_moment_2d(s, h) / h**2
        kap[(offs[:, 0] == 1) & (offs[:, 1] == 0)] += Qc
        kap[(offs[:, 0] == 0) & (offs[:, 1] == 1)] += Qc
        R_eff = M * h
        if R_eff < grid.domain.diam * (1 - 1e-12):
            raise ValueError("lattice radius below diam(U); refine h or enlarge R_cut")
        m_t = 64
        th = (np.arange(m_t) + 0.5) * math.pi / m_t
        dirs = np.stack([np.cos(th), np.sin(th)], -1)
        dir_w = np.full(m_t, math.pi / m_t)

    yt, wt = _tail_rule(s, R_eff)
    if n == 1:
        yt_vec = yt[:, None]
        kt = wt
    else:
        yt_vec = (dirs[:, None, :] * yt[None, :, None]).reshape(-1, 2)
        # the radial rule already doubles for +-y; directions cover a half turn
        kt = (dir_w[:, None] * wt[None, :]).ravel()
    return _assemble_lattice(grid, s, R_eff, offs, kap, yt_vec, kt)


def _assemble_lattice(grid, s, R_eff, offs, kap, yt_vec, kt, chunk_samples=1 << 21):
    """Samples are laid out node by node: K lattice offsets, then T tail points.

    S is written directly in CSR form, a block of nodes at a time, so the
    peak memory stays close to the size of the finished stencil.
    """
    h = grid.h
    N = grid.n_interior
    K, T = len(offs), len(kt)
    per = K + T
    Q = N * per
    base = grid.interior_lattice_index()
    lo = np.asarray(grid.lo)
    shape = np.asarray(grid.shape)
    lookup = grid.lookup.ravel()
    row = np.repeat(np.arange(N, dtype=np.int32), per)
    kappa = np.tile(np.concatenate([kap, kt]), N)
    y = np.tile(np.vstack([offs * h, yt_vec]), (N, 1))
    tail = np.tile(np.concatenate([np.zeros(K, bool), np.ones(T, bool)]), N)
    nodes = {+1: np.full(Q, -1, np.int32), -1: np.full(Q, -1, np.int32)}
    ext = {+1: np.ones(Q, bool), -1: np.ones(Q, bool)}
    nnz = np.ones(Q, np.int64)
    parts_c, parts_v = [], []
    step = max(1, chunk_samples // per)
    for a in range(0, N, step):
        b = min(N, a + step)
        nb = b - a
        lat = (np.arange(nb)[:, None] * per + np.arange(K)[None, :]).ravel() + a * per
        partner = {}
        for sgn in (+1, -1):
            mi = (base[a:b, None, :] + sgn * offs[None, :, :]).reshape(-1, grid.dim) - lo
            inbox = np.all((mi >= 0) & (mi < shape), axis=-1)
            flat = np.full(len(mi), -1, np.int64)
            flat[inbox] = np.ravel_multi_index(tuple(mi[inbox].T), grid.shape)
            interior = np.full(len(mi), -1, np.int64)
            interior[inbox] = lookup[flat[inbox]]
            nodes[sgn][lat] = flat
            ext[sgn][lat] = interior < 0
            nnz[lat] += interior >= 0
            partner[sgn] = interior.reshape(nb, K)
        # columns per sample in order: self, plus partner, minus partner
        cols = np.full((nb, per, 3), -1, np.int64)
        cols[:, :, 0] = np.arange(a, b)[:, None]
        cols[:, :K, 1] = partner[+1]
        cols[:, :K, 2] = partner[-1]
        vals = np.empty((nb, per, 3))
        vals[:, :, 0] = -2.0
        vals[:, :, 1:] = 1.0
        keep = cols >= 0
        parts_c.append(cols[keep].astype(np.int32))
        parts_v.append(vals[keep])
    indptr = np.concatenate([[0], np.cumsum(nnz)])
    S = sp.csr_matrix((np.concatenate(parts_v), np.concatenate(parts_c), indptr), shape=(Q, N))
    del parts_c, parts_v
    S.sort_indices()
    rowptr = np.arange(N + 1, dtype=np.int64) * per
    return Stencil(
        grid=grid, s=s, mode="lattice", R=R_eff, row=row, rowptr=rowptr, kappa=kappa, y=y,
        S=S, selfc=np.broadcast_to(-2.0, (Q,)), pp=None, pm=None, tail=tail,
        plus_node=nodes[+1], minus_node=nodes[-1], plus_ext=ext[+1], minus_ext=ext[-1],
    )




# ---------------------------------------------------------------------- fitted

def _unit_gauss(n_pts):
    t, w = leggauss(n_pts)
    return 0.5 * (t + 1), 0.5 * w


_FAR_RULES = [(0, 4, _unit_gauss(8)), (4, 16, _unit_gauss(4)), (16, math.inf, _unit_gauss(N_FAR))]

def _graded(y0, y1, s, n_pts=N_GRADED):
    """Rule on [y0, y1] clustered at y1, where the integrand behaves like (y1-y)^s."""
    p = max(2, math.ceil(2.0 / s))
    t, w = leggauss(n_pts)
    tau = 0.5 * (t + 1)
    L = y1 - y0
    y = y1 - L * tau**p
    wy = 0.5 * w * L * p * tau ** (p - 1)
    return y, wy


def build_fitted_1d(grid: Grid, s: float, R: float | None = None) -> Stencil:
    """Boundary-fitted 1D stencil; see the module docstring."""
    dom = grid.domain
    if not isinstance(dom, Interval):
        raise ValueError("the fitted stencil is one-dimensional")
    h = grid.h
    R = grid.R_cut if R is None else min(R, grid.R_cut)
    M = int(math.floor(R / h + 1e-9))
    R = M * h
    if R < dom.diam * (1 - 1e-12):
        raise ValueError("the fitted stencil needs a quadrature radius of at least diam(U)")
    a, b = dom.a, dom.b
    x = grid.points[:, 0]
    N = len(x)
    jglob = grid.interior_lattice_index()[:, 0]
    j0 = jglob[0]

    def omega(z):
        return smoothed_distance(dom, np.asarray(z)[..., None]) ** s

    om = omega(x)

    def interior_no(jg):
        k = jg - j0
        return np.where((k >= 0) & (k < N), k, -1)

    jx, jw = roots_jacobi(N_JACOBI, 0.0, 1.0 - 2 * s)
    yt, wt = _tail_rule(s, R)
    tol = 1e-9 * h

    rows_all, ys_all, kap_all, tail_all = [], [], [], []
    eq, ec, ev = [], [], []
    qbase = 0

    def interp(z, i):
        """omega(z) and (node, coef) pairs so that v(z) = sum coef * v_node."""
        jz = np.floor(z / h + 1e-12).astype(np.int64)
        t = z / h - jz
        ia = interior_no(jz)
        ib = interior_no(jz + 1)
        oz = omega(z)
        ca = oz * (1 - t)
        cb = oz * t
        # a boundary cell: the missing endpoint borrows the other one's w
        ca_f = np.where(ib < 0, ca + cb, ca)
        cb_f = np.where(ia < 0, ca + cb, cb)
        ca_v = np.where(ia >= 0, ca_f / om[np.maximum(ia, 0)], 0.0)
        cb_v = np.where(ib >= 0, cb_f / om[np.maximum(ib, 0)], 0.0)
        return ia, ca_v, ib, cb_v

    for i in range(N):
        xi = x[i]
        ya, yb = xi - a, b - xi
        specials = np.array([v for v in (ya, yb) if v < R - tol])
        edges = np.concatenate([[0.0], h * np.arange(1, M + 1), specials])
        edges = np.unique(np.round(edges / tol) * tol)
        left, right = edges[:-1], edges[1:]
        sing_r = np.zeros(len(right), bool)
        for v in specials:
            sing_r |= np.abs(right - v) < 10 * tol
        # the first interval carries the kernel singularity; if it also ends at a
        # boundary crossing, split it so each end gets its own rule
        if sing_r[0]:
            mid = 0.5 * right[0]
            left = np.concatenate([[0.0, mid], left[1:]])
            right = np.concatenate([[mid, right[0]], right[1:]])
            sing_r = np.concatenate([[False, True], sing_r[1:]])
        ys, ks = [], []
        # kernel-singular first interval: Gauss-Jacobi with weight y^{1-2s}
        L = right[0]
        yj = 0.5 * L * (jx + 1)
        ys.append(yj)
        ks.append(2 * (0.5 * L) ** (2 - 2 * s) * jw / yj**2)
        rest = np.arange(1, len(left))
        reg = rest[~sing_r[rest]]
        # y^{-1-2s} varies fastest on the first cells, so they get more points
        for lo_k, hi_k, (tx, tw) in _FAR_RULES:
            sel = reg[(left[reg] >= lo_k * h - tol) & (left[reg] < hi_k * h - tol)]
            if len(sel):
                lr = left[sel][:, None]
                wr = (right[sel] - left[sel])[:, None]
                yr = (lr + wr * tx[None, :]).ravel()
                ys.append(yr)
                ks.append(2 * (wr * tw[None, :]).ravel() * yr ** (-1 - 2 * s))
        for k in rest[sing_r[rest]]:
            yg, wg = _graded(left[k], right[k], s)
            ys.append(yg)
            ks.append(2 * wg * yg ** (-1 - 2 * s))
        ys = np.concatenate(ys)
        ks = np.concatenate(ks)
        near = ys < h - tol
        far = ~near
        nq = len(ys)
        q = qbase + np.arange(nq)
        # self coefficient of every sample
        eq.append(q)
        ec.append(np.full(nq, i))
        ev.append(np.full(nq, -2.0))
        # far samples: linear interpolation of w on both sides
        qf = q[far]
        for sgn in (1.0, -1.0):
            ia, ca, ib, cb = interp(xi + sgn * ys[far], i)
            for idx, cf in ((ia, ca), (ib, cb)):
                m = (idx >= 0) & (cf != 0)
                eq.append(qf[m])
                ec.append(idx[m])
                ev.append(cf[m])
        # near samples: quadratic model of w around x_i
        yn = ys[near]
        qn = q[near]
        if len(yn):
            op = omega(xi + yn)
            omn = omega(xi - yn)
            ip, im = interior_no(jglob[i] + 1), interior_no(jglob[i] - 1)
            D = op - omn
            c_self = (op + omn) / om[i]  # from w_i * (omega(+) + omega(-)); the -2 is above
            w2 = 0.5 * (op + omn) * yn**2 / h**2
            c_p = w2 + np.where(D >= 0, D * yn / h, 0.0)
            c_m = w2 + np.where(D < 0, -D * yn / h, 0.0)
            c_self = c_self - (c_p + c_m) / om[i]
            coef = {i: c_self}
            for nb, cf in ((ip, c_p), (im, c_m)):
                if nb >= 0:
                    coef[int(nb)] = coef.get(int(nb), 0.0) + cf / om[nb]
                else:
                    coef[i] = coef[i] + cf / om[i]
            for col, cf in coef.items():
                eq.append(qn)
                ec.append(np.full(len(qn), col))
                ev.append(cf)
        rows_all.append(np.full(nq, i))
        ys_all.append(ys)
        kap_all.append(ks)
        tail_all.append(np.zeros(nq, bool))
        qbase += nq
        # tail: x +- y is outside U, only the -2 v(x) term survives
        nt = len(yt)
        qt = qbase + np.arange(nt)
        eq.append(qt)
        ec.append(np.full(nt, i))
        ev.append(np.full(nt, -2.0))
        rows_all.append(np.full(nt, i))
        ys_all.append(yt)
        kap_all.append(wt)
        tail_all.append(np.ones(nt, bool))
        qbase += nt

    rows = np.concatenate(rows_all)
    ys = np.concatenate(ys_all)[:, None]
    kap = np.concatenate(kap_all)
    tail = np.concatenate(tail_all)
    return _finish(
        grid, s, "fitted", R, rows, ys, kap,
        np.concatenate(eq), np.concatenate(ec), np.concatenate(ev), tail,
    )
