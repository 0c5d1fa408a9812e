"""Domains, lattices with an exterior halo, and distance functions.

Two domain presets are supported: an interval in 1D and a disk in 2D.
Both have closed-form signed distance (positive inside), so nothing
downstream has to approximate the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"empty interval ({self.a}, {self.b})")

    @property
    def dim(self) -> int:
        return 1

    @property
    def diam(self) -> float:
        return self.b - self.a

    @property
    def inradius(self) -> float:
        return 0.5 * (self.b - self.a)

    def bbox(self):
        return np.array([self.a]), np.array([self.b])

    def signed_distance(self, x):
        x = _as_points(x, 1)[..., 0]
        return np.minimum(x - self.a, self.b - x)

    def boundary_points(self):
        return np.array([[self.a], [self.b]])


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 2:
            raise ValueError("disk center must have two coordinates")
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    @property
    def dim(self) -> int:
        return 2

    @property
    def diam(self) -> float:
        return 2.0 * self.radius

    @property
    def inradius(self) -> float:
        return self.radius

    def bbox(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def signed_distance(self, x):
        x = _as_points(x, 2)
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return self.radius - r

    def boundary_points(self, m: int = 8):
        t = 2 * np.pi * np.arange(m) / m
        return np.asarray(self.center) + self.radius * np.stack([np.cos(t), np.sin(t)], -1)


Domain = Interval | Disk


def _as_points(x, n):
    x = np.asarray(x, dtype=float)
    if n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != n:
        raise ValueError(f"expected points with {n} coordinates, got shape {x.shape}")
    return x


def distance(domain: Domain, x):
    """Signed distance to the boundary: positive in U, negative outside.

    Scalars in, scalars out; arrays of points (shape ``(..., n)``) give
    arrays of shape ``(...)``.
    """
    d = domain.signed_distance(x)
    return float(d) if np.ndim(d) == 0 else d


def dilate(domain: Domain, eps: float) -> Domain:
    """U_eps = {x : dist(x, closure U) < eps}, which is again a preset shape."""
    if eps < 0:
        raise ValueError(f"dilation radius must be nonnegative, got {eps}")
    if eps == 0:
        return domain
    if isinstance(domain, Interval):
        return Interval(domain.a - eps, domain.b + eps)
    return Disk(domain.center, domain.radius + eps)


def smoothed_distance(domain: Domain, x):
    """Distance to the boundary, flattened at the medial axis.

    rho(d) = d - d^3 / (3 d_max^2) agrees with d to second order at the
    boundary and has zero slope at d = d_max, so rho is C^2 across the
    medial axis of both presets (d itself has a kink there). Zero outside U.
    """
    d = np.asarray(domain.signed_distance(x))
    dm = domain.inradius
    d = np.clip(d, 0.0, dm)
    return d - d**3 / (3 * dm * dm)


@dataclass(eq=False)
class Grid:
    """Uniform lattice h*Z^n restricted to a box around U plus a halo.

    Node arrays are flattened in C order over the box. ``interior`` lists
    the flat indices of nodes inside U, in the same (lexicographic) order
    that every solver uses for its unknowns.
    """

    domain: Domain
    h: float
    R_cut: float
    lo: np.ndarray  # integer lattice index of the box corner
    shape: tuple
    coords: np.ndarray = field(repr=False)
    is_interior: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)
    lookup: np.ndarray = field(repr=False)  # box-shaped, interior number or -1

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def points(self) -> np.ndarray:
        """Coordinates of interior nodes, shape (N, n)."""
        return self.coords[self.interior]

    @property
    def exterior(self) -> np.ndarray:
        return np.flatnonzero(~self.is_interior)

    def lattice_index(self, flat):
        return np.stack(np.unravel_index(flat, self.shape), -1) + self.lo

    def interior_lattice_index(self):
        return self.lattice_index(self.interior)

    def distance(self, which="interior"):
        pts = self.points if which == "interior" else self.coords
        return self.domain.signed_distance(pts)

    def find(self, multi_index):
        """Interior number of lattice multi-indices, -1 where exterior or off-box."""
        mi = np.asarray(multi_index) - self.lo
        ok = np.all((mi >= 0) & (mi < np.asarray(self.shape)), axis=-1)
        out = np.full(mi.shape[:-1], -1, dtype=np.int64)
        if np.any(ok):
            out[ok] = self.lookup[tuple(mi[ok].T)]
        return out


def build_grid(domain: Domain, h: float, R_cut: float | None = None) -> Grid:
    """Lattice covering U and every point within R_cut of U.

    R_cut defaults to diam(U) and may not be smaller: the lattice part of
    the operator quadrature must reach across the whole domain.
    """
    if not h > 0:
        raise GridError(f"grid spacing must be positive, got {h}")
    if R_cut is None:
        R_cut = domain.diam
    if R_cut < domain.diam * (1 - 1e-12):
        raise GridError(
            f"R_cut={R_cut} is smaller than diam(U)={domain.diam}; the halo would not "
            "cover the quadrature radius"
        )
    blo, bhi = domain.bbox()
    lo = np.floor((blo - R_cut) / h + 1e-9).astype(np.int64)
    hi = np.ceil((bhi + R_cut) / h - 1e-9).astype(np.int64)
    shape = tuple(int(k) for k in hi - lo + 1)
    axes = [h * np.arange(lo[k], hi[k] + 1) for k in range(domain.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], -1)
    d = domain.signed_distance(coords)
    is_interior = d > 0
    interior = np.flatnonzero(is_interior)
    lookup = np.full(math.prod(shape), -1, dtype=np.int64)
    lookup[interior] = np.arange(len(interior))
    return Grid(
        domain=domain,
        h=float(h),
        R_cut=float(R_cut),
        lo=lo,
        shape=shape,
        coords=coords,
        is_interior=is_interior,
        interior=interior,
        lookup=lookup.reshape(shape),
    )
