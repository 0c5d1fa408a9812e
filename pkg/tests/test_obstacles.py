import numpy as np
import pytest

from nlobstacle import Disk, Interval, blend, build_grid, make_preset, mollify, mollify_set
from nlobstacle.obstacles import (ObstacleSet, ZeroFunction, collar_profile, verify_assumption1,
                                  verify_mollified)

I1 = Interval(-1, 1)


@pytest.fixture(scope="module")
def grid():
    return build_grid(I1, 1 / 200, 2.0)


def test_distance_preset_values():
    o = make_preset("distance", I1)
    x = np.array([[0.0], [0.5], [1.5]])
    assert np.allclose(o.psi_plus(x), [1, 0.5, 0])
    assert np.allclose(o.psi_minus(x), [-1, -0.5, 0])
    assert np.all(o.phi(x) == 0) and o.C1 == 1.0
    # x = 0.5, y = 0.25: both x +- y lie on the same linear piece of d
    d = o.psi_plus(np.array([[0.75], [0.25], [0.5]]))
    assert d[0] + d[1] - 2 * d[2] == pytest.approx(0.0, abs=1e-15)
    d = o.psi_plus(np.array([[0.25], [-0.25], [0.0]]))
    assert d[0] + d[1] - 2 * d[2] == pytest.approx(-0.5)


def test_unknown_preset():
    with pytest.raises(ValueError):
        make_preset("wavy", I1)


@pytest.mark.parametrize("dom", [I1, Disk((0.0, 0.0), 1.0)])
def test_assumption_checks_distance(dom):
    g = build_grid(dom, 1 / 40 if dom.dim == 2 else 1 / 200, 2.0)
    rep = verify_assumption1(make_preset("distance", dom), g, margins=(0.1, 0.2))
    assert rep["passed"]
    assert rep["lipschitz"]["measured"] <= 1 + 1e-9
    assert rep["semiconcavity"]["margins"]["0.2"]["measured"] <= 1e-10


def test_semiconcavity_stable_under_refinement():
    o = make_preset("smoothed_distance", I1, width=0.3)
    vals = [verify_assumption1(o, build_grid(I1, h, 2.0), margins=(0.2,))["semiconcavity"]
            ["margins"]["0.2"]["measured"] for h in (1 / 100, 1 / 200)]
    assert all(np.isfinite(vals))
    assert abs(vals[0] - vals[1]) <= 0.05 * max(abs(vals[1]), 1e-12) + 1e-9


def test_constant_preset_is_not_lipschitz(grid):
    o = make_preset("constant", I1, bound=1.0)
    rep = verify_assumption1(o, grid)
    assert rep["lipschitz"]["measured"] > 10


def test_collar_profile_shape():
    w = 0.1
    t = np.linspace(-0.2, 0.5, 2001)
    g = collar_profile(t, w)
    assert np.all(g[t <= 0] == 0)
    assert np.allclose(g[t >= w], t[t >= w] - w / 2)
    slope = np.diff(g) / np.diff(t)
    assert slope.min() >= -1e-12 and slope.max() <= 1 + 1e-9


def test_mollify_reproduces_constants_and_affine(grid):
    vals, fn = mollify(lambda p: np.full(len(p), 3.5), 0.05, grid)
    assert np.allclose(vals, 3.5, atol=1e-14)
    vals, fn = mollify(lambda p: 2 * p[:, 0] - 1, 0.05, grid)
    assert np.allclose(vals, 2 * grid.coords[:, 0] - 1, atol=1e-13)


def test_mollify_radius_guard(grid):
    with pytest.raises(ValueError):
        mollify(lambda p: p[:, 0], 2 * grid.h, grid)


def test_mollify_monotone(grid):
    a = lambda p: np.abs(p[:, 0])  # noqa: E731
    b = lambda p: np.abs(p[:, 0]) + 0.1 * np.cos(p[:, 0]) ** 2  # noqa: E731
    va, _ = mollify(a, 0.05, grid)
    vb, _ = mollify(b, 0.05, grid)
    assert np.all(va <= vb)


def test_mollified_distance_checks(grid):
    o = make_preset("distance", I1)
    m = mollify_set(o, 0.05, grid)
    rep = verify_mollified(m, o, grid)
    assert rep["passed"], rep
    assert rep["closeness"]["sup"] <= 0.05


def test_mollification_gap_linear_in_eps(grid):
    o = make_preset("distance", I1)
    sups = [verify_mollified(mollify_set(o, e, grid), o, grid)["closeness"]["sup"]
            for e in (0.08, 0.04, 0.02)]
    assert all(s <= e for s, e in zip(sups, (0.08, 0.04, 0.02)))
    assert sups[0] > sups[1] > sups[2]


def test_mollified_constant_obstacles_on_large_domain():
    dom = Interval(-20, 20)
    g = build_grid(dom, 0.25)
    o = ObstacleSet(dom, lambda p: np.ones(len(p)), lambda p: -np.ones(len(p)), ZeroFunction(),
                    0.0, lambda e: 0.0)
    m = mollify_set(o, 0.75, g)
    mid = np.abs(g.coords[:, 0]) < 10
    assert np.allclose(m.psi_plus(g.coords[mid]), 1.0)
    assert np.allclose(m.psi_minus(g.coords[mid]), -1.0)


def test_mollified_order(grid):
    o = make_preset("smoothed_distance", I1, width=0.1)
    for e in (0.08, 0.04, 0.02):
        m = mollify_set(o, e, grid)
        X = grid.coords
        assert np.all(m.psi_minus(X) <= m.psi_plus(X))


def test_blend_identities_and_floor(grid):
    o = make_preset("smoothed_distance", I1, width=0.1)
    m = mollify_set(o, 0.02, grid)
    b = blend(o, m, (0.3, 0.2, 0.1), grid)
    assert b.c > 0 and b.report["gap_floor_ok"] and b.report["strict_gap_in_U"]
    P = grid.points
    d = I1.signed_distance(P)
    z = b.zeta(P)
    assert np.all((z >= 0) & (z <= 1))
    w1 = d < 0.2
    assert np.allclose(z[w1], 1) and np.allclose(b.psi_plus(P[w1]), o.psi_plus(P[w1]))
    far = d >= 0.3
    assert np.allclose(b.psi_plus(P[far]), m.psi_plus(P[far]))
    for f, fe, fh in ((o.psi_plus, m.psi_plus, b.psi_plus), (o.psi_minus, m.psi_minus, b.psi_minus)):
        a, c, v = f(P), fe(P), fh(P)
        assert np.all(v >= np.minimum(a, c) - 1e-14) and np.all(v <= np.maximum(a, c) + 1e-14)
        assert np.max(np.abs(v - a)) <= o.C1 * 0.02


def test_blend_rejects_bad_collars(grid):
    o = make_preset("distance", I1)
    m = mollify_set(o, 0.02, grid)
    with pytest.raises(ValueError):
        blend(o, m, (0.1, 0.2, 0.05), grid)
