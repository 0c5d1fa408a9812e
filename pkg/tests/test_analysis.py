import math

import numpy as np
import pytest

from nlobstacle import (Field, Interval, ProblemInstance, SolveConfig, build_grid,
                        continuation_delta, frac_kernel, frac_params, linear, make_preset,
                        solve_direct)
from nlobstacle import analysis as an
from nlobstacle.obstacles import ObstacleSet, ZeroFunction

DOM = Interval(-1, 1)


def flat(c=1.0):
    return ObstacleSet(DOM, lambda p: np.full(len(p), c), lambda p: np.full(len(p), -c),
                       ZeroFunction(), 0.0, lambda e: 0.0)


def test_decay_inactive_and_too_short():
    g = build_grid(DOM, 1 / 40, 2.0)
    inst = ProblemInstance(g, linear(frac_kernel(1, 0.5)), 0.0, flat())
    tr = continuation_delta(inst, SolveConfig(delta_schedule=[0.1, 0.05, 0.025])).trace
    rep = an.penal_decay(tr)
    assert rep.status == "inactive" and rep.slope is None and rep.passed
    assert all(o == 0 for o in rep.overshoots)
    with pytest.raises(ValueError):
        an.penal_decay(tr[:2])


def test_decay_fitted_on_synthetic_trace():
    tr = [{"delta": d, "overshoot_upper": 0.3 * d, "overshoot_lower": 0.0, "C0_tilde": 0.5}
          for d in (0.1, 0.05, 0.025, 0.0125)]
    rep = an.penal_decay(tr)
    assert rep.status == "fitted" and rep.slope == pytest.approx(1.0)
    assert rep.passed and rep.to_dict()["passed"]


def test_lemma1_flat_obstacles_vanish():
    rep = an.lemma1_bound(flat(0.7), linear(frac_kernel(1, 0.5)), [0.08, 0.04], 1 / 100)
    assert rep["C_V"] == pytest.approx(0.0, abs=1e-10)
    assert all(abs(r["sup_abs"]) < 1e-10 for r in rep["levels"])


def test_lemma1_empty_region():
    with pytest.raises(ValueError):
        an.lemma1_bound(flat(), linear(frac_kernel(1, 0.5)), [0.08], 1 / 50, V_margin=1.5)


def test_holder_constant_is_zero():
    x = np.linspace(0, 1, 65)[:, None]
    for a in (0.1, 0.5, 0.9):
        assert an.holder_seminorm(x, np.full(65, 2.0), a)["value"] == 0.0


def test_holder_sqrt_exact():
    for N in (128, 256):
        x = np.linspace(0, 1, N + 1)[:, None]
        r = an.holder_seminorm(x, np.sqrt(x[:, 0]), 0.5)
        assert r["value"] == pytest.approx(1.0, rel=1e-12)
        assert 0 in r["pair"]


def test_holder_supercritical_growth():
    vals = []
    for N in (128, 256, 512):
        x = np.linspace(0, 1, N + 1)[:, None]
        vals.append(an.holder_seminorm(x, np.sqrt(x[:, 0]), 0.7)["value"])
    rates = [math.log2(b / a) for a, b in zip(vals, vals[1:])]
    assert all(r == pytest.approx(0.2, abs=0.01) for r in rates)


def test_holder_alpha_monotone_at_argmax():
    x = np.linspace(-1, 1, 201)[:, None]
    u = np.abs(x[:, 0]) ** 0.6 + 0.1 * np.sin(5 * x[:, 0])
    r1 = an.holder_seminorm(x, u, 0.3)
    r2 = an.holder_seminorm(x, u, 0.6)
    ell = r1["distance"]
    assert r2["value"] >= r1["value"] * ell ** (0.3 - 0.6) * (1 - 1e-12)


def test_holder_needs_two_points():
    with pytest.raises(ValueError):
        an.holder_seminorm(np.zeros((1, 1)), np.zeros(1), 0.5)


def test_holder_2d_sampling_deterministic():
    g = build_grid(make_preset("distance", DOM).domain, 0.1, 2.0)  # noqa: F841
    rng = np.random.default_rng(1)
    P = rng.uniform(-1, 1, (300, 2))
    v = np.sin(P[:, 0]) + P[:, 1] ** 2
    a = an.holder_seminorm(P, v, 0.5, h=0.05)
    b = an.holder_seminorm(P, v, 0.5, h=0.05)
    assert a["value"] == b["value"] and a["value"] > 0


def test_boundary_quotient_getoor_limit():
    sups = []
    for h in (1 / 200, 1 / 800):
        g = build_grid(DOM, h, 2.0)
        x = g.points[:, 0]
        u = Field(g, np.sqrt(1 - x**2), ZeroFunction())
        b = an.boundary_quotient(u, ZeroFunction(), 0.5, 0.1)
        assert b.x0[0] == 1.0
        sups.append(b.sup)
        assert b.inf > 0 and np.isfinite(b.ratio)
    assert abs(sups[1] - math.sqrt(2)) < abs(sups[0] - math.sqrt(2)) < 1e-2


def test_boundary_quotient_trivial_and_empty():
    g = build_grid(DOM, 1 / 50, 2.0)
    phi = lambda p: 0.3 * np.ones(len(p))  # noqa: E731
    u = Field(g, phi(g.points), phi)
    b = an.boundary_quotient(u, phi, 0.5, 0.2)
    assert np.all(b.q == 0) and all(v == 0 for v in b.seminorms.values())
    with pytest.raises(ValueError):
        an.boundary_quotient(u, phi, 0.5, 1e-4)


def test_complementarity_trivial_and_contact():
    g = build_grid(DOM, 1 / 100, 2.0)
    obs = make_preset("distance", DOM)
    z = ProblemInstance(g, linear(frac_kernel(1, 0.5)), 0.0, obs)
    rep = an.complementarity_check(z, np.zeros(g.n_interior), 1e-8)
    assert rep["passed"] and rep["counts"]["free"] == g.n_interior
    assert rep["max_abs_residual"] == 0
    centre = int(np.argmin(np.abs(g.points[:, 0])))
    for s, at_centre in ((0.5, "upper"), (0.9, "none")):
        inst = ProblemInstance(g, linear(frac_kernel(1, s)), 8.0, obs)
        u = solve_direct(inst, SolveConfig()).values
        rep = an.complementarity_check(inst, u, 1e-8)
        assert rep["passed"], rep["checks"]
        assert rep["counts"]["upper"] > 0
        # the concave kink of psi^+ at 0 detaches the solution as s grows, as in the local problem
        assert rep["flags"][centre] == at_centre


def test_complementarity_flags_corruption():
    g = build_grid(DOM, 1 / 50, 2.0)
    inst = ProblemInstance(g, linear(frac_kernel(1, 0.5)), 2.0, make_preset("distance", DOM))
    u = solve_direct(inst, SolveConfig()).values
    u[10] += 0.05
    rep = an.complementarity_check(inst, u, 1e-8)
    assert not rep["passed"]


def test_classical_closed_form_matches_psor():
    obs = make_preset("distance", DOM)
    for f in (0.5, 8.0):
        x, u = an.classical_obstacle_1d(DOM, f, obs.psi_minus, obs.psi_plus, obs.phi, h=1 / 400)
        assert np.max(np.abs(u - an.classical_distance_solution(x, f))) < 1e-9


def test_local_limit_trivial():
    obs = make_preset("distance", DOM)
    g = build_grid(DOM, 1 / 50, 2.0)
    sols = {s: Field(g, np.zeros(g.n_interior), ZeroFunction()) for s in (0.5, 0.9, 0.99)}
    rep = an.local_limit_error(sols, 0.0, obs, h_oracle=1 / 200)
    assert all(r["sup_error"] == 0 for r in rep["rows"])
    assert rep["nonincreasing_tail"] and rep["uniform_seminorm"]


def test_pucci_star_trivial():
    g = build_grid(DOM, 1 / 50, 2.0)
    inst = ProblemInstance(g, linear(frac_kernel(1, 0.5)), 0.0, make_preset("distance", DOM))
    rep = an.pucci_star_bound_check(inst, np.zeros(g.n_interior), frac_params(1, 0.5), 0.2)
    assert rep["passed"] and rep["min_M_star_plus"] == 0 and rep["max_M_star_minus"] == 0


def test_pucci_star_getoor_unconstrained():
    g = build_grid(DOM, 1 / 100, 2.0)
    inst = ProblemInstance(g, linear(frac_kernel(1, 0.5)), 1.0, make_preset("constant", DOM, bound=10))
    u = an.getoor_profile(DOM, 0.5, 1.0)(g.points)
    rep = an.pucci_star_bound_check(inst, u, frac_params(1, 0.5), 0.2, C0=0.0, tol=0.05)
    assert rep["passed"]


def test_regularity_report_shapes():
    g = build_grid(DOM, 1 / 100, 2.0)
    x = g.points[:, 0]
    rep = an.regularity_report(Field(g, np.cos(x), ZeroFunction()), 0.3, (0.3, 0.5))
    d = rep.to_dict()
    assert {"holder_u", "holder_dq"} <= set(d)
    assert all(np.isfinite(v) and v >= 0 for v in _flatten(d))


def _flatten(d):
    if isinstance(d, dict):
        for v in d.values():
            yield from _flatten(v)
    elif isinstance(d, (list, tuple)):
        for v in d:
            yield from _flatten(v)
    elif isinstance(d, (int, float)) and not isinstance(d, bool):
        yield d


def test_reports_are_deterministic():
    g = build_grid(DOM, 1 / 100, 2.0)
    obs = make_preset("distance", DOM)
    a = an.lemma1_bound(obs, linear(frac_kernel(1, 0.5)), [0.08, 0.04], 1 / 100)
    b = an.lemma1_bound(obs, linear(frac_kernel(1, 0.5)), [0.08, 0.04], 1 / 100)
    assert a == b and g.n_interior > 0
