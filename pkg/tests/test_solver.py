import numpy as np
import pytest

from nlobstacle import (BaseProblem, Interval, NonConvergence, PenaltyFn, ProblemInstance,
                        SolveConfig, build_grid, continuation_delta, continuation_epsilon,
                        frac_kernel, frac_params, linear, make_preset, mollify_set, pucci,
                        solve_direct, solve_penalized)
from nlobstacle.analysis import getoor_profile
from nlobstacle.obstacles import ObstacleSet, ZeroFunction
from nlobstacle.solver import contact_flags, residual_maxmin, restrict

DOM = Interval(-1, 1)


def box(lo, hi):
    return ObstacleSet(DOM, lambda p: np.full(len(p), hi), lambda p: np.full(len(p), lo),
                       ZeroFunction(), 0.0, lambda e: 0.0)


def inst_of(h=1 / 50, s=0.5, f=0.0, obs=None, op=None):
    g = build_grid(DOM, h, 2.0)
    return ProblemInstance(g, op or linear(frac_kernel(1, s)), f, obs or make_preset("distance", DOM))


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(method="bogus")
    with pytest.raises(ValueError):
        SolveConfig(delta_schedule=[0.1, 0.2])
    with pytest.raises(ValueError):
        SolveConfig(tol_residual=0)
    with pytest.raises(ValueError):
        SolveConfig(direct_method="sor")


@pytest.mark.parametrize("method", ["semismooth_newton", "damped_fixed_point"])
def test_trivial_penalized(method):
    inst = inst_of(obs=box(-1, 1))
    sol = solve_penalized(inst, PenaltyFn(0.1), SolveConfig(method=method))
    assert np.all(sol.values == 0) and sol.iterations <= 1


def test_trivial_continuations():
    cfg = SolveConfig(epsilon_schedule=[0.16, 0.08])
    inst = inst_of(obs=box(-1, 1))
    assert np.all(continuation_delta(inst, cfg).values == 0)
    base = BaseProblem(DOM, 1 / 50, linear(frac_kernel(1, 0.5)), 0.0, make_preset("distance", DOM))
    assert np.max(np.abs(continuation_epsilon(base, cfg).values)) == 0
    assert np.all(solve_direct(inst, cfg).values == 0)


def test_direct_matches_closed_form_profile():
    errs = []
    for h in (1 / 100, 1 / 200):
        inst = inst_of(h=h, f=1.0, obs=make_preset("constant", DOM, bound=10.0))
        sol = solve_direct(inst, SolveConfig())
        exact = getoor_profile(DOM, 0.5, 1.0)(inst.grid.points)
        errs.append(np.max(np.abs(sol.values - exact)))
    assert errs[1] < errs[0] < 0.02


def test_damped_and_newton_agree():
    inst = inst_of(h=1 / 25, f=4.0)
    p = PenaltyFn(0.05)
    a = solve_penalized(inst, p, SolveConfig(tol_residual=1e-10))
    b = solve_penalized(inst, p, SolveConfig(method="damped_fixed_point", tol_residual=1e-8,
                                             max_iter=200000), warm=a.values + 0.01)
    assert np.max(np.abs(a.values - b.values)) < 1e-6


def test_nonconvergence_reports_best():
    inst = inst_of(h=1 / 25, f=4.0)
    with pytest.raises(NonConvergence) as ei:
        solve_penalized(inst, PenaltyFn(0.01), SolveConfig(method="damped_fixed_point", max_iter=3))
    assert ei.value.best_residual > 0 and ei.value.solution is not None


def test_penalized_overshoot_bound_and_decay():
    inst = inst_of(h=1 / 100, s=0.9, f=8.0)
    sol = continuation_delta(inst, SolveConfig())
    ov = [max(t["overshoot_upper"], t["overshoot_lower"]) for t in sol.trace]
    for t in sol.trace:
        assert t["overshoot_upper"] <= t["delta"] * (t["C0_tilde"] + 1)
    assert all(b <= 1.1 * a for a, b in zip(ov, ov[1:]))
    tol = sol.trace[-1]["delta"] * (sol.C0_tilde + 1) + 1e-9
    assert np.all(sol.values <= inst.hi + tol) and np.all(sol.values >= inst.lo - tol)


def test_epsilon_continuation_matches_direct():
    base = BaseProblem(DOM, 1 / 100, linear(frac_kernel(1, 0.9)), 8.0, make_preset("distance", DOM))
    cfg = SolveConfig(epsilon_schedule=[0.16, 0.08, 0.04])
    ud = solve_direct(base.direct_instance(), cfg)
    uc = continuation_epsilon(base, cfg)
    diff = np.max(np.abs(ud.values - restrict(uc.u, ud.u.grid)))
    assert diff <= max(1e-4, 5 * cfg.delta_schedule[-1] * (uc.C0_tilde + 1))
    assert [lev["eps"] for lev in uc.trace] == cfg.epsilon_schedule


def test_epsilon_guard():
    base = BaseProblem(DOM, 0.05, linear(frac_kernel(1, 0.5)), 0.0, make_preset("distance", DOM))
    with pytest.raises(ValueError):
        continuation_epsilon(base, SolveConfig(epsilon_schedule=[0.08]))


@pytest.mark.parametrize("op", [linear(frac_kernel(1, 0.7)), pucci(frac_params(1, 0.7), 1)])
def test_direct_sandwich_and_complementarity(op):
    inst = inst_of(h=1 / 40, f=2.0, op=op)
    cfg = SolveConfig()
    u = solve_direct(inst, cfg).values
    tol = 10 * cfg.tol_residual
    assert np.all(u >= inst.lo - tol) and np.all(u <= inst.hi + tol)
    assert np.max(np.abs(residual_maxmin(inst, u))) <= cfg.tol_residual
    A = -inst.apply(u) - inst.fvals
    fl = contact_flags(inst, u, tol)
    assert np.all(A[fl == "lower"] >= -cfg.tol_residual)
    assert np.all(A[fl == "upper"] <= cfg.tol_residual)
    assert np.all(np.abs(A[fl == "none"]) <= cfg.tol_residual)


@pytest.mark.parametrize("method", ["pgs", "pgs_redblack"])
def test_projected_sweeps_agree(method):
    inst = inst_of(h=1 / 20, s=0.7, f=2.0)
    a = solve_direct(inst, SolveConfig()).values
    b = solve_direct(inst, SolveConfig(direct_method=method, max_iter=100000)).values
    assert np.max(np.abs(a - b)) <= 1e-8


def test_comparison_in_f():
    lo_f = inst_of(h=1 / 50, f=2.0)
    x = lo_f.grid.points[:, 0]
    hi_f = inst_of(h=1 / 50, f=lambda p: 2.0 + np.exp(-4 * p[:, 0] ** 2))
    a = solve_direct(lo_f, SolveConfig()).values
    b = solve_direct(hi_f, SolveConfig()).values
    assert x.size and np.all(b >= a - 1e-9)


def test_residual_maxmin_cases():
    inst = inst_of(h=1 / 20, f=0.0)
    u = np.zeros(inst.grid.n_interior)
    u[5] = inst.hi[5] + 1
    assert residual_maxmin(inst, u)[5] >= 1
    # at the lower obstacle with -I psi^- - f >= 0 the residual vanishes
    v = inst.lo.copy()
    A = -inst.apply(v) - inst.fvals
    r = residual_maxmin(inst, v)
    assert np.all(r[A >= 0] == 0)


def test_determinism():
    inst = inst_of(h=1 / 40, f=3.0, op=pucci(frac_params(1, 0.6), -1))
    a = solve_direct(inst, SolveConfig()).values
    b = solve_direct(inst_of(h=1 / 40, f=3.0, op=pucci(frac_params(1, 0.6), -1)), SolveConfig()).values
    assert np.array_equal(a, b)


def test_restrict_fills_exterior():
    g1 = build_grid(DOM, 0.1, 2.0)
    base = BaseProblem(DOM, 0.1, linear(frac_kernel(1, 0.5)), 0.0, make_preset("distance", DOM))
    g2 = base.grid(0.3)
    from nlobstacle import Field
    u = Field(g1, np.ones(g1.n_interior), lambda p: np.full(len(p), 7.0))
    out = restrict(u, g2)
    inside = DOM.signed_distance(g2.points) > 0
    assert np.all(out[inside] == 1) and np.all(out[~inside] == 7)


def test_mollified_instance_builds():
    g = build_grid(DOM, 1 / 50, 2.0)
    m = mollify_set(make_preset("distance", DOM), 0.08, g)
    inst = ProblemInstance(g, linear(frac_kernel(1, 0.5)), 1.0, m)
    assert np.all(inst.lo <= inst.hi)
