"""Command line front end: ``nlobstacle solve|verify|sweep --config FILE``.

Exit codes: 0 success, 2 bad configuration or missing artifacts,
3 solver did not converge, 4 a verification check failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .config import ConfigError, build_problem, config_hash, load
from .geometry import GridError
from .nonlocal_op import Field
from .solver import (NonConvergence, SolveConfig, contact_flags, continuation_delta,
                     continuation_epsilon, residual_maxmin, restrict, solve_direct)

log = logging.getLogger("nlobstacle")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4


class ArtifactError(RuntimeError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _coord_names(n):
    return ["x1"] if n == 1 else ["x1", "x2"]


# ------------------------------------------------------------------- helpers

def _reference(cfg, base, grid, u) -> dict | None:
    a = cfg["analysis"]
    if a["reference"] == "none":
        return None
    if a["reference"] != "getoor":
        raise ConfigError(f"unknown analysis.reference {a['reference']!r}")
    f = base.f
    if callable(f):
        raise ConfigError("the getoor reference needs a constant f")
    exact = an.getoor_profile(base.domain, base.operator.s, f)
    err = float(np.max(np.abs(u - exact(grid.points)), initial=0.0))
    return {"kind": "getoor", "sup_error": err, "bound": a["reference_bound"],
            "passed": err <= a["reference_bound"]}


def _solve(base, scfg):
    inst = base.direct_instance()
    sol = solve_direct(inst, scfg)
    return inst, sol


def _header(cfg, out: Path) -> dict:
    return {"config": cfg, "config_hash": config_hash(cfg), "out": str(out)}


def _write_solution(out: Path, inst, u, tol):
    g = inst.grid
    P = g.points
    names = _coord_names(g.dim)
    res = residual_maxmin(inst, u)
    flags = contact_flags(inst, u, tol)
    _write_csv(out / "solution.csv", names + ["u", "psi_minus", "psi_plus", "residual", "contact"],
               [list(P[i]) + [u[i], inst.lo[i], inst.hi[i], res[i], flags[i]]
                for i in range(len(u))])
    _write_residual(out, g, res, flags)


def _write_residual(out: Path, grid, res, flags):
    P = grid.points
    _write_csv(out / "residual.csv", _coord_names(grid.dim) + ["residual", "contact"],
               [list(P[i]) + [res[i], flags[i]] for i in range(len(res))])


def _read_solution(path: Path, inst) -> np.ndarray:
    if not path.exists():
        raise ArtifactError(f"missing solution artifact {path}; run `solve` first or pass --inline")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = _coord_names(inst.grid.dim)
    try:
        P = np.array([[float(r[k]) for k in names] for r in rows]).reshape(-1, inst.grid.dim)
        u = np.array([float(r["u"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"malformed solution file {path}: {exc}") from exc
    if P.shape != inst.grid.points.shape or np.max(np.abs(P - inst.grid.points)) > 1e-9:
        raise ArtifactError(f"{path} does not match the configured grid")
    return u


# ------------------------------------------------------------------ commands

def run_solve(cfg, out: Path) -> int:
    base, scfg = build_problem(cfg)
    report = _header(cfg, out)
    try:
        inst, sol = _solve(base, scfg)
    except NonConvergence as exc:
        report["solve"] = {"converged": False, "message": str(exc), "best_residual": exc.best_residual}
        _write_json(out / "report.json", report)
        log.error("%s", exc)
        return EXIT_SOLVER
    u = sol.values
    _write_solution(out, inst, u, cfg["analysis"]["tol_factor"] * scfg.tol_residual)
    report["solve"] = {"converged": True, "method": scfg.direct_method, "iterations": sol.iterations,
                       "residual": sol.residual, "n_nodes": inst.grid.n_interior}
    if cfg["solver"]["continuation"]:
        try:
            cont = continuation_epsilon(base, scfg)
        except NonConvergence as exc:
            report["continuation"] = {"converged": False, "message": str(exc)}
            _write_json(out / "report.json", report)
            return EXIT_SOLVER
        diff = float(np.max(np.abs(u - restrict(cont.u, inst.grid))))
        tol = max(1e-4, 5 * scfg.delta_schedule[-1] * ((cont.C0_tilde or 0.0) + 1))
        report["continuation"] = {"converged": True, "sup_diff": diff, "tol_eq": tol,
                                  "agree": diff <= tol, "C0_tilde": cont.C0_tilde,
                                  "levels": cont.trace}
    ref = _reference(cfg, base, inst.grid, u)
    if ref is not None:
        report["reference"] = ref
    _write_json(out / "report.json", report)
    log.info("solved %d nodes in %d iterations, residual %.2e", inst.grid.n_interior,
             sol.iterations, sol.residual)
    if ref is not None:
        log.info("sup-error vs closed form %.3e (bound %.3e)", ref["sup_error"], ref["bound"])
    return EXIT_OK


def run_verify(cfg, out: Path, inline: bool = False) -> int:
    base, scfg = build_problem(cfg)
    inst = base.direct_instance()
    report = _header(cfg, out)
    report["instance_hash"] = config_hash({k: cfg[k] for k in
                                           ("domain", "grid", "operator", "obstacles", "f")})
    if inline:
        rc = run_solve(cfg, out)
        if rc != EXIT_OK:
            return rc
    u = _read_solution(out / "solution.csv", inst)
    a = cfg["analysis"]
    tol = a["tol_factor"] * scfg.tol_residual
    results = {}
    prior = out / "report.json"
    if prior.exists():
        try:
            old = json.loads(prior.read_text())
        except json.JSONDecodeError:
            old = {}
        if old.get("config_hash") == report["config_hash"]:
            for key in ("solve", "continuation"):
                if key in old:
                    report[key] = old[key]
            if "continuation" in old:
                results["continuation"] = bool(old["continuation"].get("agree", False))
    fld = Field(inst.grid, u, inst.phi)
    if a["complementarity"]:
        c = an.complementarity_check(inst, u, tol, V_margin=a["V_margin"])
        flags, res = c.pop("flags"), c.pop("residual")
        report["complementarity"] = c
        results["complementarity"] = c["passed"]
        _write_residual(out, inst.grid, res, flags)
    if a["decay"]:
        try:
            tr = continuation_delta(inst, scfg).trace
        except NonConvergence as exc:
            log.error("%s", exc)
            return EXIT_SOLVER
        d = an.penal_decay(tr)
        report["decay"] = d.to_dict()
        results["decay"] = d.passed and (d.status == "inactive" or d.slope >= a["min_slope"])
    if a["lemma1"]:
        L = an.lemma1_bound(base.obstacles, base.operator, a["lemma1_eps"], base.h, a["V_margin"],
                            base.R_cut)
        report["lemma1"] = L
        results["lemma1"] = L["uniform"]
    if a["regularity"]:
        report["regularity"] = an.regularity_report(fld, a["V_margin"], tuple(a["alphas"])).to_dict()
    if a["boundary"]:
        r = a["boundary_r"]
        if r is None:
            w = cfg["obstacles"]["width"]
            r = 0.5 * w
        b = an.boundary_quotient(fld, inst.phi, base.operator.s, r, tuple(a["alphas"]))
        report["boundary"] = b.to_dict()
        results["boundary"] = bool(np.isfinite(b.sup) and b.inf > 0 and math.isfinite(b.ratio))
    if a["pucci_star"]:
        p = base.operator.params
        pc = an.pucci_star_bound_check(inst, u, p, a["pucci_collar"])
        report["pucci_star"] = pc
        results["pucci_star"] = pc["passed"]
    if a["reference"] != "none":
        ref = _reference(cfg, base, inst.grid, u)
        report["reference"] = ref
        results["reference"] = ref["passed"]
    report["results"] = results
    report["passed"] = all(results.values())
    _write_json(out / "report.json", report)
    for k, v in results.items():
        log.info("%-16s %s", k, "pass" if v else "FAIL")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _sub(cfg, **over):
    c = copy.deepcopy(cfg)
    for path, v in over.items():
        t, k = path.split(".")
        c[t][k] = v
    return c


def run_sweep(cfg, out: Path, axis: str) -> int:
    from .plotting import line_plot

    values = cfg["sweep"].get(axis)
    if axis not in ("s", "delta", "epsilon", "h"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ConfigError(f"sweep.{axis} lists no values")
    report = _header(cfg, out)
    try:
        if axis == "s":
            sols = {}
            for s in values:
                base, scfg = build_problem(_sub(cfg, **{"operator.s": float(s)}))
                sols[float(s)] = _solve(base, scfg)[1]
            base, _ = build_problem(cfg)
            rows_out = []
            if base.domain.dim == 1:
                ll = an.local_limit_error(sols, base.f, base.obstacles,
                                          V_margin=cfg["analysis"]["V_margin"])
                report["limits"] = ll
                rows_out = [[r["s"], r["sup_error"], r["dq_seminorm"]] for r in ll["rows"]]
                header = ["s", "sup_error", "dq_seminorm"]
                line_plot(out / "plot_error_vs_s.svg", [r[0] for r in rows_out],
                          {"sup error": [r[1] for r in rows_out]}, "s", "sup error vs classical",
                          logy=True)
            else:
                header = ["s", "sup_u", "iterations"]
                rows_out = [[s, float(np.max(np.abs(v.values))), v.iterations] for s, v in sols.items()]
                line_plot(out / "plot_sup_vs_s.svg", [r[0] for r in rows_out],
                          {"sup |u|": [r[1] for r in rows_out]}, "s", "sup |u|")
        elif axis == "delta":
            base, scfg = build_problem(cfg)
            scfg = SolveConfig(**{**scfg.__dict__, "delta_schedule": [float(v) for v in values]})
            tr = continuation_delta(base.direct_instance(), scfg).trace
            header = ["delta", "overshoot", "C0_tilde", "bound"]
            rows_out = [[t["delta"], max(t["overshoot_upper"], t["overshoot_lower"]), t["C0_tilde"],
                         t["delta"] * (t["C0_tilde"] + 1)] for t in tr]
            if len(tr) >= 3:
                report["decay"] = an.penal_decay(tr).to_dict()
            line_plot(out / "plot_overshoot_vs_delta.svg", [r[0] for r in rows_out],
                      {"overshoot": [r[1] for r in rows_out], "delta (C0 + 1)": [r[3] for r in rows_out]},
                      "delta", "overshoot", logx=True, logy=True)
        elif axis == "epsilon":
            base, scfg = build_problem(cfg)
            scfg = SolveConfig(**{**scfg.__dict__, "epsilon_schedule": [float(v) for v in values]})
            sol = continuation_epsilon(base, scfg, cfg["analysis"]["V_margin"])
            header = ["eps", "n_nodes", "sup_diff_on_V", "final_overshoot"]
            rows_out = []
            for lev in sol.trace:
                last = lev["delta_trace"][-1]
                rows_out.append([lev["eps"], lev["n_nodes"], lev.get("sup_diff_on_V", float("nan")),
                                 max(last["overshoot_upper"], last["overshoot_lower"])])
            line_plot(out / "plot_overshoot_vs_eps.svg", [r[0] for r in rows_out],
                      {"final overshoot": [r[3] for r in rows_out]}, "epsilon", "overshoot",
                      logx=True)
        else:
            header = ["h", "dq_seminorm", "ref_error", "error_ratio"]
            rows_out = []
            prev = None
            for h in values:
                c = _sub(cfg, **{"grid.h": float(h)})
                base, scfg = build_problem(c)
                sol = _solve(base, scfg)[1]
                g = sol.u.grid
                V = g.distance() >= cfg["analysis"]["V_margin"]
                semi = an.c1alpha_seminorm(g.points[V], sol.values[V], 0.5, g.h) if V.sum() > 2 else 0.0
                ref = _reference(c, base, g, sol.values)
                err = ref["sup_error"] if ref else float("nan")
                ratio = prev / err if (prev is not None and ref and err > 0) else float("nan")
                rows_out.append([float(h), semi, err, ratio])
                prev = err if ref else None
            series = {"seminorm (alpha=0.5)": [r[1] for r in rows_out]}
            if cfg["analysis"]["reference"] != "none":
                series["sup error"] = [r[2] for r in rows_out]
            line_plot(out / "plot_seminorm_vs_h.svg", [r[0] for r in rows_out], series, "h",
                      "value", logx=True, logy=True)
    except NonConvergence as exc:
        report["error"] = str(exc)
        _write_json(out / "report.json", report)
        log.error("%s", exc)
        return EXIT_SOLVER
    _write_csv(out / "sweep.csv", header, rows_out)
    report["sweep"] = {"axis": axis, "header": header, "rows": rows_out}
    _write_json(out / "report.json", report)
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlobstacle", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "verify", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (default: output.dir from the config)")
        p.add_argument("--quiet", action="store_true", help="only print errors")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=["s", "delta", "epsilon", "h"])
        if name == "verify":
            p.add_argument("--inline", action="store_true", help="solve first, then verify")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", force=True)
    try:
        cfg = load(args.config)
        out = Path(args.out or cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return run_solve(cfg, out)
        if args.command == "verify":
            return run_verify(cfg, out, args.inline)
        return run_sweep(cfg, out, args.axis)
    except (ConfigError, GridError, ArtifactError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid parameter combinations surface from the constructors
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
