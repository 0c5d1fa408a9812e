"""Run configuration: TOML parsing, validation and instance construction."""
from __future__ import annotations

import ast
import copy
import hashlib
import json
import operator as _op

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .geometry import Disk, Interval
from .kernel import EllipticityParams, frac_kernel, frac_params, homogeneous_kernel
from .nonlocal_op import OperatorSpec, infsup, linear, pucci
from .obstacles import make_preset
from .solver import BaseProblem, SolveConfig


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


# Every table and key that may appear, with defaults (None = required or optional-without-default).
SCHEMA = {
    "domain": {"kind": "interval", "a": -1.0, "b": 1.0, "center": [0.0, 0.0], "radius": 1.0},
    "grid": {"h": 0.005, "R_cut": None, "mode": "auto"},
    "operator": {"kind": "linear", "s": None, "kernel": "fractional", "a_values": None,
                 "lam": None, "Lam": None, "spread": 2.0, "sectors": 16, "families": None},
    "obstacles": {"preset": "distance", "width": 0.1, "bound": 1.0},
    "f": {"kind": "constant", "value": 0.0, "center": None, "width": 0.5, "height": 1.0,
          "expr": None},
    "solver": {"method": "semismooth_newton", "direct_method": "active_set", "tau": None,
               "tol_residual": 1e-9, "max_iter": 200, "tol_tail": 1e-6,
               "delta_schedule": [0.1 * 2.0**-j for j in range(7)],
               "epsilon_schedule": [0.16 * 2.0**-k for k in range(4)],
               "continuation": False},
    "analysis": {"complementarity": True, "decay": False, "lemma1": False, "regularity": False,
                 "boundary": False, "pucci_star": False, "V_margin": 0.3,
                 "lemma1_eps": [0.08, 0.04, 0.02], "boundary_r": None, "pucci_collar": 0.2,
                 "alphas": [round(0.1 * k, 1) for k in range(1, 10)],
                 "reference": "none", "reference_bound": 0.02, "tol_factor": 10.0,
                 "min_slope": 0.9},
    "sweep": {"s": [], "delta": [], "epsilon": [], "h": []},
    "output": {"dir": "out"},
}
REQUIRED = {("operator", "s")}


def load(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return resolve(raw)


def resolve(raw: dict) -> dict:
    """Check keys against the schema and fill in defaults."""
    out = {}
    for table in raw:
        if table not in SCHEMA:
            raise ConfigError(f"unknown table [{table}]")
        if not isinstance(raw[table], dict):
            raise ConfigError(f"[{table}] must be a table")
    for table, defaults in SCHEMA.items():
        given = raw.get(table, {})
        for key in given:
            if key not in defaults:
                raise ConfigError(f"unknown key {table}.{key}")
        merged = copy.deepcopy(defaults)
        merged.update(given)
        out[table] = merged
    for table, key in sorted(REQUIRED):
        if out[table].get(key) is None:
            raise ConfigError(f"missing required key {table}.{key}")
    s = out["operator"]["s"]
    if not isinstance(s, (int, float)) or not 0 < s < 1:
        raise ConfigError(f"operator.s must be a number in (0, 1), got {s!r}")
    if not out["grid"]["h"] > 0:
        raise ConfigError("grid.h must be positive")
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------------- builders

def build_domain(cfg):
    d = cfg["domain"]
    if d["kind"] == "interval":
        return Interval(float(d["a"]), float(d["b"]))
    if d["kind"] == "disk":
        return Disk(tuple(float(v) for v in d["center"]), float(d["radius"]))
    raise ConfigError(f"unknown domain.kind {d['kind']!r}")


def build_operator(cfg, n: int) -> OperatorSpec:
    o = cfg["operator"]
    s = float(o["s"])
    if o["lam"] is not None or o["Lam"] is not None:
        if o["lam"] is None or o["Lam"] is None:
            raise ConfigError("operator.lam and operator.Lam go together")
        params = EllipticityParams(float(o["lam"]), float(o["Lam"]), s)
    else:
        params = frac_params(n, s, float(o["spread"]))
    kind = o["kind"]
    if kind == "linear":
        if o["kernel"] == "fractional":
            K = frac_kernel(n, s)
        elif o["kernel"] == "homogeneous":
            if not o["a_values"]:
                raise ConfigError("operator.a_values is required for a homogeneous kernel")
            K = homogeneous_kernel(n, s, o["a_values"])
        else:
            raise ConfigError(f"unknown operator.kernel {o['kernel']!r}")
        return linear(K, params)
    if kind in ("pucci_plus", "pucci_minus", "pucci_star_plus", "pucci_star_minus"):
        return pucci(params, +1 if kind.endswith("plus") else -1, star="star" in kind,
                     sectors=int(o["sectors"]))
    if kind == "infsup":
        fams = o["families"]
        if not fams:
            raise ConfigError("operator.families is required for infsup")
        return infsup([[homogeneous_kernel(n, s, a) for a in fam] for fam in fams], params)
    raise ConfigError(f"unknown operator.kind {kind!r}")


def build_obstacles(cfg, domain):
    o = cfg["obstacles"]
    try:
        return make_preset(o["preset"], domain, width=float(o["width"]), bound=float(o["bound"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_f(cfg, n: int):
    f = cfg["f"]
    kind = f["kind"]
    if kind == "constant":
        return float(f["value"])
    if kind == "bump":
        c = np.asarray(f["center"] if f["center"] is not None else [0.0] * n, dtype=float)
        w, ht = float(f["width"]), float(f["height"])
        if c.shape != (n,) or not w > 0:
            raise ConfigError("f.center needs one coordinate per dimension and f.width > 0")

        def bump(p):
            r2 = np.sum((np.asarray(p) - c) ** 2, axis=-1) / (w * w)
            out = np.zeros(len(r2))
            ok = r2 < 1
            out[ok] = ht * np.exp(1.0 - 1.0 / (1.0 - r2[ok]))
            return out

        return bump
    if kind == "expr":
        if not f["expr"]:
            raise ConfigError("f.expr is required when f.kind = 'expr'")
        return parse_expression(f["expr"], n)
    raise ConfigError(f"unknown f.kind {kind!r}")


def build_problem(cfg) -> tuple[BaseProblem, SolveConfig]:
    dom = build_domain(cfg)
    n = dom.dim
    spec = build_operator(cfg, n)
    g = cfg["grid"]
    base = BaseProblem(dom, float(g["h"]), spec, build_f(cfg, n), build_obstacles(cfg, dom),
                       g["R_cut"], g["mode"])
    sv = cfg["solver"]
    try:
        scfg = SolveConfig(method=sv["method"], tau=sv["tau"], tol_residual=float(sv["tol_residual"]),
                           max_iter=int(sv["max_iter"]), delta_schedule=list(sv["delta_schedule"]),
                           epsilon_schedule=list(sv["epsilon_schedule"]),
                           tol_tail=float(sv["tol_tail"]), direct_method=sv["direct_method"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return base, scfg


# --------------------------------------------------------------- expressions

_BIN = {ast.Add: _op.add, ast.Sub: _op.sub, ast.Mult: _op.mul, ast.Div: _op.truediv,
        ast.Pow: _op.pow}
_UN = {ast.USub: _op.neg, ast.UAdd: _op.pos}
_FUN = {"exp": np.exp, "abs": np.abs, "sqrt": np.sqrt}


def parse_expression(text: str, n: int):
    """Arithmetic over x1, x2 (x is an alias of x1) with + - * / ^ ** exp abs sqrt.

    Parsed with the ``ast`` module and evaluated from a whitelist of node
    types; anything else is rejected.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from exc
    names = {"x": 0, "x1": 0, "x2": 1}

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            if node.id not in names or names[node.id] >= n:
                raise ConfigError(f"unknown variable {node.id!r} in {text!r}")
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UN:
            return check(node.operand)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUN and len(node.args) == 1 and not node.keywords):
            return check(node.args[0])
        raise ConfigError(f"unsupported syntax in expression {text!r}")

    check(tree)

    def ev(node, X):
        if isinstance(node, ast.Expression):
            return ev(node.body, X)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return X[:, names[node.id]]
        if isinstance(node, ast.BinOp):
            return _BIN[type(node.op)](ev(node.left, X), ev(node.right, X))
        if isinstance(node, ast.UnaryOp):
            return _UN[type(node.op)](ev(node.operand, X))
        return _FUN[node.func.id](ev(node.args[0], X))

    def f(p):
        X = np.asarray(p, dtype=float).reshape(-1, n)
        with np.errstate(all="ignore"):
            out = np.broadcast_to(np.asarray(ev(tree, X), dtype=float), (len(X),)).copy()
        if not np.all(np.isfinite(out)):
            raise ValueError(f"expression {text!r} is not finite at some node")
        return out

    f.expr = text
    return f
