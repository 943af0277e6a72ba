"""Scenario runner: ``varicon run|skate|fluid|check|list``.

Every scenario is a JSON document with a ``kind``. It is validated against
a schema and then *prepared* (expressions parsed, objects built) before any
computation starts, so a bad config exits with status 3 and writes nothing.

Exit codes: 0 success, 1 computation error, 2 vakonomic run halted at the
singular locus (artifacts are still written), 3 invalid config.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import exprjet as ej
from . import fluid as fl
from . import skate as sk
from .admissibility import (
    AdmissibilityError,
    ConstraintSet,
    SectionExpr,
    VerticalField,
    admissibility_report,
    chetaev_residual,
    linear_integrable_equivalence_check,
    random_admissible_point,
    vak_tangency_residual,
)
from .multiplier import MultiplierError, eliminate_multiplier, nh_system, vak_system, zero_set_agreement
from .paramvar import (
    Parametrization,
    ParametrizationError,
    assemble_EF,
    check_chetaev_adapted,
    check_vak_adapted,
    random_eps,
    splitting_residual,
)
from .rng import Xorshift
from .sampling import central_difference, random_expr, random_jet_point, random_params

EXIT_OK, EXIT_COMPUTE, EXIT_SINGULAR, EXIT_CONFIG = 0, 1, 2, 3

KINDS = (
    "skate-nh",
    "skate-vak",
    "skate-compare",
    "fluid-check",
    "admissibility",
    "paramcheck",
    "equivalence",
    "engine-check",
)


class ConfigError(Exception):
    pass


class CatalogError(Exception):
    pass


# ----------------------------------------------------------------------------
# Schemas

_expr = {"type": "string", "minLength": 1}
_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_seed = {"type": "integer", "minimum": 0}
_space = {
    "type": "object",
    "required": ["base_dim", "fields"],
    "properties": {
        "base_dim": {"type": "integer", "minimum": 1, "maximum": 4},
        "fields": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "params": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}
_bindings = {"type": "object", "additionalProperties": _num}
_common = {
    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
    "kind": {"enum": list(KINDS)},
    "description": {"type": "string"},
    "seed": _seed,
}
_skate_params = {
    "type": "object",
    "required": ["m", "I", "geff"],
    "properties": {"m": _pos, "I": _pos, "geff": {"type": "number", "minimum": 0}},
    "additionalProperties": False,
}
_skate = {
    "params": _skate_params,
    "init": {"type": "array", "items": _num, "minItems": 6, "maxItems": 7},
    "dt": _pos,
    "T": _pos,
}
_window = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_points = {
    "oneOf": [
        {"type": "array", "items": {"type": "array", "items": _num, "minItems": 1}, "minItems": 1},
        {
            "type": "object",
            "required": ["random"],
            "properties": {
                "random": {"type": "integer", "minimum": 1},
                "low": {"type": "array", "items": _num},
                "high": {"type": "array", "items": _num},
            },
            "additionalProperties": False,
        },
    ]
}


def _obj(required, props) -> dict:
    return {
        "type": "object",
        "required": ["name", "kind"] + list(required),
        "properties": {**_common, **props},
        "additionalProperties": False,
    }


SCHEMAS: dict[str, dict] = {
    "skate-nh": _obj(
        ["params", "init", "dt", "T"],
        {
            **_skate,
            "oracle": {"enum": ["line", "circle"]},
            "convergence": {
                "type": "object",
                "required": ["dts"],
                "properties": {"dts": {"type": "array", "items": _pos, "minItems": 2}, "T": _pos},
                "additionalProperties": False,
            },
            "first_variation": {
                "type": "object",
                "required": ["window"],
                "properties": {"window": _window},
                "additionalProperties": False,
            },
        },
    ),
    "skate-compare": _obj(
        ["params", "init", "dt", "T"],
        {**_skate, "threshold": _pos},
    ),
    "fluid-check": _obj(
        ["J", "check"],
        {
            "metric": {
                "oneOf": [
                    {"const": "minkowski"},
                    {"type": "array", "items": {"type": "array", "items": _expr, "minItems": 4, "maxItems": 4}, "minItems": 4, "maxItems": 4},
                ]
            },
            "J": {"oneOf": [{"const": "random"}, {"type": "array", "items": _expr, "minItems": 4, "maxItems": 4}]},
            "eos": _expr,
            "params": _bindings,
            "check": {"enum": ["state", "continuity", "euler", "variation", "chetaev", "liedrag", "twist"]},
            "points": _points,
            "X": {
                "oneOf": [
                    {"type": "array", "items": _expr, "minItems": 4, "maxItems": 4},
                    {"const": "random"},
                    {
                        "type": "object",
                        "required": ["bump"],
                        "properties": {
                            "bump": {
                                "type": "object",
                                "properties": {"component": {"type": "integer", "minimum": 0, "maximum": 3}, "amplitude": _num, "power": {"type": "integer", "minimum": 2}},
                                "additionalProperties": False,
                            }
                        },
                        "additionalProperties": False,
                    },
                ]
            },
            "box": {"type": "array", "items": _window, "minItems": 4, "maxItems": 4},
            "quadrature": {"type": "integer", "minimum": 2},
            "expect": {"enum": ["zero", "nonzero"]},
            "tol": _pos,
            "rel_tol": _pos,
            "trials": {"type": "integer", "minimum": 1},
            "pressure_oracle": {
                "type": "object",
                "required": ["component"],
                "properties": {"component": {"type": "integer", "minimum": 0, "maximum": 3}, "h": _pos, "rel_tol": _pos},
                "additionalProperties": False,
            },
            "control": {"type": "boolean"},
        },
    ),
    "admissibility": _obj(
        ["space", "constraints", "section", "points"],
        {
            "space": _space,
            "param_values": _bindings,
            "constraints": {"type": "array", "items": _expr, "minItems": 1},
            "section": {"type": "array", "items": _expr, "minItems": 1},
            "points": {"type": "array", "items": {"oneOf": [_num, {"type": "array", "items": _num}]}, "minItems": 1},
            "vertical_field": {"type": "array", "items": _expr},
            "tol": _pos,
        },
    ),
    "paramcheck": _obj(
        ["space", "lagrangian", "constraints", "parametrization", "adapted"],
        {
            "space": _space,
            "param_values": _bindings,
            "lagrangian": _expr,
            "constraints": {"type": "array", "items": _expr, "minItems": 1},
            "parametrization": {
                "type": "object",
                "required": ["p"],
                "properties": {
                    "p": {"type": "array", "items": {"type": "array", "items": _expr}},
                    "p_mu": {"type": "array", "items": {"type": "array", "items": {"type": "array", "items": _expr}}},
                },
                "additionalProperties": False,
            },
            "adapted": {"enum": ["vak", "chetaev"]},
            "samples": {"type": "integer", "minimum": 1},
            "oracle": {
                "type": "object",
                "required": ["system", "solve_row"],
                "properties": {
                    "system": {"enum": ["nh", "vak"]},
                    "solve_row": {"type": "integer", "minimum": 0},
                    "locus": _expr,
                    "locus_min": _pos,
                    "tol": _pos,
                },
                "additionalProperties": False,
            },
            "tol": _pos,
            "emit_equations": {"type": "boolean"},
        },
    ),
    "equivalence": _obj(
        ["space", "f", "section", "trials"],
        {
            "space": _space,
            "param_values": _bindings,
            "f": _expr,
            "section": {"type": "array", "items": _expr, "minItems": 1},
            "interval": _window,
            "trials": {"type": "integer", "minimum": 1},
            "samples": {"type": "integer", "minimum": 3},
            "tol_a": _pos,
            "tol_b": _pos,
        },
    ),
    "engine-check": _obj(
        ["space", "pairs"],
        {
            "space": _space,
            "pairs": {"type": "integer", "minimum": 1},
            "depth": {"type": "integer", "minimum": 1, "maximum": 8},
            "rel_tol": _pos,
            "step": _pos,
        },
    ),
}
SCHEMAS["skate-vak"] = json.loads(json.dumps(SCHEMAS["skate-nh"]))
SCHEMAS["skate-vak"]["properties"]["singular_tol"] = _pos


def validate(cfg: Any) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("scenario must be a JSON object")
    kind = cfg.get("kind")
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown or missing kind {kind!r}; expected one of {', '.join(KINDS)}")
    try:
        jsonschema.validate(cfg, SCHEMAS[kind])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


# ----------------------------------------------------------------------------
# Output helpers


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class Result:
    summary: dict
    files: dict[str, Callable[[Path], None]]
    exit_code: int = EXIT_OK


# ----------------------------------------------------------------------------
# Preparation helpers (raise ConfigError)


def _guard(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ej.ParseError, ej.ExprError, AdmissibilityError, ParametrizationError, fl.FluidError, sk.SkateError, MultiplierError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _space(cfg) -> ej.Space:
    s = cfg["space"]
    return _guard(ej.Space, s["base_dim"], tuple(s["fields"]), tuple(s.get("params", ())))


def _bind(cfg, space: ej.Space) -> dict[str, float]:
    vals = dict(cfg.get("param_values", {}))
    missing = [p for p in space.param_names if p not in vals]
    if missing:
        raise ConfigError(f"param_values missing {missing}")
    return vals


def _exprs(items, space):
    return tuple(_guard(ej.parse, s, space) for s in items)


def _rng(cfg) -> Xorshift:
    return Xorshift(cfg.get("seed", 0))


# ----------------------------------------------------------------------------
# Skate


def _skate_setup(cfg):
    p = cfg["params"]
    params = _guard(sk.SkateParams, p["m"], p["I"], p["geff"])
    init = _guard(sk.MechState.from_list, cfg["init"])
    _guard(sk._steps, cfg["dt"], cfg["T"])
    return params, init


def _skate_summary(traj: sk.Trajectory, cfg) -> dict:
    out = {
        "method": traj.method,
        "stop_reason": traj.stop_reason,
        "samples": len(traj),
        "t_final": traj.t[-1],
        "energy_drift": traj.energy_drift(),
        "max_phi_residual": float(np.max(np.abs(traj.phi_residual))),
    }
    if traj.method == sk.NH:
        th0, w = traj.q[0, 2], traj.v[0, 2]
        out["theta_linearity"] = float(np.max(np.abs(traj.q[:, 2] - th0 - w * (traj.t - traj.t[0]))))
    else:
        out["min_abs_locus"] = float(np.min(np.abs(traj.locus)))
    if len(traj) >= 5:
        jets = sk.jets_from_differences(traj)
        out["max_equation_residual"] = float(np.max(np.abs(sk.equation_residuals(traj, jets))))
        if traj.method == sk.VAK:
            out["max_reduced_residual"] = float(np.max(np.abs(sk.reduced_vak_residual(traj, jets))))
    return out


def prepare_skate(cfg) -> Callable[[], Result]:
    method = sk.NH if cfg["kind"] == "skate-nh" else sk.VAK
    params, init = _skate_setup(cfg)
    if method == sk.VAK and init.lam is None:
        raise ConfigError("init needs a seventh entry lambda0 for the vakonomic method")
    if abs(init.phi) > sk.ADMISSIBLE_TOL:
        raise ConfigError(f"initial state violates the blade constraint (|Phi| = {abs(init.phi):.3e})")
    oracle = cfg.get("oracle")
    if oracle and method != sk.NH:
        raise ConfigError("closed-form oracles exist for the nonholonomic method only")
    if oracle == "circle" and (params.g_eff != 0 or init.v[2] == 0):
        raise ConfigError("the circle oracle needs geff = 0 and a nonzero omega")
    if oracle == "line" and init.v[2] != 0:
        raise ConfigError("the straight-line oracle needs omega = 0")
    conv = cfg.get("convergence")
    if conv:
        for dt in conv["dts"]:
            _guard(sk._steps, dt, conv.get("T", cfg["T"]))
    singular_tol = cfg.get("singular_tol", sk.SINGULAR_TOL)

    def integrate(dt, T):
        if method == sk.NH:
            return sk.integrate_nh(params, init, dt, T)
        return sk.integrate_vak(params, init, dt, T, singular_tol=singular_tol)

    def run() -> Result:
        traj = integrate(cfg["dt"], cfg["T"])
        summary = {"name": cfg["name"], "kind": cfg["kind"], **_skate_summary(traj, cfg)}
        if oracle == "line":
            ref = sk.straight_line(params, init, traj.t)
            th = init.q[2]
            v = traj.v[:, 0] * math.cos(th) + traj.v[:, 1] * math.sin(th)
            pos = max(np.max(np.abs(traj.q[:, 0] - ref["x"])), np.max(np.abs(traj.q[:, 1] - ref["y"])))
            summary["oracle"] = {
                "kind": "line",
                "speed_rel_err": float(np.max(np.abs(v - ref["v"])) / np.max(np.abs(ref["v"]))),
                "position_sup_err": float(pos),
            }
        elif oracle == "circle":
            ref = sk.circle(init, traj.t)
            err = np.max(np.hypot(traj.q[:, 0] - ref["x"], traj.q[:, 1] - ref["y"]))
            cx, cy = ref["center"]
            radius_err = np.max(np.abs(np.hypot(traj.q[:, 0] - cx, traj.q[:, 1] - cy) - ref["radius"]))
            summary["oracle"] = {"kind": "circle", "radius": ref["radius"], "sup_err": float(err), "radius_err": float(radius_err)}
        if conv:
            T = conv.get("T", cfg["T"])
            runs = [integrate(dt, T) for dt in conv["dts"]]
            drifts = [r.energy_drift() for r in runs]
            summary["convergence"] = {
                "T": T,
                "dts": conv["dts"],
                "drifts": drifts,
                "ratios": [drifts[i] / drifts[i + 1] if drifts[i + 1] > 0 else None for i in range(len(drifts) - 1)],
                "stop_reasons": [r.stop_reason for r in runs],
            }
        if "first_variation" in cfg:
            summary["first_variation"] = sk.first_variation_check(traj, tuple(cfg["first_variation"]["window"])).as_dict()
        code = EXIT_SINGULAR if traj.stop_reason == "singular_locus" else EXIT_OK
        return Result(summary, {"traj.csv": traj.to_csv}, code)

    return run


def prepare_compare(cfg) -> Callable[[], Result]:
    params, init = _skate_setup(cfg)
    if init.lam is None:
        raise ConfigError("init needs a seventh entry lambda0")
    if abs(init.phi) > sk.ADMISSIBLE_TOL:
        raise ConfigError("initial state violates the blade constraint")
    threshold = cfg.get("threshold", 1e-3)

    def run() -> Result:
        a = sk.integrate_nh(params, init, cfg["dt"], cfg["T"])
        b = sk.integrate_vak(params, init, cfg["dt"], cfg["T"])
        rep = sk.compare_trajectories(a, b, threshold, truncate=True)
        summary = {
            "name": cfg["name"],
            "kind": cfg["kind"],
            "nh": _skate_summary(a, cfg),
            "vak": _skate_summary(b, cfg),
            "divergence": rep.as_dict(),
            "compared_until": b.t[rep.samples - 1],
        }
        code = EXIT_SINGULAR if b.stop_reason == "singular_locus" else EXIT_OK
        return Result(summary, {"traj_nh.csv": a.to_csv, "traj_vak.csv": b.to_csv}, code)

    return run


# ----------------------------------------------------------------------------
# Fluid


def _fluid_points(cfg, rng: Xorshift, default: int = 10) -> np.ndarray:
    spec = cfg.get("points", {"random": default})
    if isinstance(spec, list):
        pts = np.asarray(spec, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ConfigError("points need 4 coordinates each")
        return pts
    low = np.asarray(spec.get("low", [-1.0] * 4), dtype=float)
    high = np.asarray(spec.get("high", [1.0] * 4), dtype=float)
    if low.shape != (4,) or high.shape != (4,):
        raise ConfigError("points.low and points.high need 4 entries")
    return np.array([[rng.uniform(low[k], high[k]) for k in range(4)] for _ in range(spec["random"])])


def prepare_fluid(cfg) -> Callable[[], Result]:
    check = cfg["check"]
    params = dict(cfg.get("params", {}))
    space = fl.fluid_space(tuple(sorted(params)))
    rng = _rng(cfg)
    metric_cfg = cfg.get("metric", "minkowski")
    metric = fl.Metric.minkowski(space) if metric_cfg == "minkowski" else _guard(fl.Metric, space, metric_cfg)
    eos = cfg.get("eos", "0")
    random_J = cfg["J"] == "random"
    field = None if random_J else _guard(fl.FluidField, space, tuple(cfg["J"]), eos)
    if random_J and check not in ("liedrag", "chetaev"):
        raise ConfigError("J = 'random' is only supported by the liedrag and chetaev checks")
    box = cfg.get("box")
    X_cfg = cfg.get("X")
    X = None
    if isinstance(X_cfg, list):
        X = tuple(_guard(ej.parse, s, space) for s in X_cfg)
        if any(c.jets() for c in X):
            raise ConfigError("X may depend on the base coordinates only")
    elif isinstance(X_cfg, dict):
        if box is None:
            raise ConfigError("a bump X needs a box")
        b = X_cfg["bump"]
        X = tuple(ej.parse(s, space) for s in fl.bump_vector(box, b.get("component", 1), b.get("amplitude", 1.0), b.get("power", 3)))
    if check == "variation" and (X is None or box is None):
        raise ConfigError("the variation check needs X and box")
    if check == "liedrag" and X is None and X_cfg != "random":
        raise ConfigError("the liedrag check needs X")
    pts = _fluid_points(cfg, rng) if check not in ("twist", "variation") else None
    tol = cfg.get("tol", 1e-9)
    expect = cfg.get("expect", "zero")

    def verdict(values) -> dict:
        worst = float(np.max(np.abs(values), initial=0.0))
        ok = worst <= tol if expect == "zero" else float(np.min(np.abs(values))) > tol
        return {"max_abs": worst, "min_abs": float(np.min(np.abs(values), initial=np.inf)), "expect": expect, "tol": tol, "passed": bool(ok)}

    def run() -> Result:
        rep: dict[str, Any] = {"name": cfg["name"], "kind": cfg["kind"], "check": check}
        if check == "state":
            states = [fl.extract_state(field, metric, p, params) for p in pts]
            rep["points"] = [
                {"x": p, "rho": s.rho, "u_lower": s.u_lower, "P": s.P, "mu": s.mu, "normalization": s.normalization()}
                for p, s in zip(pts, states)
            ]
            norm = np.array([s.normalization() + 1.0 for s in states])
            rep["normalization"] = {"max_abs_error": float(np.max(np.abs(norm))), "passed": bool(np.max(np.abs(norm)) <= 1e-10)}
        elif check == "continuity":
            vals = fl.continuity_residual(field, pts, params)
            rep["points"] = [{"x": p, "residual": v} for p, v in zip(pts, vals)]
            rep["verdict"] = verdict(vals)
        elif check == "euler":
            R = fl.euler_residual(field, metric, pts, params)
            rep["points"] = [{"x": p, "residual": r} for p, r in zip(pts, R)]
            rep["verdict"] = verdict(np.max(np.abs(R), axis=1))
            po = cfg.get("pressure_oracle")
            if po:
                c, h = po["component"], po.get("h", 1e-5)
                e = np.zeros(4)
                e[c] = h
                fd = np.array([(fl.pressure(field, metric, p + e, params) - fl.pressure(field, metric, p - e, params))[0] / (2 * h) for p in pts])
                rel = np.abs(R[:, c] - fd) / np.maximum(np.abs(fd), 1e-300)
                rel_tol = po.get("rel_tol", 1e-6)
                rep["pressure_oracle"] = {"component": c, "h": h, "max_rel_err": float(np.max(rel)), "rel_tol": rel_tol, "passed": bool(np.max(rel) <= rel_tol)}
        elif check == "variation":
            n = cfg.get("quadrature", 16)
            dS = fl.fluid_first_variation(field, metric, X, box, n, params)
            pair = fl.residual_pairing(field, metric, X, box, n, params)
            rel_tol = cfg.get("rel_tol", 1e-3)
            denom = abs(pair)
            rel = abs(dS + pair) / denom if denom > 0 else (0.0 if dS == 0 else math.inf)
            ok = abs(dS + pair) <= tol if expect == "zero" and denom <= tol else rel <= rel_tol
            rep["variation"] = {
                "quadrature": n,
                "first_variation": dS,
                "residual_pairing": pair,
                "rel_diff": rel if math.isfinite(rel) else None,
                "rel_tol": rel_tol,
                "passed": bool(ok),
            }
        elif check == "chetaev":
            S = fl.continuity_constraint(space)
            points = [random_jet_point(space, rng) for _ in range(len(pts))]
            rep["triviality"] = fl.chetaev_triviality(S, points, params).as_dict()
            if cfg.get("control", False):
                ctrl = ConstraintSet(space, (space.jet(0),))
                rep["control"] = fl.chetaev_triviality(ctrl, points[:1], params).as_dict()
        elif check == "liedrag":
            trials = cfg.get("trials", 1)
            worst, cont = [], []
            for _ in range(trials):
                f = fl.random_divergence_free(rng) if random_J else field
                Xv = fl.random_vector(rng) if X_cfg == "random" else X
                worst.append(float(np.max(np.abs(fl.lie_drag_divergence(f, Xv, pts, params)))))
                cont.append(float(np.max(np.abs(fl.continuity_residual(f, pts, params)))))
            rep["liedrag"] = {"trials": trials, "points": len(pts), "max_divergence": max(worst), "max_continuity": max(cont)}
            rep["verdict"] = verdict(np.array(worst))
        elif check == "twist":
            rep["twist"] = fl.twist_counterexample().as_dict()
        return Result(rep, {})

    return run


# ----------------------------------------------------------------------------
# Checks on general spaces


def prepare_admissibility(cfg) -> Callable[[], Result]:
    space = _space(cfg)
    params = _bind(cfg, space)
    S = _guard(ConstraintSet, space, _exprs(cfg["constraints"], space))
    sigma = _guard(SectionExpr, space, _exprs(cfg["section"], space))
    V = _guard(VerticalField, space, _exprs(cfg["vertical_field"], space)) if "vertical_field" in cfg else None
    pts = cfg["points"]
    tol = cfg.get("tol", 1e-9)

    def run() -> Result:
        records = admissibility_report(S, sigma, pts, params)
        worst = [max(r["residual"] for r in records if r["alpha"] == a) for a in range(S.r)]
        rep = {
            "name": cfg["name"],
            "kind": cfg["kind"],
            "records": records,
            "max_residual": worst,
            "admissible": all(w <= tol for w in worst),
            "tol": tol,
        }
        if V is not None:
            rep["vak_tangency_max"] = float(np.max(np.abs(vak_tangency_residual(S, V, sigma, pts, params))))
            rep["chetaev_max"] = float(np.max(np.abs(chetaev_residual(S, V, sigma, pts, params))))
        return Result(rep, {})

    return run


def prepare_paramcheck(cfg) -> Callable[[], Result]:
    space = _space(cfg)
    params = _bind(cfg, space)
    L = _guard(ej.parse, cfg["lagrangian"], space)
    S = _guard(ConstraintSet, space, _exprs(cfg["constraints"], space))
    pc = cfg["parametrization"]
    P = _guard(Parametrization.build, space, pc["p"], pc.get("p_mu"))
    oracle = cfg.get("oracle")
    locus = _guard(ej.parse, oracle["locus"], space) if oracle and "locus" in oracle else None
    if oracle:
        sysf = nh_system if oracle["system"] == "nh" else vak_system
        elim = _guard(eliminate_multiplier, sysf(L, S), oracle["solve_row"])
    samples = cfg.get("samples", 20)
    tol = cfg.get("tol", 1e-9)
    rng = _rng(cfg)

    def run() -> Result:
        form = assemble_EF(L, P)
        locus_min = oracle.get("locus_min", 1e-3) if oracle else 0.0
        pts = []
        while len(pts) < samples:
            p = random_admissible_point(S, rng, params)
            if locus is not None and abs(float(ej.evaluate(locus, p, params))) < locus_min:
                continue
            pts.append(p)
        checker = check_vak_adapted if cfg["adapted"] == "vak" else check_chetaev_adapted
        adapt = checker(P, S, pts, rng, params, tol=tol)
        split = [splitting_residual(L, P, random_eps(P, rng, p), p, params) for p in pts]
        rep = {
            "name": cfg["name"],
            "kind": cfg["kind"],
            "adaptedness": adapt.as_dict(),
            "splitting": {"max_residual": max(split), "tol": 1e-9, "passed": max(split) <= 1e-9},
        }
        if oracle:
            dphi = [ej.formal_derivative(phi, mu) for phi in S.phis for mu in range(space.m)]
            otol = oracle.get("tol", 1e-8)
            results = [zero_set_agreement(list(form.E) + dphi, list(elim.equations) + dphi, space, p, rng, params) for p in pts]
            rep["oracle"] = {
                "system": oracle["system"],
                "solve_row": oracle["solve_row"],
                "validity": ej.to_source(elim.validity, space),
                "samples": len(results),
                "max_fit_residual": max(r.fit_residual for r in results),
                "max_on_shell": max(r.on_shell for r in results),
                "max_converse": max(r.converse for r in results),
                "max_coefficient": max(r.coefficient_norm for r in results),
                "tol": otol,
                "passed": all(r.ok(otol) for r in results),
            }
        if cfg.get("emit_equations"):
            rep["equations"] = form.sources()
        return Result(rep, {})

    return run


def prepare_equivalence(cfg) -> Callable[[], Result]:
    space = _space(cfg)
    params = _bind(cfg, space)
    if space.m != 1:
        raise ConfigError("the equivalence check needs base_dim = 1")
    f = _guard(ej.parse, cfg["f"], space)
    if f.order != 0:
        raise ConfigError("f must depend on x and y only")
    sigma = _guard(SectionExpr, space, _exprs(cfg["section"], space))
    interval = tuple(cfg.get("interval", (0.0, 1.0)))
    rng = _rng(cfg)

    def run() -> Result:
        rep = linear_integrable_equivalence_check(
            f,
            sigma,
            cfg["trials"],
            interval,
            rng,
            params,
            cfg.get("samples", 41),
            cfg.get("tol_a", 1e-9),
            cfg.get("tol_b", 1e-7),
        )
        return Result({"name": cfg["name"], "kind": cfg["kind"], "report": rep.as_dict()}, {})

    return run


def prepare_engine(cfg) -> Callable[[], Result]:
    space = _space(cfg)
    rng = _rng(cfg)
    depth = cfg.get("depth", 6)
    rel_tol = cfg.get("rel_tol", 1e-5)
    step = cfg.get("step", 1e-5)

    def run() -> Result:
        worst, failures, roundtrip = 0.0, 0, 0.0
        for _ in range(cfg["pairs"]):
            e = random_expr(space, rng, depth)
            p = random_jet_point(space, rng, 3)
            params = random_params(space, rng)
            leaves = sorted(e.jets(), key=lambda j: j.sort_key()) or [space.jet(0)]
            c = rng.choice(leaves)
            sym = ej.evaluate(ej.diff(e, c), p, params)
            fd = central_difference(e, c, p, params, step)
            err = abs(sym - fd) / max(1.0, abs(sym))
            worst = max(worst, err)
            failures += err > rel_tol
            back = ej.parse(ej.to_source(e, space), space)
            v0, v1 = ej.evaluate(e, p, params), ej.evaluate(back, p, params)
            roundtrip = max(roundtrip, abs(v0 - v1) / max(1.0, abs(v0)))
        rep = {
            "name": cfg["name"],
            "kind": cfg["kind"],
            "pairs": cfg["pairs"],
            "max_rel_err": worst,
            "failures": int(failures),
            "rel_tol": rel_tol,
            "max_roundtrip_err": roundtrip,
            "passed": failures == 0 and roundtrip <= 1e-12,
        }
        return Result(rep, {})

    return run


PREPARE = {
    "skate-nh": prepare_skate,
    "skate-vak": prepare_skate,
    "skate-compare": prepare_compare,
    "fluid-check": prepare_fluid,
    "admissibility": prepare_admissibility,
    "paramcheck": prepare_paramcheck,
    "equivalence": prepare_equivalence,
    "engine-check": prepare_engine,
}


def prepare(cfg) -> Callable[[], Result]:
    validate(cfg)
    return PREPARE[cfg["kind"]](cfg)


# ----------------------------------------------------------------------------
# Catalog


def bundled_dir() -> Path:
    return Path(str(resources.files("varicon") / "scenarios"))


def _read(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def list_scenarios(custom_dir: str | os.PathLike | None = None) -> list[dict]:
    """Bundled scenarios plus any ``*.json`` in ``custom_dir``; duplicate names are an error."""
    entries: dict[str, dict] = {}
    dirs = [("bundled", bundled_dir())]
    if custom_dir is not None:
        dirs.append(("custom", Path(custom_dir)))
    for origin, d in dirs:
        if not d.is_dir():
            if origin == "custom":
                raise CatalogError(f"{d} is not a directory")
            continue
        for path in sorted(d.glob("*.json")):
            cfg = _read(path)
            name = cfg.get("name", path.stem)
            if name in entries:
                raise CatalogError(f"duplicate scenario name {name!r}: {entries[name]['path']} and {path}")
            entries[name] = {
                "name": name,
                "kind": cfg.get("kind"),
                "description": cfg.get("description", ""),
                "path": str(path),
                "origin": origin,
            }
    return sorted(entries.values(), key=lambda e: e["name"])


def resolve(ref: str) -> Path:
    path = Path(ref)
    if path.is_file():
        return path
    candidate = bundled_dir() / (ref if ref.endswith(".json") else ref + ".json")
    if candidate.is_file():
        return candidate
    raise ConfigError(f"no scenario file or bundled scenario named {ref!r}")


# ----------------------------------------------------------------------------
# Execution


def execute(cfg: dict, out_dir: Path, overrides: dict | None = None) -> int:
    """Validate, prepare, compute, write. Returns the exit code."""
    if overrides:
        cfg = {**cfg, **overrides}
    try:
        job = prepare(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = job()
    except Exception as exc:  # noqa: BLE001 - every failure past validation is a computation error
        print(f"computation error in {cfg.get('name')}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    out_dir.mkdir(parents=True, exist_ok=True)
    for fname, writer in result.files.items():
        writer(out_dir / fname)
    (out_dir / "summary.json").write_text(dumps(result.summary))
    print(_headline(result.summary, result.exit_code))
    return result.exit_code


def _headline(summary: dict, code: int) -> str:
    status = {EXIT_OK: "ok", EXIT_SINGULAR: "halted at singular locus"}.get(code, str(code))
    return f"{summary.get('name')}: {status}"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("VARICON_THREADS", "1")))
    except ValueError:
        return 1


def _run_one(args) -> int:
    ref, out_root = args
    try:
        path = resolve(ref)
        cfg = _read(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    name = cfg.get("name", path.stem) if isinstance(cfg, dict) else path.stem
    return execute(cfg, Path(out_root) / str(name))


def run_many(refs: list[str], out_root: Path) -> int:
    jobs = [(r, str(out_root)) for r in refs]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_run_one, jobs))
    else:
        codes = [_run_one(j) for j in jobs]
    return max(codes, default=EXIT_OK)


# ----------------------------------------------------------------------------
# argparse front end


def _kv(text: str) -> dict[str, float]:
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="varicon", description="Constrained variational calculus scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("skate", help="integrate the skate (nonholonomic or vakonomic)")
    s.add_argument("--config", help="scenario JSON; flags override its fields")
    s.add_argument("--method", choices=["nh", "vak"])
    s.add_argument("--params", type=_kv, help="m=1,I=1,geff=9.81")
    s.add_argument("--init", type=_floats, help="x,y,theta,vx,vy,omega[,lambda]")
    s.add_argument("--dt", type=float)
    s.add_argument("--T", type=float)
    s.add_argument("--out", default="traj.csv", help="trajectory CSV; summary.json is written next to it")

    f = sub.add_parser("fluid", help="run a fluid check")
    f.add_argument("--config", required=True)
    f.add_argument("--out", default="varicon-out")

    c = sub.add_parser("check", help="admissibility / paramcheck / equivalence / engine-check")
    c.add_argument("--config", required=True)
    c.add_argument("--out", default="varicon-out")

    r = sub.add_parser("run", help="run scenario files or bundled scenario names")
    r.add_argument("scenarios", nargs="*")
    r.add_argument("--all", action="store_true", help="run every bundled scenario")
    r.add_argument("--out", default="varicon-out", help="one sub-directory per scenario")

    lst = sub.add_parser("list", help="list bundled (and custom) scenarios")
    lst.add_argument("--dir", help="extra directory of scenario files")
    return ap


def _cmd_skate(args) -> int:
    cfg: dict = {}
    if args.config:
        try:
            cfg = _read(resolve(args.config))
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.method:
        cfg["kind"] = "skate-" + args.method
    if args.params is not None:
        p = args.params
        cfg["params"] = {"m": p.get("m", 1.0), "I": p.get("I", 1.0), "geff": p.get("geff", p.get("g_eff", 9.81))}
    for key in ("init", "dt", "T"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    cfg.setdefault("name", "skate")
    if cfg.get("kind") not in ("skate-nh", "skate-vak"):
        print("config error: choose --method nh|vak (or a skate-nh/skate-vak config)", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        job = prepare(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = job()
    except Exception as exc:  # noqa: BLE001
        print(f"computation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    result.files["traj.csv"](out)
    (out.parent / "summary.json").write_text(dumps(result.summary))
    print(_headline(result.summary, result.exit_code))
    return result.exit_code


def _cmd_config(args, kinds) -> int:
    try:
        cfg = _read(resolve(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(cfg, dict) or cfg.get("kind") not in kinds:
        print(f"config error: this subcommand runs kinds {', '.join(kinds)}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, Path(args.out) / str(cfg.get("name", "scenario")))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "skate":
        return _cmd_skate(args)
    if args.command == "fluid":
        return _cmd_config(args, ("fluid-check",))
    if args.command == "check":
        return _cmd_config(args, ("admissibility", "paramcheck", "equivalence", "engine-check"))
    if args.command == "list":
        try:
            entries = list_scenarios(args.dir)
        except (CatalogError, ConfigError) as exc:
            print(f"catalog error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for e in entries:
            print(f"{e['name']:<28} {e['kind'] or '?':<14} {e['description']}")
        return EXIT_OK
    refs = list(args.scenarios)
    if args.all:
        refs += [e["path"] for e in list_scenarios()]
    if not refs:
        print("nothing to run: give scenario files/names or --all", file=sys.stderr)
        return EXIT_CONFIG
    return run_many(refs, Path(args.out))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
