"""Acceptance criteria 1-12, one recorded pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed in the
terminal summary. ``python3 tests/test_acceptance.py`` prints them directly.
"""

from __future__ import annotations

import json
import math
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from varicon import cli
from varicon import exprjet as ej
from varicon import fluid as fl
from varicon import skate as sk
from varicon.paramvar import random_eps, splitting_residual
from varicon.admissibility import random_admissible_point
from varicon.rng import Xorshift

CRITERIA = {
    1: "NH skate closed forms",
    2: "theta'' = 0 exactness",
    3: "energy drift ratio 16 +- 4 on halving dt",
    4: "constraint drift in bundled skate runs",
    5: "triple-derivation agreement",
    6: "vak vs NH divergence",
    7: "linear integrable equivalence",
    8: "fluid Chetaev triviality",
    9: "fluid solutions and pressure oracle",
    10: "Lie-drag adaptedness",
    11: "first-variation consistency",
    12: "symbolic engine",
}

RESULTS: dict[int, list[tuple[bool, str]]] = defaultdict(list)


def record(n: int, ok: bool, detail: str) -> bool:
    RESULTS[n].append((bool(ok), detail))
    return bool(ok)


def lines() -> list[str]:
    out = []
    for n, title in CRITERIA.items():
        parts = RESULTS.get(n)
        if not parts:
            out.append(f"criterion {n:2d} [{title}]: NOT RUN")
            continue
        ok = all(p for p, _ in parts)
        out.append(f"criterion {n:2d} [{title}]: {'PASS' if ok else 'FAIL'} | " + "; ".join(d for _, d in parts))
    return out


_cache: dict[str, dict] = {}


def scenario(name: str, tmp_root: Path) -> tuple[int, dict, Path]:
    if name not in _cache:
        cfg = json.loads(cli.resolve(name).read_text())
        out = tmp_root / name
        code = cli.execute(cfg, out)
        _cache[name] = {"code": code, "summary": json.loads((out / "summary.json").read_text()), "dir": out}
    c = _cache[name]
    return c["code"], c["summary"], c["dir"]


@pytest.fixture(scope="module")
def root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _init(theta, v, omega, lam=None):
    vals = [0.0, 0.0, theta, v * math.cos(theta), v * math.sin(theta), omega]
    return sk.MechState.from_list(vals + ([lam] if lam is not None else []))


# ---------------------------------------------------------------------------


def test_criterion_01_closed_forms():
    p = sk.SkateParams(1.0, 1.0, 9.81)
    th0, v0 = 0.3, 2.0
    start = time.perf_counter()
    traj = sk.integrate_nh(p, _init(th0, v0, 0.0), 1e-3, 10.0)
    runtime = time.perf_counter() - start
    # independent closed form: uniform deceleration along the fixed blade direction
    v_exact = v0 - 9.81 * math.sin(th0) * traj.t
    v_num = traj.v[:, 0] * math.cos(th0) + traj.v[:, 1] * math.sin(th0)
    rel = float(np.max(np.abs(v_num - v_exact)) / np.max(np.abs(v_exact)))

    w, v = 0.7, 1.5
    circ = sk.integrate_nh(sk.SkateParams(1.0, 1.0, 0.0), _init(0.2, v, w), 1e-3, 10.0)
    th = 0.2 + w * circ.t
    cx, cy = -v / w * math.sin(0.2), v / w * math.cos(0.2)
    x_exact, y_exact = cx + v / w * np.sin(th), cy - v / w * np.cos(th)
    sup = float(np.max(np.hypot(circ.q[:, 0] - x_exact, circ.q[:, 1] - y_exact)))

    ok = record(1, rel <= 1e-8 and runtime < 1.0 and sup <= 1e-6, f"line rel err {rel:.1e} in {runtime:.2f}s, circle sup err {sup:.1e}")
    assert ok


def test_criterion_02_theta_linear(root):
    worst = 0.0
    for name in ("skate_nh_incline", "skate_nh_circle", "skate_nh_turning"):
        _, s, _ = scenario(name, root)
        worst = max(worst, s["theta_linearity"])
    assert record(2, worst <= 1e-10, f"max |theta - theta0 - omega t| = {worst:.1e}")


def _ratios(method, params, init, dts, T=10.0):
    drifts = [sk.integrate(method, params, init, dt, T).energy_drift() for dt in dts]
    return drifts, [drifts[i] / drifts[i + 1] for i in range(len(drifts) - 1)]


def test_criterion_03_vak_energy_order():
    _, r = _ratios(sk.VAK, sk.SkateParams(1.0, 20.0, 0.0), _init(0.4, 1.5, 0.05, -0.1), [0.05, 0.025, 0.0125])
    ok = all(12.0 <= x <= 20.0 for x in r)
    record(3, ok, "vak ratios " + ", ".join(f"{x:.2f}" for x in r))
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="the prescribed reduced NH scheme superconverges: drift ratio 32, above the 16 +- 4 window",
)
def test_criterion_03_nh_energy_order():
    _, r = _ratios(sk.NH, sk.SkateParams(1.0, 1.0, 9.81), _init(0.3, 2.0, 0.8), [0.1, 0.05, 0.025])
    ok = all(12.0 <= x <= 20.0 for x in r)
    record(3, ok, "nh ratios " + ", ".join(f"{x:.2f}" for x in r) + " (fifth order, see ledger)")
    assert ok


def test_criterion_03_nh_drift_bounded_by_dt4():
    # the weaker property the literal window is meant to witness: drift <= C dt^4
    drifts, r = _ratios(sk.NH, sk.SkateParams(1.0, 1.0, 9.81), _init(0.3, 2.0, 0.8), [0.1, 0.05, 0.025])
    C = [d / dt**4 for d, dt in zip(drifts, [0.1, 0.05, 0.025])]
    assert all(x >= 12.0 for x in r)
    assert C[-1] <= C[0]


def test_criterion_04_constraint_drift(root):
    worst, names = 0.0, []
    for e in cli.list_scenarios():
        if not e["kind"].startswith("skate"):
            continue
        _, s, _ = scenario(e["name"], root)
        parts = [s] if "max_phi_residual" in s else [s["nh"], s["vak"]]
        worst = max([worst] + [p["max_phi_residual"] for p in parts])
        names.append(e["name"])
    assert record(4, worst <= 1e-6, f"max |Phi| = {worst:.1e} over {len(names)} bundled skate runs")


def test_criterion_05_triple_derivation(root):
    details, ok = [], True
    for name in ("paramcheck_skate_nh", "paramcheck_skate_vak"):
        code, s, _ = scenario(name, root)
        o = s["oracle"]
        good = code == 0 and o["passed"] and o["samples"] == 20 and o["tol"] <= 1e-8 and s["adaptedness"]["adapted"]
        ok &= good
        worst = max(o["max_fit_residual"], o["max_on_shell"], o["max_converse"])
        details.append(f"{o['system']} worst {worst:.1e}")
    assert record(5, ok, ", ".join(details))


def test_criterion_06_divergence(root):
    code, s, _ = scenario("skate_compare", root)
    d = s["divergence"]
    exceed = {k: v for k, v in d["first_exceed"].items() if v is not None}
    first = min(exceed.values()) if exceed else math.inf
    ok = code == 0 and d["diverged"] and first <= 10.0
    assert record(6, ok, f"first exceedance of 1e-3 at t = {first:.3f} ({min(exceed, key=exceed.get)})")


def test_criterion_07_linear_equivalence(root):
    _, s, _ = scenario("equivalence_linear", root)
    r = s["report"]
    ok = r["passed"] and r["trials"] == 100 and r["max_chetaev_to_vak"] <= 1e-9 and r["max_vak_to_chetaev"] <= 1e-7
    assert record(7, ok, f"(a) {r['max_chetaev_to_vak']:.1e}, (b) {r['max_vak_to_chetaev']:.1e} over 100 trials")


def test_criterion_08_fluid_chetaev(root):
    _, s, _ = scenario("fluid_chetaev", root)
    t = s["triviality"]
    ok = t["points"] == 50 and t["max_kernel_dim"] == 0 and t["every_admissible_section_chetaev_critical"] and t["verdict"] == fl.NON_PHYSICAL
    assert record(8, ok, f"kernel dim {t['max_kernel_dim']} at {t['points']} points, verdict flagged")


def test_criterion_09_fluid_solutions(root):
    parts, ok = [], True
    for name in ("fluid_static", "fluid_boosted_dust"):
        _, s, _ = scenario(name, root)
        n = len(s["points"])
        good = n == 50 and s["verdict"]["max_abs"] <= 1e-9
        ok &= good
        parts.append(f"{name} {s['verdict']['max_abs']:.1e}")
    _, s, _ = scenario("fluid_pressure_gradient", root)
    po = s["pressure_oracle"]
    ok &= len(s["points"]) == 50 and s["verdict"]["min_abs"] > 1e-3 and po["max_rel_err"] <= 1e-6
    parts.append(f"perturbed min {s['verdict']['min_abs']:.2f}, FD rel {po['max_rel_err']:.1e}")
    assert record(9, ok, ", ".join(parts))


def test_criterion_10_liedrag(root):
    _, s, _ = scenario("fluid_liedrag", root)
    ok = s["liedrag"]["points"] == 50 and s["verdict"]["max_abs"] <= 1e-9
    assert record(10, ok, f"max divergence {s['verdict']['max_abs']:.1e} at 50 points x {s['liedrag']['trials']} trials")


def test_criterion_11_first_variation(root):
    parts, ok = [], True
    for name in ("skate_nh_turning", "skate_vak_level"):
        _, s, _ = scenario(name, root)
        fv = s["first_variation"]
        ok &= fv["passed"] and abs(fv["value"]) <= fv["bound"]
        parts.append(f"{name} |dS| {abs(fv['value']):.1e} <= {fv['bound']:.1e}")
    _, s, _ = scenario("fluid_variation", root)
    v = s["variation"]
    ok &= v["rel_diff"] <= 1e-3
    parts.append(f"fluid rel {v['rel_diff']:.1e}")
    assert record(11, ok, ", ".join(parts))


def test_criterion_12_engine(root):
    _, s, _ = scenario("engine_check", root)
    sp = sk.skate_space()
    rng = Xorshift(5)
    params = sk.SkateParams().bindings()
    L = sk.lagrangian()
    split = 0.0
    for P in (sk.nh_parametrization(), sk.vak_parametrization()):
        for _ in range(20):
            p = random_admissible_point(sk.constraints(), rng, params)
            if abs(float(ej.evaluate(sk.locus(), p, params))) < 1e-3:
                continue
            split = max(split, splitting_residual(L, P, random_eps(P, rng, p), p, params))
    ok = s["pairs"] == 1000 and s["failures"] == 0 and s["max_rel_err"] <= 1e-5 and split <= 1e-9
    assert record(12, ok, f"diff vs FD max rel {s['max_rel_err']:.1e} over 1000 pairs, splitting {split:.1e}")


if __name__ == "__main__":  # pragma: no cover
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
