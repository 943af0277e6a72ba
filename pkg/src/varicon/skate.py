"""Skate (knife edge) on an inclined plane under both prescriptions.

Coordinates ``(x, y, theta)``; the blade forbids sideways sliding,
``Phi = xdot sin(theta) - ydot cos(theta) = 0``. The nonholonomic motion is
integrated in reduced form (speed ``v`` along the blade), the vakonomic
motion through the multiplier system with a dynamical ``lambda``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import exprjet as ej
from .admissibility import ConstraintSet
from .exprjet import Expr, JetPoint, Space
from .multiplier import (
    MultiplierSystem,
    eliminate_multiplier,
    mechanics_solvers,
    nh_system,
    vak_system,
)
from .paramvar import (
    Parametrization,
    apply_parametrization,
    assemble_EF,
    discrete_first_variation,
    integrate_expr,
    richardson,
    variation_integrand,
)

LAGRANGIAN = "m/2*(d(x,0)^2 + d(y,0)^2) + I/2*d(theta,0)^2 - m*geff*y"
CONSTRAINT = "d(x,0)*sin(theta) - d(y,0)*cos(theta)"
LOCUS = "d(x,0)*cos(theta) + d(y,0)*sin(theta)"

ADMISSIBLE_TOL = 1e-10
SINGULAR_TOL = 1e-8

NH = "nh"
VAK = "vak"


class SkateError(Exception):
    pass


@dataclass(frozen=True)
class SkateParams:
    m: float = 1.0
    I: float = 1.0
    g_eff: float = 9.81

    def __post_init__(self):
        for name in ("m", "I"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise SkateError(f"{name} must be positive, got {v}")
        # a level plane (g_eff = 0) is allowed: it is the circle scenario
        if not (math.isfinite(self.g_eff) and self.g_eff >= 0):
            raise SkateError(f"g_eff must be non-negative, got {self.g_eff}")

    def bindings(self) -> dict[str, float]:
        return {"m": self.m, "I": self.I, "geff": self.g_eff}


@lru_cache(maxsize=None)
def skate_space() -> Space:
    return Space(1, ("x", "y", "theta"), ("m", "I", "geff"))


def lagrangian() -> Expr:
    return ej.parse(LAGRANGIAN, skate_space())


def constraints() -> ConstraintSet:
    return ConstraintSet(skate_space(), (CONSTRAINT,))


def locus() -> Expr:
    """``cos(theta) xdot + sin(theta) ydot``: where the vakonomic reduction breaks down."""
    return ej.parse(LOCUS, skate_space())


def nh_parametrization() -> Parametrization:
    """``(cos(theta) W1, sin(theta) W1, W2)``, Chetaev-adapted."""
    return Parametrization.build(skate_space(), [["cos(theta)", "0"], ["sin(theta)", "0"], ["0", "1"]])


def _vak_like(theta_row) -> Parametrization:
    sp = skate_space()
    zero = [["0"], ["0"]]
    return Parametrization(sp, [["1", "0"], ["0", "1"], ["0", "0"]], [zero, zero, theta_row])


def vak_parametrization() -> Parametrization:
    """Free ``(Vx, Vy)`` with ``V_theta = -(sin(theta) Vx' - cos(theta) Vy') / (cos(theta) xdot + sin(theta) ydot)``.

    This is the solution of the tangency condition for ``V_theta``, hence
    vak-adapted away from the locus.
    """
    den = f"({LOCUS})"
    return _vak_like([[f"-sin(theta)/{den}"], [f"cos(theta)/{den}"]])


def swapped_vak_parametrization() -> Parametrization:
    """The variant with the opposite sign and denominator ``ydot cos(theta) + xdot sin(theta)``.

    Kept as a reference: it is *not* vak-adapted.
    """
    den = "(d(y,0)*cos(theta) + d(x,0)*sin(theta))"
    return _vak_like([[f"sin(theta)/{den}"], [f"-cos(theta)/{den}"]])


def reduced_vak_equations(denominator: Expr | str | None = None) -> tuple[Expr, Expr]:
    """``m xdd - I (thetadd sin/den)' `` and ``m ydd + m g + I (thetadd cos/den)'``.

    With ``den = -(cos(theta) xdot + sin(theta) ydot)`` (the default) these
    are minus the engine's eliminated vakonomic equations. Passing
    ``"d(y,0)*cos(theta) + d(x,0)*sin(theta)"`` gives the swapped-denominator variant.
    """
    sp = skate_space()
    if denominator is None:
        den = ej.neg(locus())
    elif isinstance(denominator, str):
        den = ej.parse(denominator, sp)
    else:
        den = denominator
    x, y, th = (sp.jet(i) for i in range(3))
    xdd, ydd, thdd = (sp.jet(i, 0, 0) for i in range(3))
    m, I, g = (ej.Param(p) for p in ("m", "I", "geff"))
    z1 = m * xdd - I * ej.formal_derivative(thdd * ej.sin(th) / den, 0)
    z2 = m * ydd + m * g + I * ej.formal_derivative(thdd * ej.cos(th) / den, 0)
    return z1, z2


@lru_cache(maxsize=None)
def systems() -> dict[str, MultiplierSystem]:
    L, S = lagrangian(), constraints()
    return {NH: nh_system(L, S), VAK: vak_system(L, S)}


@lru_cache(maxsize=None)
def eliminated(method: str):
    """Multiplier-free equations: NH solves the x-row, VAK the theta-row."""
    return eliminate_multiplier(systems()[method], 0 if method == NH else 2)


# ----------------------------------------------------------------------------
# States and trajectories


@dataclass(frozen=True)
class MechState:
    t: float
    q: tuple[float, float, float]
    v: tuple[float, float, float]
    lam: Optional[float] = None

    def __post_init__(self):
        q = tuple(float(a) for a in self.q)
        v = tuple(float(a) for a in self.v)
        if len(q) != 3 or len(v) != 3:
            raise SkateError("q and v need three components (x, y, theta)")
        if not all(math.isfinite(a) for a in (self.t, *q, *v)):
            raise SkateError("state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)
        if self.lam is not None:
            object.__setattr__(self, "lam", float(self.lam))

    @classmethod
    def from_list(cls, values, t: float = 0.0) -> "MechState":
        """``[x, y, theta, vx, vy, omega]`` with an optional trailing lambda."""
        values = [float(v) for v in values]
        if len(values) not in (6, 7):
            raise SkateError("initial state needs x,y,theta,vx,vy,omega[,lambda]")
        return cls(t, tuple(values[:3]), tuple(values[3:6]), values[6] if len(values) == 7 else None)

    @property
    def phi(self) -> float:
        th = self.q[2]
        return self.v[0] * math.sin(th) - self.v[1] * math.cos(th)

    @property
    def locus(self) -> float:
        th = self.q[2]
        return self.v[0] * math.cos(th) + self.v[1] * math.sin(th)


def energy(params: SkateParams, y, vx, vy, omega):
    return 0.5 * params.m * (vx * vx + vy * vy) + 0.5 * params.I * omega * omega + params.m * params.g_eff * y


@dataclass
class Trajectory:
    method: str
    params: SkateParams
    dt: float
    t: np.ndarray  # (N,)
    q: np.ndarray  # (N, 3)
    v: np.ndarray  # (N, 3)
    lam: np.ndarray  # (N,), nan for the nonholonomic method
    stop_reason: str = "horizon"

    def __len__(self) -> int:
        return len(self.t)

    @property
    def halted(self) -> bool:
        return self.stop_reason != "horizon"

    @property
    def phi_residual(self) -> np.ndarray:
        th = self.q[:, 2]
        return self.v[:, 0] * np.sin(th) - self.v[:, 1] * np.cos(th)

    @property
    def locus(self) -> np.ndarray:
        th = self.q[:, 2]
        return self.v[:, 0] * np.cos(th) + self.v[:, 1] * np.sin(th)

    @property
    def energy(self) -> np.ndarray:
        return energy(self.params, self.q[:, 1], self.v[:, 0], self.v[:, 1], self.v[:, 2])

    def energy_drift(self) -> float:
        e = self.energy
        return float(np.max(np.abs(e - e[0])))

    def theta_mod(self) -> np.ndarray:
        """Heading reduced to ``[-pi, pi)``; ``q[:, 2]`` stays unwrapped."""
        return (self.q[:, 2] + np.pi) % (2 * np.pi) - np.pi

    def state(self, k: int) -> MechState:
        lam = None if np.isnan(self.lam[k]) else float(self.lam[k])
        return MechState(float(self.t[k]), tuple(self.q[k]), tuple(self.v[k]), lam)

    def rows(self):
        phi, en = self.phi_residual, self.energy
        for k in range(len(self.t)):
            yield [self.t[k], *self.q[k], *self.v[k], self.lam[k], phi[k], en[k]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow(["%.17g" % v for v in row])


CSV_COLUMNS = ("t", "x", "y", "theta", "vx", "vy", "omega", "lambda", "phi_residual", "energy")


def _steps(dt: float, T: float) -> int:
    if not (math.isfinite(dt) and dt > 0):
        raise SkateError(f"dt must be positive, got {dt}")
    if not (math.isfinite(T) and T > 0):
        raise SkateError(f"T must be positive, got {T}")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise SkateError(f"T={T} is not an integer multiple of dt={dt}")
    return n


def _check_admissible(init: MechState, tol: float) -> None:
    if abs(init.phi) > tol:
        raise SkateError(f"initial state violates the blade constraint (|Phi| = {abs(init.phi):.3e} > {tol:g})")


# ----------------------------------------------------------------------------
# Nonholonomic motion


def integrate_nh(params: SkateParams, init: MechState, dt: float, T: float, tol: float = ADMISSIBLE_TOL) -> Trajectory:
    """RK4 on ``x' = v cos, y' = v sin, theta' = omega, v' = -g sin(theta), omega' = 0``."""
    n = _steps(dt, T)
    _check_admissible(init, tol)
    x, y, th = init.q
    c, s = math.cos(th), math.sin(th)
    v = init.v[0] * c + init.v[1] * s
    w = init.v[2]
    g = params.g_eff
    out = np.empty((n + 1, 5))
    out[0] = (x, y, th, v, w)
    h = dt

    for k in range(n):
        # omega is constant, so theta at the stages is exact
        th1 = th
        th2 = th + 0.5 * h * w
        th4 = th + h * w
        c1, s1 = math.cos(th1), math.sin(th1)
        c2, s2 = math.cos(th2), math.sin(th2)
        c4, s4 = math.cos(th4), math.sin(th4)
        kv1 = -g * s1
        kv2 = -g * s2
        kv3 = -g * s2
        kv4 = -g * s4
        v2 = v + 0.5 * h * kv1
        v3 = v + 0.5 * h * kv2
        v4 = v + h * kv3
        x += h / 6 * (v * c1 + 2 * v2 * c2 + 2 * v3 * c2 + v4 * c4)
        y += h / 6 * (v * s1 + 2 * v2 * s2 + 2 * v3 * s2 + v4 * s4)
        v += h / 6 * (kv1 + 2 * kv2 + 2 * kv3 + kv4)
        th = init.q[2] + (k + 1) * h * w
        out[k + 1] = (x, y, th, v, w)

    t = init.t + dt * np.arange(n + 1)
    q = out[:, :3].copy()
    vel = np.column_stack([out[:, 3] * np.cos(out[:, 2]), out[:, 3] * np.sin(out[:, 2]), out[:, 4]])
    return Trajectory(NH, params, dt, t, q, vel, np.full(n + 1, np.nan))


# ----------------------------------------------------------------------------
# Vakonomic motion


def _ext_jets(order: int) -> list[ej.Jet]:
    return [ej.Jet(i, (0,) * k) for k in range(order + 1) for i in range(4)]


class _VakField:
    """Right-hand side of the first-order system in ``(x, y, theta, xdot, ydot, omega, lambda)``."""

    def __init__(self, params: SkateParams):
        first, _ = mechanics_solvers(systems()[VAK], params.bindings())
        # args: x, y, theta, lambda, xdot, ydot, thetadot
        self._f = first.bind([ej.Jet(i, ()) for i in range(4)] + [ej.Jet(i, (0,)) for i in range(3)])

    def __call__(self, z: np.ndarray) -> np.ndarray:
        acc = self._f(z[0], z[1], z[2], z[6], z[3], z[4], z[5])
        return np.array([z[3], z[4], z[5], acc[0], acc[1], acc[2], acc[3]])


def integrate_vak(
    params: SkateParams,
    init: MechState,
    dt: float,
    T: float,
    tol: float = ADMISSIBLE_TOL,
    singular_tol: float = SINGULAR_TOL,
) -> Trajectory:
    """RK4 on the multiplier system with the constraint differentiated once.

    Integration stops (``stop_reason = "singular_locus"``) when
    ``|cos(theta) xdot + sin(theta) ydot|`` drops below ``singular_tol`` or
    changes sign between two samples; the partial trajectory is returned.
    """
    if init.lam is None:
        raise SkateError("the vakonomic method needs an initial multiplier lambda0")
    n = _steps(dt, T)
    _check_admissible(init, tol)
    if abs(init.locus) < singular_tol:
        raise SkateError(f"initial state lies on the singular locus (|D| = {abs(init.locus):.3e})")
    f = _VakField(params)
    z = np.array([*init.q, *init.v, init.lam], dtype=float)
    out = [z]
    d_prev = init.locus
    reason = "horizon"
    h = dt
    for _ in range(n):
        try:
            k1 = f(z)
            k2 = f(z + 0.5 * h * k1)
            k3 = f(z + 0.5 * h * k2)
            k4 = f(z + h * k3)
        except np.linalg.LinAlgError:
            reason = "singular_locus"
            break
        znew = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        d = znew[3] * math.cos(znew[2]) + znew[4] * math.sin(znew[2])
        if not np.all(np.isfinite(znew)):
            reason = "non_finite"
            break
        if abs(d) < singular_tol or d * d_prev < 0:
            reason = "singular_locus"
            break
        z, d_prev = znew, d
        out.append(z)
    arr = np.array(out)
    t = init.t + dt * np.arange(len(arr))
    return Trajectory(VAK, params, dt, t, arr[:, :3].copy(), arr[:, 3:6].copy(), arr[:, 6].copy(), reason)


def integrate(method: str, params: SkateParams, init: MechState, dt: float, T: float) -> Trajectory:
    if method == NH:
        return integrate_nh(params, init, dt, T)
    if method == VAK:
        return integrate_vak(params, init, dt, T)
    raise SkateError(f"unknown method {method!r} (expected 'nh' or 'vak')")


# ----------------------------------------------------------------------------
# Prolongation of sampled trajectories


@dataclass
class TrajectoryJets:
    point: JetPoint  # batched, order 3 over the skate space
    lam: np.ndarray
    lam_dot: np.ndarray
    index: np.ndarray  # sample indices covered


def jets_from_equations(traj: Trajectory) -> TrajectoryJets:
    """Second and third derivatives obtained from the multiplier system at each sample."""
    first, second = mechanics_solvers(systems()[traj.method], traj.params.bindings())
    N = len(traj)
    acc, jerk = np.empty((N, 3)), np.empty((N, 3))
    lam, lam_dot = np.empty(N), np.empty(N)
    for k in range(N):
        vals = {ej.Jet(i, ()): traj.q[k, i] for i in range(3)}
        vals.update({ej.Jet(i, (0,)): traj.v[k, i] for i in range(3)})
        vals[ej.Coord(0)] = traj.t[k]
        if traj.method == VAK:
            vals[ej.Jet(3, ())] = traj.lam[k]
        u = first.solve(_complete(vals, first.known))
        vals.update({ej.Jet(i, (0, 0)): u[i] for i in range(3)})
        vals[first.unknowns[3]] = u[3]
        w = second.solve(_complete(vals, second.known))
        acc[k], jerk[k] = u[:3], w[:3]
        if traj.method == VAK:
            lam[k], lam_dot[k] = traj.lam[k], u[3]
        else:
            lam[k], lam_dot[k] = u[3], w[3]
    point = JetPoint.mechanics(traj.t, traj.q.T, traj.v.T, acc.T, jerk.T)
    return TrajectoryJets(point, lam, lam_dot, np.arange(N))


def _complete(vals: dict, known) -> dict:
    missing = [leaf for leaf in known if leaf not in vals]
    if missing:
        raise SkateError(f"cannot prolong: missing {missing}")
    return vals


def jets_from_differences(traj: Trajectory) -> TrajectoryJets:
    """Accelerations and jerks by fourth-order central differences of the sampled velocities.

    Only interior samples (two away from each end) are covered. This is an
    equation-free prolongation, so residuals of the field equations on it
    measure the integrator rather than the prolongation.
    """
    N, h = len(traj), traj.dt
    if N < 5:
        raise SkateError("need at least 5 samples for difference jets")
    v = traj.v
    idx = np.arange(2, N - 2)
    vm2, vm1, vp1, vp2 = v[idx - 2], v[idx - 1], v[idx + 1], v[idx + 2]
    acc = (vm2 - 8 * vm1 + 8 * vp1 - vp2) / (12 * h)
    jerk = (-vm2 + 16 * vm1 - 30 * v[idx] + 16 * vp1 - vp2) / (12 * h * h)
    point = JetPoint.mechanics(traj.t[idx], traj.q[idx].T, v[idx].T, acc.T, jerk.T)
    lam = traj.lam[idx]
    lam_dot = (traj.lam[idx - 2] - 8 * traj.lam[idx - 1] + 8 * traj.lam[idx + 1] - traj.lam[idx + 2]) / (12 * h)
    return TrajectoryJets(point, lam, lam_dot, idx)


@lru_cache(maxsize=None)
def forms():
    """Bulk coefficients ``E_A`` of the adapted parametrizations, keyed by method."""
    L = lagrangian()
    return {NH: assemble_EF(L, nh_parametrization()), VAK: assemble_EF(L, vak_parametrization())}


def equation_residuals(traj: Trajectory, jets: TrajectoryJets | None = None) -> np.ndarray:
    """``E_A`` of the method's adapted parametrization along the trajectory, shape ``(2, npts)``."""
    jets = jets or jets_from_differences(traj)
    return np.atleast_2d(ej.evaluate_many(forms()[traj.method].E, jets.point, traj.params.bindings()))


def reduced_vak_residual(traj: Trajectory, jets: TrajectoryJets | None = None, denominator=None) -> np.ndarray:
    jets = jets or jets_from_differences(traj)
    return np.atleast_2d(ej.evaluate_many(reduced_vak_equations(denominator), jets.point, traj.params.bindings()))


# ----------------------------------------------------------------------------
# Closed forms


def straight_line(params: SkateParams, init: MechState, t: np.ndarray) -> dict[str, np.ndarray]:
    """Exact nonholonomic motion with ``omega = 0``: uniform deceleration along the blade."""
    th = init.q[2]
    c, s = math.cos(th), math.sin(th)
    v0 = init.v[0] * c + init.v[1] * s
    tau = np.asarray(t, dtype=float) - init.t
    a = -params.g_eff * s
    v = v0 + a * tau
    dist = v0 * tau + 0.5 * a * tau**2
    return {"v": v, "x": init.q[0] + c * dist, "y": init.q[1] + s * dist, "theta": np.full_like(tau, th)}


def circle(init: MechState, t: np.ndarray) -> dict[str, np.ndarray]:
    """Exact nonholonomic motion on a level plane: a circle of radius ``|v/omega|``."""
    th0 = init.q[2]
    w = init.v[2]
    if w == 0:
        raise SkateError("circle needs a nonzero turning rate")
    v = init.v[0] * math.cos(th0) + init.v[1] * math.sin(th0)
    tau = np.asarray(t, dtype=float) - init.t
    th = th0 + w * tau
    r = v / w
    return {
        "x": init.q[0] + r * (np.sin(th) - math.sin(th0)),
        "y": init.q[1] - r * (np.cos(th) - math.cos(th0)),
        "theta": th,
        "radius": abs(r),
        "center": (init.q[0] - r * math.sin(th0), init.q[1] + r * math.cos(th0)),
    }


# ----------------------------------------------------------------------------
# Comparison


COORDINATES = ("x", "y", "theta", "vx", "vy", "omega")


@dataclass
class DivergenceReport:
    threshold: float
    sup: dict[str, float]
    first_exceed: dict[str, Optional[float]]
    samples: int

    @property
    def max(self) -> float:
        return max(self.sup.values())

    @property
    def diverged(self) -> bool:
        return any(t is not None for t in self.first_exceed.values())

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "sup": self.sup,
            "first_exceed": self.first_exceed,
            "samples": self.samples,
            "diverged": self.diverged,
        }


def compare_trajectories(a: Trajectory, b: Trajectory, threshold: float = 1e-3, truncate: bool = False) -> DivergenceReport:
    """Per-coordinate sup distances over the common time grid.

    The grids must agree sample by sample. A trajectory that halted early
    is compared on the shared prefix only when ``truncate`` is set.
    """
    n = min(len(a), len(b))
    if len(a) != len(b) and not truncate:
        raise SkateError(f"grid mismatch: {len(a)} vs {len(b)} samples")
    if not np.allclose(a.t[:n], b.t[:n], rtol=0, atol=1e-9 * max(1.0, float(np.max(np.abs(a.t[:n]))))):
        raise SkateError("grid mismatch: sample times differ")
    A = np.column_stack([a.q[:n], a.v[:n]])
    B = np.column_stack([b.q[:n], b.v[:n]])
    diff = np.abs(A - B)
    sup, first = {}, {}
    for j, name in enumerate(COORDINATES):
        sup[name] = float(np.max(diff[:, j]))
        hit = np.nonzero(diff[:, j] > threshold)[0]
        first[name] = float(a.t[hit[0]]) if hit.size else None
    return DivergenceReport(threshold, sup, first, n)


# ----------------------------------------------------------------------------
# First variation along integrated motions


class TrajectorySection:
    """A sampled trajectory seen as a section: base points must be sample times."""

    def __init__(self, traj: Trajectory, jets: TrajectoryJets):
        self.traj, self.jets = traj, jets
        self._pos = {int(k): j for j, k in enumerate(jets.index)}

    def __call__(self, x) -> JetPoint:
        x = np.asarray(x, dtype=float).reshape(-1)
        tr = self.traj
        k = np.rint((x - tr.t[0]) / tr.dt).astype(int)
        if np.any(np.abs(tr.t[0] + k * tr.dt - x) > 1e-9 * np.maximum(1.0, np.abs(x))):
            raise SkateError("base points are not on the trajectory's time grid")
        try:
            pos = np.array([self._pos[int(i)] for i in k])
        except KeyError as exc:
            raise SkateError(f"sample {exc} has no prolongation") from None
        p = self.jets.point
        return JetPoint(x.reshape(1, -1), p.values[:, pos], p.d1[..., pos], p.d2[..., pos], p.d3[..., pos])


@dataclass
class VariationCheck:
    value: float  # quadrature of the first variation on the finest grid
    richardson: float  # |I(n) - I(2n)| / 3
    residual_bound: float  # quadrature of |E_A eps^A|
    bound: float

    @property
    def passed(self) -> bool:
        return abs(self.value) <= self.bound

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "richardson": self.richardson,
            "residual_bound": self.residual_bound,
            "bound": self.bound,
            "passed": self.passed,
        }


def window_eps(a: float, b: float, k: int = 2, power: int = 6) -> list[Expr]:
    """Parameter functions ``B(t) (1 + c_A sin(w_A t))`` with ``B = (4 (t - a)(b - t) / (b - a)^2)^power``.

    ``B`` peaks at 1 and vanishes to order ``power - 1`` at both ends, which
    keeps the trapezoid rule's endpoint corrections negligible.
    """
    t = ej.Coord(0)
    bump = (4.0 * (t - a) * (b - t) / (b - a) ** 2) ** ej.Const(float(power))
    return [bump * (1.0 + 0.5 * (A + 1) * ej.sin(t * float(A + 1))) for A in range(k)]


def first_variation_check(traj: Trajectory, window: tuple[float, float]) -> VariationCheck:
    """First variation of the action along ``traj`` for the method's adapted parametrization.

    Uses difference jets (no equations of motion), so the value measures how
    far the sampled motion is from being critical. The bound adds the
    Richardson estimate, the integral of ``|E_A eps^A|`` along the samples
    and a roundoff allowance.
    """
    jets = jets_from_differences(traj)
    section = TrajectorySection(traj, jets)
    a, b = window
    ia, ib = (int(round((w - traj.t[0]) / traj.dt)) for w in window)
    if ia < jets.index[0] or ib > jets.index[-1] or ib - ia < 4 or (ib - ia) % 2:
        raise SkateError("window must lie in the interior and span an even number (>= 4) of samples")
    a, b = float(traj.t[ia]), float(traj.t[ib])
    P = nh_parametrization() if traj.method == NH else vak_parametrization()
    eps = window_eps(a, b, P.k)
    params = traj.params.bindings()
    L = lagrangian()
    value, rich = richardson(lambda n: discrete_first_variation(L, P, section, eps, [(a, b)], n, params), (ib - ia) // 2)
    form = forms()[traj.method]
    bulk = ej.absolute(ej.total(form.E[A] * eps[A] for A in range(P.k)))
    resid = integrate_expr(bulk, section, [(a, b)], ib - ia, params)
    scale = integrate_expr(ej.absolute(variation_integrand(L, apply_parametrization(P, eps))), section, [(a, b)], ib - ia, params)
    bound = rich + resid + 1e-12 * scale
    return VariationCheck(value, rich, resid, bound)
