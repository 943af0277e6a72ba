"""Barotropic relativistic fluid described by a conserved vector density.

The fluid is a current ``J^mu`` (a vector density), with

* ``|J| = sqrt(-g_{mu nu} J^mu J^nu)`` in signature ``(-,+,+,+)``,
* rest density ``rho = |J| / sqrt|det g|`` and velocity ``u^mu = J^mu / |J|``,
* internal energy ``e(rho)``, pressure ``P = rho^2 e'(rho)``, energy density
  ``mu = rho (1 + e)``.

Everything is built symbolically over the first jets of ``J``; a concrete
field is a :class:`~varicon.admissibility.SectionExpr` in ``x0..x3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import exprjet as ej
from .admissibility import (
    ConstraintSet,
    SectionExpr,
    VerticalField,
    chetaev_kernel,
    prolong,
    stacked_chetaev,
    tangency_exprs,
)
from .exprjet import Expr, JetPoint, Space
from .paramvar import Parametrization, boundary_mask, trapezoid_grid

FIELDS = ("J0", "J1", "J2", "J3")
DET_TOL = 1e-12


class FluidError(Exception):
    pass


def fluid_space(params: Sequence[str] = ()) -> Space:
    return Space(4, FIELDS, tuple(params))


def _parse(space: Space, v) -> Expr:
    return ej.parse(v, space) if isinstance(v, str) else ej.as_expr(v)


def _no_jets(e: Expr, what: str) -> Expr:
    if e.jets():
        raise FluidError(f"{what} may depend on the base coordinates and parameters only")
    return e


@dataclass(frozen=True)
class Metric:
    """Symmetric ``4 x 4`` metric with entries in ``x0..x3``; signature ``(-,+,+,+)``."""

    space: Space
    g: tuple[tuple[Expr, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(_no_jets(_parse(self.space, v), "metric entries") for v in row) for row in self.g)
        if len(rows) != 4 or any(len(r) != 4 for r in rows):
            raise FluidError("metric must be 4 x 4")
        for a in range(4):
            for b in range(a):
                if rows[a][b] != rows[b][a]:
                    raise FluidError(f"metric is not symmetric: g[{a}][{b}] differs from g[{b}][{a}]")
        object.__setattr__(self, "g", rows)

    @classmethod
    def minkowski(cls, space: Space) -> "Metric":
        return cls(space, tuple(tuple(ej.Const(-1.0 if a == b == 0 else float(a == b)) for b in range(4)) for a in range(4)))

    def lower(self, vec: Sequence[Expr]) -> list[Expr]:
        return [ej.total(self.g[a][b] * vec[b] for b in range(4)) for a in range(4)]

    @cached_property
    def det(self) -> Expr:
        return _det([list(r) for r in self.g])

    @cached_property
    def christoffel_lowered(self) -> tuple:
        """``Gamma_{s n m} = (d_n g_{s m} + d_m g_{s n} - d_s g_{n m}) / 2``."""
        dg = [[[ej.formal_derivative(self.g[a][b], c) for c in range(4)] for b in range(4)] for a in range(4)]
        return tuple(
            tuple(
                tuple(0.5 * (dg[s][m][n] + dg[s][n][m] - dg[n][m][s]) for m in range(4))
                for n in range(4)
            )
            for s in range(4)
        )

    def numeric(self, x: np.ndarray, params=None) -> np.ndarray:
        """Metric values at base points ``x`` of shape ``(4, npts)``; result ``(npts, 4, 4)``."""
        x = np.asarray(x, dtype=float).reshape(4, -1)
        p = JetPoint(x, np.zeros((4, x.shape[1])))
        vals = ej.evaluate_many([e for row in self.g for e in row], p, params)
        return np.moveaxis(vals.reshape(4, 4, -1), -1, 0)

    def christoffel(self, x: np.ndarray, params=None) -> np.ndarray:
        """``Gamma^l_{n m}`` at points, shape ``(npts, 4, 4, 4)``, via a numeric inverse metric."""
        x = np.asarray(x, dtype=float).reshape(4, -1)
        p = JetPoint(x, np.zeros((4, x.shape[1])))
        G = self.christoffel_lowered
        vals = ej.evaluate_many([G[s][n][m] for s in range(4) for n in range(4) for m in range(4)], p, params)
        low = np.moveaxis(vals.reshape(4, 4, 4, -1), -1, 0)
        ginv = np.linalg.inv(self.numeric(x, params))
        return np.einsum("pls,psnm->plnm", ginv, low)


def _det(M: list[list[Expr]]) -> Expr:
    n = len(M)
    if n == 1:
        return M[0][0]
    terms = []
    for j in range(n):
        if M[0][j].is_zero():
            continue
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        t = M[0][j] * _det(minor)
        terms.append(t if j % 2 == 0 else ej.neg(t))
    return ej.total(terms)


@dataclass(frozen=True)
class FluidField:
    """A current ``J^mu(x)`` together with an equation of state ``e(rho)``."""

    space: Space
    J: tuple[Expr, ...]
    eos: Expr  # over the auxiliary one-field space with field ``rho``

    def __post_init__(self):
        J = tuple(_no_jets(_parse(self.space, v), "J components") for v in self.J)
        if len(J) != 4:
            raise FluidError("J needs 4 components")
        object.__setattr__(self, "J", J)
        aux = eos_space(self.space)
        object.__setattr__(self, "eos", _parse(aux, self.eos))
        if self.eos.order > 0:
            raise FluidError("the equation of state is a function of rho alone")

    @classmethod
    def build(cls, J: Sequence, eos, params: Sequence[str] = ()) -> "FluidField":
        sp = fluid_space(params)
        return cls(sp, tuple(J), eos)

    @property
    def section(self) -> SectionExpr:
        return SectionExpr(self.space, self.J)


def eos_space(space: Space) -> Space:
    return Space(1, ("rho",), space.param_names)


@dataclass(frozen=True)
class FluidPointState:
    rho: float
    u_lower: np.ndarray
    u_upper: np.ndarray
    P: float
    mu: float

    def normalization(self) -> float:
        """``g^{mu nu} u_mu u_nu``, which equals ``u_mu u^mu``."""
        return float(self.u_lower @ self.u_upper)


class FluidForms:
    """Symbolic building blocks over the jets of ``J`` for a metric and an equation of state."""

    def __init__(self, metric: Metric, eos: Expr):
        sp = metric.space
        self.space, self.metric = sp, metric
        aux_rho = eos_space(sp).jet(0)
        J = [sp.jet(a) for a in range(4)]
        self.J = J
        self.J_lower = metric.lower(J)
        self.norm2 = ej.neg(ej.total(self.J_lower[a] * J[a] for a in range(4)))
        self.absJ = ej.sqrt(self.norm2)
        self.sqrt_g = ej.sqrt(ej.absolute(metric.det))
        self.rho = self.absJ / self.sqrt_g
        sub = {aux_rho: self.rho}
        e = eos
        de = ej.diff(eos, aux_rho)
        self.e = ej.substitute(e, sub)
        self.P = ej.substitute(aux_rho * aux_rho * de, sub)
        self.mu = ej.substitute(aux_rho * (1.0 + e), sub)
        self.dmu = ej.substitute(ej.diff(aux_rho * (1.0 + e), aux_rho), sub)
        self.u_upper = [Ja / self.absJ for Ja in J]
        self.u_lower = [Ja / self.absJ for Ja in self.J_lower]
        # symbolic pieces in the single variable, for identity checks
        self._aux = (aux_rho, eos, aux_rho * aux_rho * de, aux_rho * (1.0 + e))

    @cached_property
    def continuity(self) -> Expr:
        return ej.total(self.space.jet(a, a) for a in range(4))

    @cached_property
    def residual(self) -> tuple[Expr, ...]:
        """``(u_m u^n + delta^n_m) d_n P + (mu + P) u^n (d_n u_m - Gamma^l_{n m} u_l)``."""
        u, ul = self.u_upper, self.u_lower
        dP = [ej.formal_derivative(self.P, n) for n in range(4)]
        G = self.metric.christoffel_lowered
        out = []
        for m in range(4):
            proj = ej.total((ul[m] * u[n] + (1.0 if n == m else 0.0)) * dP[n] for n in range(4))
            acc = []
            for n in range(4):
                conn = ej.total(G[s][n][m] * u[s] for s in range(4))
                acc.append(u[n] * (ej.formal_derivative(ul[m], n) - conn))
            out.append(proj + (self.mu + self.P) * ej.total(acc))
        return tuple(out)

    def variation_integrand(self, X: Sequence[Expr]) -> Expr:
        """``-sqrt|g| mu'(rho) (J_m / rho) Lie_X J^m``."""
        dJ = lie_drag(self.space, X).components
        s = ej.total(self.J_lower[m] / self.rho * dJ[m] for m in range(4))
        return ej.neg(self.sqrt_g * self.dmu * s)

    def identity_residuals(self, rho: float, params=None) -> tuple[float, float]:
        """``rho mu' - (mu + P)`` and ``rho (mu')' - P'`` at a density value."""
        r, e, P, mu = self._aux
        dmu = ej.diff(mu, r)
        lhs1, rhs1 = r * dmu, mu + P
        lhs2, rhs2 = r * ej.diff(dmu, r), ej.diff(P, r)
        pt = JetPoint(np.zeros(1), np.array([float(rho)]))
        vals = ej.evaluate_many([lhs1 - rhs1, lhs2 - rhs2], pt, params)
        return float(vals[0]), float(vals[1])


def forms(f: FluidField, g: Metric) -> FluidForms:
    if g.space != f.space:
        raise FluidError("metric and field live on different spaces")
    if g.det.is_zero():
        raise FluidError("metric is degenerate everywhere")
    return FluidForms(g, f.eos)


def _points(pts) -> np.ndarray:
    x = np.asarray(pts, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, 4)
    if x.shape[-1] != 4:
        raise FluidError("points need 4 coordinates")
    return x.T.copy()


def _check_regular(F: FluidForms, jp: JetPoint, params) -> None:
    norm2, det = ej.evaluate_many([F.norm2, F.metric.det], jp, params)
    if np.any(np.abs(det) <= DET_TOL):
        raise FluidError("degenerate metric at a sample point")
    if np.any(norm2 <= 0):
        raise FluidError("J is not timelike at a sample point")


def extract_state(f: FluidField, g: Metric, x, params=None) -> FluidPointState:
    x = _points(x)
    if x.shape[1] != 1:
        raise FluidError("extract_state takes a single point")
    jp = prolong(f.section, 1, params)(x[:, 0])
    F = forms(f, g)
    _check_regular(F, jp, params)
    vals = ej.evaluate_many([F.rho, F.P, F.mu, *F.u_lower, *F.u_upper], jp, params)
    return FluidPointState(float(vals[0]), vals[3:7].copy(), vals[7:11].copy(), float(vals[1]), float(vals[2]))


def continuity_residual(f: FluidField, pts, params=None) -> np.ndarray:
    jp = prolong(f.section, 1, params)(_points(pts))
    div = ej.total(f.space.jet(a, a) for a in range(4))
    return np.atleast_1d(ej.evaluate(div, jp, params))


def euler_residual(f: FluidField, g: Metric, pts, params=None) -> np.ndarray:
    """Covector residual at each point, shape ``(npts, 4)``."""
    F = forms(f, g)
    jp = prolong(f.section, 2, params)(_points(pts))
    _check_regular(F, jp, params)
    return ej.evaluate_many(F.residual, jp, params).T


def pressure(f: FluidField, g: Metric, pts, params=None) -> np.ndarray:
    F = forms(f, g)
    jp = prolong(f.section, 1, params)(_points(pts))
    _check_regular(F, jp, params)
    return np.atleast_1d(ej.evaluate(F.P, jp, params))


# ----------------------------------------------------------------------------
# Lie drag


def _vector(space: Space, X) -> tuple[Expr, ...]:
    X = tuple(_no_jets(_parse(space, v), "X components") for v in X)
    if len(X) != 4:
        raise FluidError("X needs 4 components")
    return X


def lie_drag(space: Space, X) -> VerticalField:
    """``X^n d_n J^m - J^n d_n X^m + J^m d_n X^n`` for a vector field ``X(x)``."""
    X = _vector(space, X)
    J = [space.jet(a) for a in range(4)]
    dX = [[ej.formal_derivative(X[a], n) for n in range(4)] for a in range(4)]
    div = ej.total(dX[n][n] for n in range(4))
    comps = []
    for m in range(4):
        comps.append(
            ej.total(X[n] * space.jet(m, n) for n in range(4))
            - ej.total(J[n] * dX[m][n] for n in range(4))
            + J[m] * div
        )
    return VerticalField(space, tuple(comps))


def lie_drag_parametrization(space: Space) -> Parametrization:
    """``p^a_A = d_A J^a`` and ``p^{a l}_A = -delta^a_A J^l + J^a delta^l_A``; the parameters are ``X^A``."""
    J = [space.jet(a) for a in range(4)]
    p = [[space.jet(a, A) for A in range(4)] for a in range(4)]
    p_mu = [
        [[ej.total([ej.neg(J[lam]) if a == A else ej.ZERO, J[a] if lam == A else ej.ZERO]) for lam in range(4)] for A in range(4)]
        for a in range(4)
    ]
    return Parametrization(space, p, p_mu)


def continuity_constraint(space: Space) -> ConstraintSet:
    return ConstraintSet(space, (ej.total(space.jet(a, a) for a in range(4)),))


def lie_drag_divergence(f: FluidField, X, pts, params=None) -> np.ndarray:
    """``d_m (Lie_X J)^m`` along the field; zero whenever ``J`` is divergence free."""
    S = continuity_constraint(f.space)
    expr = tangency_exprs(S, lie_drag(f.space, X))[0]
    jp = prolong(f.section, 2, params)(_points(pts))
    return np.atleast_1d(ej.evaluate(expr, jp, params))


def lie_identity_exprs(space: Space, X) -> tuple[Expr, Expr]:
    """Both sides of ``d_m (Lie_X J)^m = d_n (X^n d_m J^m)``."""
    X = _vector(space, X)
    dJ = lie_drag(space, X).components
    div = ej.total(space.jet(a, a) for a in range(4))
    lhs = ej.total(ej.formal_derivative(dJ[m], m) for m in range(4))
    rhs = ej.total(ej.formal_derivative(X[n] * div, n) for n in range(4))
    return lhs, rhs


# ----------------------------------------------------------------------------
# Chetaev triviality


NON_PHYSICAL = (
    "non-physical: the only Chetaev-admissible variation is zero, "
    "so every admissible section is Chetaev-critical"
)


@dataclass
class TrivialityReport:
    kernel_dims: list[int]
    ranks: list[int]
    identity_pattern: bool  # stacked matrix equals the identity at every point

    @property
    def chetaev_trivial(self) -> bool:
        return all(d == 0 for d in self.kernel_dims)

    @property
    def every_section_critical(self) -> bool:
        return self.chetaev_trivial

    @property
    def verdict(self) -> str:
        if self.chetaev_trivial:
            return NON_PHYSICAL
        return f"Chetaev-admissible variations exist (kernel dimension up to {max(self.kernel_dims)})"

    def as_dict(self) -> dict:
        return {
            "points": len(self.kernel_dims),
            "kernel_dims": self.kernel_dims,
            "max_kernel_dim": max(self.kernel_dims, default=0),
            "ranks": self.ranks,
            "identity_pattern": self.identity_pattern,
            "chetaev_trivial": self.chetaev_trivial,
            "every_admissible_section_chetaev_critical": self.every_section_critical,
            "verdict": self.verdict,
        }


def chetaev_triviality(S: ConstraintSet, points: Sequence[JetPoint], params=None) -> TrivialityReport:
    dims, ranks, ident = [], [], True
    for p in points:
        B = stacked_chetaev(S, p, params)
        ker = chetaev_kernel(S, p, params)
        dims.append(ker.dim)
        ranks.append(ker.rank)
        ident = ident and B.shape[0] == B.shape[1] and bool(np.array_equal(B, np.eye(B.shape[0])))
    return TrivialityReport(dims, ranks, ident)


# ----------------------------------------------------------------------------
# First variation along the Lie drag


def _check_support(X: Sequence[Expr], jp: JetPoint, mask: np.ndarray, params, tol: float = 1e-12) -> None:
    exprs = list(X) + [ej.formal_derivative(c, n) for c in X for n in range(4)]
    vals = ej.evaluate_many(exprs, jp, params)[:, mask]
    worst = float(np.max(np.abs(vals), initial=0.0))
    if worst > tol:
        raise FluidError(f"X or its derivatives do not vanish on the boundary (max {worst:.3e})")


def _grid(f: FluidField, box, n: int, order: int, params):
    box = [tuple(map(float, b)) for b in box]
    if len(box) != 4:
        raise FluidError("box needs 4 intervals")
    x, w = trapezoid_grid(box, n)
    jp = prolong(f.section, order, params)(x)
    return jp, w, boundary_mask(box, n)


def fluid_first_variation(f: FluidField, g: Metric, X, box, n: int, params=None) -> float:
    """Tensor trapezoid quadrature of ``-sqrt|g| mu' (J_m / rho) Lie_X J^m`` over ``box``."""
    X = _vector(f.space, X)
    F = forms(f, g)
    jp, w, mask = _grid(f, box, n, 1, params)
    _check_support(X, jp, mask, params)
    _check_regular(F, jp, params)
    vals = ej.evaluate(F.variation_integrand(X), jp, params)
    return float(np.sum(np.broadcast_to(vals, w.shape) * w))


def residual_pairing(f: FluidField, g: Metric, X, box, n: int, params=None) -> float:
    """Quadrature of ``sqrt|g| X^m R_m``."""
    X = _vector(f.space, X)
    F = forms(f, g)
    jp, w, _ = _grid(f, box, n, 2, params)
    _check_regular(F, jp, params)
    e = F.sqrt_g * ej.total(X[m] * F.residual[m] for m in range(4))
    vals = ej.evaluate(e, jp, params)
    return float(np.sum(np.broadcast_to(vals, w.shape) * w))


# ----------------------------------------------------------------------------
# Lie drag is not faithful: a rigid twist


@dataclass
class TwistReport:
    max_X_on_boundary: float
    max_drag_on_boundary: float

    @property
    def demonstrates_unfaithful(self) -> bool:
        return self.max_X_on_boundary > 1e-3 and self.max_drag_on_boundary <= 1e-12

    def as_dict(self) -> dict:
        return {
            "max_X_on_boundary": self.max_X_on_boundary,
            "max_drag_on_boundary": self.max_drag_on_boundary,
            "demonstrates_unfaithful": self.demonstrates_unfaithful,
        }


def twist_counterexample(rho0: float = 1.0, radius: float = 1.0, samples: int = 64) -> TwistReport:
    """Static fluid in a cylinder ``x1^2 + x2^2 <= R^2``, ``0 <= x0, x3 <= 1``, twisted rigidly.

    ``X = (0, -x2, x1, 0)`` is nonzero on the mantle, yet it drags the
    static current to ``Lie_X J = 0`` everywhere, the boundary included.
    """
    sp = fluid_space()
    f = FluidField(sp, (ej.Const(rho0), ej.ZERO, ej.ZERO, ej.ZERO), "0")
    X = ("0", "-x2", "x1", "0")
    drag = lie_drag(sp, X).components
    k = np.arange(samples)
    phi = 2 * np.pi * k / samples
    s = (k % 8) / 7.0
    mantle = np.stack([s, radius * np.cos(phi), radius * np.sin(phi), s[::-1]])
    r = radius * np.sqrt((k % 5) / 4.0)
    caps = np.stack([np.where(k % 2 == 0, 0.0, 1.0), r * np.cos(phi), r * np.sin(phi), np.where(k % 3 == 0, 0.0, 1.0)])
    pts = np.concatenate([mantle, caps], axis=1)
    jp = prolong(f.section, 1)(pts)
    Xv = ej.evaluate_many([_parse(sp, c) for c in X], jp)
    dv = ej.evaluate_many(drag, jp)
    on_mantle = np.max(np.abs(Xv[:, :samples]))
    return TwistReport(float(on_mantle), float(np.max(np.abs(dv))))


# ----------------------------------------------------------------------------
# Field families used by the scenarios


def static_uniform(rho0: float = 1.0, eos: str = "rho") -> FluidField:
    return FluidField.build((repr(float(rho0)), "0", "0", "0"), eos)


def boosted_dust(rho0: float = 1.0, rapidity: float = 0.5) -> FluidField:
    c, s = float(np.cosh(rapidity)), float(np.sinh(rapidity))
    return FluidField.build((repr(rho0 * c), repr(rho0 * s), "0", "0"), "0")


def pressure_gradient(rho0: float = 1.0, amplitude: float = 0.3, eos: str = "rho") -> FluidField:
    """``J = (rho0 + a sin(x1), 0, 0, 0)``: divergence free but not a solution when ``P' != 0``."""
    return FluidField.build((f"{rho0!r} + {amplitude!r}*sin(x1)", "0", "0", "0"), eos)


def bump_vector(box, component: int = 1, amplitude: float = 1.0, power: int = 3) -> tuple[str, ...]:
    """``X`` with one nonzero component, a product bump with peak ``amplitude``.

    Each factor is ``(4 (x_k - a_k)(b_k - x_k) / (b_k - a_k)^2)^power``, so the
    bump vanishes to order ``power - 1`` on the faces of the box.
    """
    factors = [
        f"(4*(x{k} - ({a!r}))*(({b!r}) - x{k})/{(b - a) ** 2!r})^{power}" for k, (a, b) in enumerate(box)
    ]
    expr = f"{amplitude!r}*" + "*".join(factors)
    return tuple(expr if k == component else "0" for k in range(4))


def random_divergence_free(rng, rho0: float = 4.0, amplitude: float = 0.3, terms: int = 2) -> FluidField:
    """``J^m = c^m + d_n A^{m n}`` with a random antisymmetric trigonometric potential ``A``."""
    sp = fluid_space()
    x = [ej.Coord(k) for k in range(4)]
    A = [[ej.ZERO] * 4 for _ in range(4)]
    for a in range(4):
        for b in range(a + 1, 4):
            terms_ab = []
            for _ in range(terms):
                k = [round(rng.uniform(-1.5, 1.5), 3) for _ in range(4)]
                phase = round(rng.uniform(0, 6.283), 3)
                amp = round(rng.uniform(-amplitude, amplitude), 4)
                arg = ej.total([ej.Const(phase)] + [ej.Const(k[i]) * x[i] for i in range(4)])
                terms_ab.append(ej.Const(amp) * ej.sin(arg))
            A[a][b] = ej.total(terms_ab)
            A[b][a] = ej.neg(A[a][b])
    J = [ej.Const(rho0 if m == 0 else 0.0) + ej.total(ej.formal_derivative(A[m][n], n) for n in range(4)) for m in range(4)]
    return FluidField(sp, tuple(J), "rho")


def random_vector(rng, amplitude: float = 1.0) -> tuple[Expr, ...]:
    x = [ej.Coord(k) for k in range(4)]
    out = []
    for _ in range(4):
        k = [round(rng.uniform(-1.0, 1.0), 3) for _ in range(4)]
        arg = ej.total([ej.Const(round(rng.uniform(0, 6.283), 3))] + [ej.Const(k[i]) * x[i] for i in range(4)])
        out.append(ej.Const(round(rng.uniform(-amplitude, amplitude), 4)) * ej.cos(arg) + x[0] * x[1] * ej.Const(0.1))
    return tuple(out)
