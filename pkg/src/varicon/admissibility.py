"""Constraints on first jets and the two admissibility notions for variations.

A variation ``V = V^i d/dy^i`` of an admissible section is

* Chetaev-admissible when ``dPhi^a/dy^i_mu V^i = 0`` for every constraint
  ``a`` and base direction ``mu``;
* vak-admissible when its prolongation is tangent to the constraint set,
  ``dPhi^a/dy^i V^i + dPhi^a/dy^i_mu d_mu V^i = 0``.

Checks here are pointwise; boundary conditions on finite domains belong to
the quadrature harness in :mod:`varicon.paramvar`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import exprjet as ej
from .exprjet import Expr, JetPoint, Space
from .rng import Xorshift
from .sampling import random_jet_point

SYMBOLIC_TOL = 1e-9
FD_TOL = 1e-6
RANK_RTOL = 1e-10


class AdmissibilityError(Exception):
    pass


def _parse_all(space: Space, items) -> tuple[Expr, ...]:
    return tuple(ej.parse(s, space) if isinstance(s, str) else ej.as_expr(s) for s in items)


@dataclass(frozen=True)
class ConstraintSet:
    space: Space
    phis: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "phis", _parse_all(self.space, self.phis))
        if not self.phis:
            raise AdmissibilityError("a constraint set needs at least one constraint")
        for phi in self.phis:
            if phi.order > 1:
                raise AdmissibilityError(f"constraint {ej.to_source(phi, self.space)} has jet order {phi.order} > 1")

    @property
    def r(self) -> int:
        return len(self.phis)


@dataclass(frozen=True)
class VerticalField:
    space: Space
    components: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", _parse_all(self.space, self.components))
        if len(self.components) != self.space.n:
            raise AdmissibilityError(f"expected {self.space.n} components, got {len(self.components)}")

    @classmethod
    def zero(cls, space: Space) -> "VerticalField":
        return cls(space, (ej.ZERO,) * space.n)


@dataclass(frozen=True)
class SectionExpr:
    """Section ``y^i = s^i(x)``; components may use base coordinates and parameters only."""

    space: Space
    components: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", _parse_all(self.space, self.components))
        if len(self.components) != self.space.n:
            raise AdmissibilityError(f"expected {self.space.n} components, got {len(self.components)}")
        for c in self.components:
            if c.jets():
                raise AdmissibilityError("section components may not reference field coordinates")

    def jet_exprs(self, order: int) -> dict[ej.Jet, Expr]:
        """Expressions in ``x`` for every jet coordinate of the section up to ``order``."""
        if not 0 <= order <= ej.MAX_ORDER:
            raise ej.OrderOverflow(f"prolongation order {order} exceeds {ej.MAX_ORDER}")
        out: dict[ej.Jet, Expr] = {}
        for i, comp in enumerate(self.components):
            out[ej.Jet(i, ())] = comp
        for k in range(1, order + 1):
            for jet in self.space.all_jets(k):
                lower = ej.Jet(jet.field, jet.idx[:-1])
                out[jet] = ej.formal_derivative(out[lower], jet.idx[-1])
        return out

    def pullback(self, e: Expr, order: int | None = None) -> Expr:
        """``e`` composed with the prolonged section, as an expression in ``x``."""
        order = e.order if order is None else order
        return ej.substitute(e, self.jet_exprs(order))


class Prolongation:
    """Callable producing the jet point of a section at base points."""

    def __init__(self, sigma: SectionExpr, order: int, params: Mapping[str, float] | None = None):
        self.sigma = sigma
        self.order = order
        self.params = dict(params or {})
        exprs = sigma.jet_exprs(order)
        self._jets = list(exprs)
        self._comp = ej.compiled(tuple(exprs[j] for j in self._jets), "numpy")

    def __call__(self, x) -> JetPoint:
        """``x`` has shape ``(m,)`` or ``(m, *batch)``; a float is accepted when m = 1."""
        sp = self.sigma.space
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or (sp.m == 1 and x.shape[:1] != (1,)):
            x = x.reshape((1,) + x.shape)
        batch = x.shape[1:]
        args = []
        for leaf in self._comp.leaves:
            if isinstance(leaf, ej.Param):
                args.append(self.params[leaf.name])
            else:
                args.append(x[leaf.mu])
        with np.errstate(all="ignore"):
            vals = self._comp(*args)
        vals = [np.broadcast_to(np.asarray(v, dtype=float), batch) for v in vals]
        n, m = sp.n, sp.m
        arrays = [np.zeros((n,) + (m,) * k + batch) for k in range(self.order + 1)]
        for jet, v in zip(self._jets, vals):
            k = len(jet.idx)
            for perm in set(ej._permutations(jet.idx)):
                arrays[k][(jet.field,) + perm] = v
        derivs = arrays[1:] + [None] * (3 - self.order)
        return JetPoint(x, arrays[0], *derivs)


def prolong(sigma: SectionExpr, order: int, params: Mapping[str, float] | None = None) -> Prolongation:
    return Prolongation(sigma, order, params)


def _points_array(space: Space, pts) -> np.ndarray:
    """Sample base points as an ``(m, npts)`` array."""
    pts = np.asarray(pts, dtype=float)
    if space.m == 1:
        return pts.reshape(1, -1)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[-1] != space.m:
        raise AdmissibilityError(f"points must have {space.m} coordinates")
    return pts.T


def admissibility_residual(S: ConstraintSet, sigma: SectionExpr, pts, params=None) -> np.ndarray:
    """Per constraint, the maximum of ``|Phi o j^1 sigma|`` over the sample points."""
    x = _points_array(S.space, pts)
    jp = prolong(sigma, 1, params)(x)
    vals = ej.evaluate_many(S.phis, jp, params)
    return np.max(np.abs(vals), axis=1)


def chetaev_matrix(S: ConstraintSet, p: JetPoint, params=None) -> np.ndarray:
    """``A[a, i*m + mu] = dPhi^a / dy^i_mu`` evaluated at ``p``."""
    sp = S.space
    exprs = [ej.diff(phi, sp.jet(i, mu)) for phi in S.phis for i in range(sp.n) for mu in range(sp.m)]
    vals = ej.evaluate_many(exprs, p, params)
    return vals.reshape(S.r, sp.n * sp.m)


@dataclass
class KernelReport:
    basis: np.ndarray  # (n, dim) orthonormal columns
    rank: int
    singular_values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def stacked_chetaev(S: ConstraintSet, p: JetPoint, params=None) -> np.ndarray:
    """The ``(r*m) x n`` matrix whose row ``(a, mu)`` is ``dPhi^a/dy^i_mu`` over ``i``."""
    sp = S.space
    A = chetaev_matrix(S, p, params).reshape(S.r, sp.n, sp.m)
    return np.transpose(A, (0, 2, 1)).reshape(S.r * sp.m, sp.n)


def null_space(B: np.ndarray, rtol: float = RANK_RTOL) -> KernelReport:
    n = B.shape[1]
    if B.size == 0:
        return KernelReport(np.eye(n), 0, np.zeros(0))
    _, s, vt = np.linalg.svd(B)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * smax)) if smax > 0 else 0
    return KernelReport(vt[rank:].T.copy(), rank, s)


def chetaev_kernel(S: ConstraintSet, p: JetPoint, params=None) -> KernelReport:
    return null_space(stacked_chetaev(S, p, params))


def chetaev_exprs(S: ConstraintSet, V: VerticalField) -> list[Expr]:
    """``dPhi^a/dy^i_mu V^i`` for each ``(a, mu)``."""
    sp = S.space
    out = []
    for phi in S.phis:
        for mu in range(sp.m):
            out.append(ej.total(ej.diff(phi, sp.jet(i, mu)) * V.components[i] for i in range(sp.n)))
    return out


def tangency_exprs(S: ConstraintSet, V: VerticalField) -> list[Expr]:
    """Left-hand side of the vak tangency condition, one expression per constraint."""
    sp = S.space
    out = []
    for phi in S.phis:
        terms = []
        for i in range(sp.n):
            terms.append(ej.diff(phi, sp.jet(i)) * V.components[i])
            for mu in range(sp.m):
                dphi = ej.diff(phi, sp.jet(i, mu))
                if not dphi.is_zero():
                    terms.append(dphi * ej.formal_derivative(V.components[i], mu))
        out.append(ej.total(terms))
    return out


def vak_tangency_residual(S: ConstraintSet, V: VerticalField, sigma: SectionExpr, pts, params=None) -> np.ndarray:
    """Tangency residual along ``j sigma``; shape ``(r, npts)``."""
    exprs = tangency_exprs(S, V)
    order = max(1, max(e.order for e in exprs))
    x = _points_array(S.space, pts)
    jp = prolong(sigma, order, params)(x)
    return ej.evaluate_many(exprs, jp, params)


def chetaev_residual(S: ConstraintSet, V: VerticalField, sigma: SectionExpr, pts, params=None) -> np.ndarray:
    """Chetaev condition along ``j sigma``; shape ``(r*m, npts)``."""
    exprs = chetaev_exprs(S, V)
    x = _points_array(S.space, pts)
    order = max(1, max(e.order for e in exprs))
    jp = prolong(sigma, order, params)(x)
    return ej.evaluate_many(exprs, jp, params)


def admissibility_report(S: ConstraintSet, sigma: SectionExpr, pts, params=None) -> list[dict]:
    """JSON records ``{point, alpha, residual, rank, kernel_dim}`` per point and constraint."""
    x = _points_array(S.space, pts)
    jp = prolong(sigma, 1, params)(x)
    vals = ej.evaluate_many(S.phis, jp, params)
    records = []
    for k in range(x.shape[1]):
        pk = prolong(sigma, 1, params)(x[:, k])
        ker = chetaev_kernel(S, pk, params)
        for a in range(S.r):
            records.append(
                {
                    "point": [float(v) for v in x[:, k]],
                    "alpha": a,
                    "residual": float(abs(vals[a, k])),
                    "rank": ker.rank,
                    "kernel_dim": ker.dim,
                }
            )
    return records


# ----------------------------------------------------------------------------
# Integrable constraints


@dataclass
class EquivalenceReport:
    """Outcome of the integrable-constraint equivalence check.

    ``chetaev_to_vak`` holds the max tangency residual for each random
    Chetaev-admissible field; ``vak_to_chetaev`` the max Chetaev quantity for
    each random boundary-vanishing vak-admissible field.
    """

    chetaev_to_vak: list[float]
    vak_to_chetaev: list[float]
    tol_a: float
    tol_b: float
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "trials": len(self.chetaev_to_vak),
            "max_chetaev_to_vak": max(self.chetaev_to_vak, default=0.0),
            "max_vak_to_chetaev": max(self.vak_to_chetaev, default=0.0),
            "tol_a": self.tol_a,
            "tol_b": self.tol_b,
            "violations": self.violations,
            "passed": self.passed,
        }


def random_time_function(t: Expr, rng: Xorshift, terms: int = 3) -> Expr:
    """Random trigonometric polynomial in ``t``."""
    out = ej.Const(round(rng.uniform(-1, 1), 6))
    for k in range(1, terms + 1):
        a = round(rng.uniform(-1, 1), 6)
        ph = round(rng.uniform(0, 6.283185307179586), 6)
        out = out + a * ej.sin(k * t + ph)
    return out


def integrable_constraints(f: Sequence[Expr], space: Space) -> ConstraintSet:
    """Constraint set ``Phi_mu^(a) = d_mu f^(a)``."""
    phis = [ej.formal_derivative(fa, mu) for fa in f for mu in range(space.m)]
    return ConstraintSet(space, tuple(phis))


def linear_integrable_equivalence_check(
    f: Expr,
    sigma: SectionExpr,
    trials: int,
    interval: tuple[float, float] = (0.0, 1.0),
    rng: Xorshift | None = None,
    params=None,
    samples: int = 41,
    tol_a: float = SYMBOLIC_TOL,
    tol_b: float = 1e-7,
) -> EquivalenceReport:
    """Executable form of the equivalence theorem for ``Phi = d_t f`` (m = 1).

    (a) Random fields with ``df/dy^i V^i = 0`` must satisfy vak tangency.
    (b) Random fields satisfying ``d_t(df/dy^i V^i) = 0`` with ``V(a) = 0``
        are built by integrating that ODE for one pivot component; the
        Chetaev quantity ``df/dy^i V^i`` must then vanish everywhere.
    """
    from scipy.integrate import solve_ivp

    sp = sigma.space
    if sp.m != 1:
        raise AdmissibilityError("the equivalence check is implemented for a 1-dimensional base")
    if f.order != 0:
        raise AdmissibilityError("f must depend on x and y only")
    rng = rng or Xorshift(0)
    a, b = interval
    t = ej.Coord(0)
    S = integrable_constraints([f], sp)
    grads = [ej.diff(f, sp.jet(i)) for i in range(sp.n)]
    trivial = all(g.is_zero() for g in grads)
    pts = np.linspace(a, b, samples)
    jp = prolong(sigma, 2, params)(pts.reshape(1, -1))
    report = EquivalenceReport([], [], tol_a, tol_b)

    # (a) Chetaev-admissible: project a random field onto the kernel of df/dy
    gg = ej.total(g * g for g in grads)
    for k in range(trials):
        W = [random_time_function(t, rng) for _ in range(sp.n)]
        if trivial:
            comps = W
        else:
            gw = ej.total(g * w for g, w in zip(grads, W))
            comps = [w - gw * g / gg for w, g in zip(W, grads)]
        V = VerticalField(sp, tuple(comps))
        res = np.max(np.abs(ej.evaluate_many(tangency_exprs(S, V), jp, params)))
        report.chetaev_to_vak.append(float(res))
        if res > tol_a:
            report.violations.append(f"(a) trial {k}: tangency residual {res:.3e} > {tol_a:g}")

    # (b) vak-admissible with V(a) = 0, built by integrating d_t(g.V) = 0
    if trivial:
        report.vak_to_chetaev.extend([0.0] * trials)
        return report
    g_along = ej.evaluate_many(grads, jp, params)
    pivot = int(np.argmax(np.min(np.abs(g_along), axis=1)))
    if np.min(np.abs(g_along[pivot])) < 1e-8:
        raise AdmissibilityError("df/dy vanishes along the section; no pivot component")
    prolong1 = prolong(sigma, 1, params)
    g_p = grads[pivot]
    for k in range(trials):
        free = [sampling_bump(t, a, b) * random_time_function(t, rng) for _ in range(sp.n)]
        others = ej.total(grads[i] * free[i] for i in range(sp.n) if i != pivot)
        comp = ej.compiled((ej.formal_derivative(others, 0), g_p, ej.formal_derivative(g_p, 0)), "math")

        def ode(tt, v, comp=comp):
            d_others, gp, dgp = comp.at(prolong1(tt), params)
            return [-(dgp * v[0] + d_others) / gp]

        sol = solve_ivp(ode, (a, b), [0.0], t_eval=pts, rtol=1e-12, atol=1e-14, method="DOP853")
        if not sol.success:
            report.violations.append(f"(b) trial {k}: integration failed: {sol.message}")
            continue
        vals = ej.evaluate_many([others], jp, params)[0] + g_along[pivot] * sol.y[0]
        res = float(np.max(np.abs(vals)))
        report.vak_to_chetaev.append(res)
        if res > tol_b:
            report.violations.append(f"(b) trial {k}: Chetaev quantity {res:.3e} > {tol_b:g}")
    return report


def sampling_bump(t: Expr, a: float, b: float) -> Expr:
    return ((t - a) * (b - t)) ** ej.Const(2.0)


# ----------------------------------------------------------------------------
# Admissible sample points


def project_jets(exprs: Sequence[Expr], free: Sequence[ej.Jet], point: JetPoint, params=None, iters: int = 30) -> JetPoint:
    """Move the ``free`` jets (Gauss-Newton with least-norm steps) until ``exprs`` vanish."""
    if not exprs:
        return point
    jac = [ej.diff(e, u) for e in exprs for u in free]
    for _ in range(iters):
        vals = ej.evaluate_many(exprs, point, params)
        if float(np.max(np.abs(vals))) < 1e-14:
            break
        J = ej.evaluate_many(jac, point, params).reshape(len(exprs), len(free))
        shift, *_ = np.linalg.lstsq(J, -vals, rcond=None)
        for u, s in zip(free, shift):
            point = point.with_value(u, float(point.get(u)) + s)
    return point


def random_admissible_point(S: ConstraintSet, rng: Xorshift, params=None, scale: float = 1.0, tol: float = 1e-12) -> JetPoint:
    """Random order-3 jet point on ``S`` whose second jets also satisfy ``d_mu Phi = 0``.

    First jets are projected onto ``Phi = 0``, then second jets onto the
    prolonged constraint, so the point lies on the jet of an admissible
    section up to order 2.
    """
    sp = S.space
    for _ in range(20):
        p = random_jet_point(sp, rng, 3, scale)
        p = project_jets(S.phis, sp.all_jets(1), p, params)
        dphi = [ej.formal_derivative(phi, mu) for phi in S.phis for mu in range(sp.m)]
        p = project_jets(dphi, sp.all_jets(2), p, params)
        vals = ej.evaluate_many(list(S.phis) + dphi, p, params)
        if np.all(np.isfinite(vals)) and float(np.max(np.abs(vals))) <= tol * max(1.0, scale):
            return p
    raise AdmissibilityError("could not find an admissible sample point")
