"""Parametrized variations of order 1 and rank 1.

A parametrization turns free parameter sections ``eps^A(x, y)`` into
vertical fields ``V^a = p^a_A eps^A + p^{a mu}_A d_mu eps^A``. Feeding these
into the first variation and integrating by parts splits the integrand into
``E_A eps^A + d_mu(F^mu_A eps^A + F^{mu nu}_A d_nu eps^A)``; the bulk
coefficients ``E_A`` are the field equations of the parametrized problem.

Euler-Lagrange sign convention throughout: ``E_a = dL/dy^a - d_nu dL/dy^a_nu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import exprjet as ej
from .admissibility import (
    ConstraintSet,
    SectionExpr,
    VerticalField,
    chetaev_exprs,
    prolong,
    tangency_exprs,
)
from .exprjet import Expr, JetPoint, Space
from .rng import Xorshift


class ParametrizationError(Exception):
    pass


@dataclass(frozen=True)
class Parametrization:
    """Coefficients ``p[a][A]`` and ``p_mu[a][A][mu]``, each of jet order <= 1."""

    space: Space
    p: tuple[tuple[Expr, ...], ...]
    p_mu: tuple[tuple[tuple[Expr, ...], ...], ...]

    def __post_init__(self):
        sp = self.space

        def conv(v):
            e = ej.parse(v, sp) if isinstance(v, str) else ej.as_expr(v)
            if e.order > 1:
                raise ParametrizationError("parametrization coefficients must have jet order <= 1")
            return e

        p = tuple(tuple(conv(v) for v in row) for row in self.p)
        p_mu = tuple(tuple(tuple(conv(v) for v in cell) for cell in row) for row in self.p_mu)
        if len(p) != sp.n or len(p_mu) != sp.n:
            raise ParametrizationError(f"need {sp.n} rows (one per field)")
        k = len(p[0])
        for a in range(sp.n):
            if len(p[a]) != k or len(p_mu[a]) != k:
                raise ParametrizationError("inconsistent parameter count")
            if any(len(cell) != sp.m for cell in p_mu[a]):
                raise ParametrizationError(f"p_mu cells need {sp.m} entries")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_mu", p_mu)

    @property
    def k(self) -> int:
        return len(self.p[0])

    @classmethod
    def build(cls, space: Space, p, p_mu=None) -> "Parametrization":
        """``p_mu`` defaults to zero (an order-0 parametrization)."""
        k = len(p[0])
        if p_mu is None:
            p_mu = [[[ej.ZERO] * space.m for _ in range(k)] for _ in range(space.n)]
        return cls(space, p, p_mu)

    @classmethod
    def identity(cls, space: Space) -> "Parametrization":
        """The trivial parametrization: unconstrained variations."""
        p = [[ej.ONE if a == A else ej.ZERO for A in range(space.n)] for a in range(space.n)]
        return cls.build(space, p)

    @classmethod
    def zero(cls, space: Space, k: int = 1) -> "Parametrization":
        return cls.build(space, [[ej.ZERO] * k for _ in range(space.n)])


def _check_eps(P: Parametrization, eps: Sequence[Expr]) -> tuple[Expr, ...]:
    eps = tuple(ej.parse(e, P.space) if isinstance(e, str) else ej.as_expr(e) for e in eps)
    if len(eps) != P.k:
        raise ParametrizationError(f"expected {P.k} parameter functions, got {len(eps)}")
    for e in eps:
        if e.order > 0:
            raise ParametrizationError("parameter functions may depend on x and y only")
    return eps


def apply_parametrization(P: Parametrization, eps: Sequence[Expr]) -> VerticalField:
    """The vertical field produced by ``eps``; evaluable along second jets of a section."""
    eps = _check_eps(P, eps)
    sp = P.space
    deps = [[ej.formal_derivative(e, mu) for mu in range(sp.m)] for e in eps]
    comps = []
    for a in range(sp.n):
        terms = []
        for A in range(P.k):
            terms.append(P.p[a][A] * eps[A])
            for mu in range(sp.m):
                terms.append(P.p_mu[a][A][mu] * deps[A][mu])
        comps.append(ej.total(terms))
    return VerticalField(sp, tuple(comps))


# ----------------------------------------------------------------------------
# Adaptedness


@dataclass
class AdaptednessReport:
    kind: str
    residuals: list[float]
    tol: float
    trials: int

    @property
    def max_residual(self) -> float:
        return max(self.residuals, default=0.0)

    @property
    def adapted(self) -> bool:
        return self.max_residual <= self.tol

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "adapted": self.adapted,
            "max_residual": self.max_residual,
            "tol": self.tol,
            "samples": len(self.residuals),
            "trials_per_sample": self.trials,
        }


def random_eps(P: Parametrization, rng: Xorshift, center: JetPoint | None = None) -> list[Expr]:
    """Random quadratic polynomials in ``(x, y)``, optionally centred at a sample point."""
    sp = P.space
    vars_: list[Expr] = [ej.Coord(mu) for mu in range(sp.m)] + sp.fields()
    if center is not None:
        shifts = [float(center.get(v)) for v in vars_]
        vars_ = [v - s for v, s in zip(vars_, shifts)]
    out = []
    for _ in range(P.k):
        e: Expr = ej.Const(round(rng.uniform(-1, 1), 6))
        for i, v in enumerate(vars_):
            e = e + round(rng.uniform(-1, 1), 6) * v
            for w in vars_[i:]:
                e = e + round(rng.uniform(-0.5, 0.5), 6) * v * w
        out.append(e)
    return out


def _unit_eps(P: Parametrization, B: int, center: JetPoint) -> list[Expr]:
    """``eps^A = delta^A_B (1 + x^0 - x^0_c)``: nonzero value and first derivative at the sample."""
    x0 = ej.Coord(0) - float(center.get(ej.Coord(0)))
    return [(1.0 + x0) if A == B else ej.ZERO for A in range(P.k)]


def _check_samples(S: ConstraintSet, samples: Sequence[JetPoint], params, tol: float):
    for s in samples:
        phi = np.abs(ej.evaluate_many(S.phis, s, params))
        if np.max(phi, initial=0.0) > tol:
            raise ParametrizationError(f"sample is not admissible: |Phi| = {np.max(phi):.3e}")


def _adapted(kind, P, S, samples, rng, params, trials, tol, exprs_for) -> AdaptednessReport:
    rng = rng or Xorshift(0)
    if S is not None:
        _check_samples(S, samples, params, 1e-9)
    residuals = []
    for s in samples:
        worst = 0.0
        choices = [_unit_eps(P, B, s) for B in range(P.k)]
        choices += [random_eps(P, rng, s) for _ in range(trials)]
        for eps in choices:
            if S is None:
                continue
            V = apply_parametrization(P, eps)
            vals = ej.evaluate_many(exprs_for(S, V), s, params)
            worst = max(worst, float(np.max(np.abs(vals), initial=0.0)))
        residuals.append(worst)
    return AdaptednessReport(kind, residuals, tol, trials)


def check_vak_adapted(P, S: ConstraintSet | None, samples, rng=None, params=None, trials=3, tol=1e-9):
    """Residual of the vak tangency condition for parametrized fields at each sample.

    Samples must be second jets of admissible sections. ``S = None`` means an
    unconstrained problem, for which every parametrization is adapted.
    """
    return _adapted("vak", P, S, samples, rng, params, trials, tol, tangency_exprs)


def check_chetaev_adapted(P, S: ConstraintSet | None, samples, rng=None, params=None, trials=3, tol=1e-9):
    """Residual of ``dPhi/dy^a_nu V^a = 0`` for parametrized fields at each sample."""
    return _adapted("chetaev", P, S, samples, rng, params, trials, tol, chetaev_exprs)


# ----------------------------------------------------------------------------
# First variation


def euler_lagrange(L: Expr, space: Space) -> list[Expr]:
    """Unconstrained Euler-Lagrange expressions ``dL/dy^a - d_nu dL/dy^a_nu``."""
    if L.order > 1:
        raise ParametrizationError("only first-order Lagrangians are supported")
    out = []
    for a in range(space.n):
        e = ej.diff(L, space.jet(a))
        for nu in range(space.m):
            e = e - ej.formal_derivative(ej.diff(L, space.jet(a, nu)), nu)
        out.append(e)
    return out


@dataclass(frozen=True)
class ELForm:
    """Bulk coefficients ``E[A]`` and boundary coefficients ``F[A][mu]``, ``F2[A][mu][nu]``."""

    space: Space
    E: tuple[Expr, ...]
    F: tuple[tuple[Expr, ...], ...]
    F2: tuple[tuple[tuple[Expr, ...], ...], ...]

    def sources(self) -> dict:
        sp = self.space
        return {
            "E": [ej.to_source(e, sp) for e in self.E],
            "F": [[ej.to_source(e, sp) for e in row] for row in self.F],
            "F2": [[[ej.to_source(e, sp) for e in cell] for cell in row] for row in self.F2],
        }


def assemble_EF(L: Expr, P: Parametrization) -> ELForm:
    sp = P.space
    EL = euler_lagrange(L, sp)
    dL = [[ej.diff(L, sp.jet(a, mu)) for mu in range(sp.m)] for a in range(sp.n)]
    E, F, F2 = [], [], []
    for A in range(P.k):
        bulk = ej.total(EL[a] * P.p[a][A] for a in range(sp.n))
        flux = [ej.total(EL[a] * P.p_mu[a][A][mu] for a in range(sp.n)) for mu in range(sp.m)]
        for mu in range(sp.m):
            if not flux[mu].is_zero():
                bulk = bulk - ej.formal_derivative(flux[mu], mu)
        E.append(bulk)
        F.append(tuple(flux[mu] + ej.total(dL[a][mu] * P.p[a][A] for a in range(sp.n)) for mu in range(sp.m)))
        F2.append(
            tuple(
                tuple(ej.total(dL[a][mu] * P.p_mu[a][A][nu] for a in range(sp.n)) for nu in range(sp.m))
                for mu in range(sp.m)
            )
        )
    return ELForm(sp, tuple(E), tuple(F), tuple(F2))


def variation_integrand(L: Expr, V: VerticalField) -> Expr:
    """``dL/dy^a V^a + dL/dy^a_mu d_mu V^a``."""
    sp = V.space
    terms = []
    for a in range(sp.n):
        terms.append(ej.diff(L, sp.jet(a)) * V.components[a])
        for mu in range(sp.m):
            dl = ej.diff(L, sp.jet(a, mu))
            if not dl.is_zero():
                terms.append(dl * ej.formal_derivative(V.components[a], mu))
    return ej.total(terms)


def split_integrand(form: ELForm, eps: Sequence[Expr]) -> Expr:
    """``E_A eps^A + d_mu(F^mu_A eps^A + F^{mu nu}_A d_nu eps^A)``."""
    sp = form.space
    deps = [[ej.formal_derivative(e, nu) for nu in range(sp.m)] for e in eps]
    out = ej.total(form.E[A] * eps[A] for A in range(len(eps)))
    for mu in range(sp.m):
        current = ej.total(
            form.F[A][mu] * eps[A] + ej.total(form.F2[A][mu][nu] * deps[A][nu] for nu in range(sp.m))
            for A in range(len(eps))
        )
        out = out + ej.formal_derivative(current, mu)
    return out


def splitting_residual(L: Expr, P: Parametrization, eps, point: JetPoint, params=None) -> float:
    """``|integrand - split form|`` at a point, relative to ``max(1, |integrand|)``."""
    eps = _check_eps(P, eps)
    lhs = variation_integrand(L, apply_parametrization(P, eps))
    rhs = split_integrand(assemble_EF(L, P), eps)
    a, b = ej.evaluate_many((lhs, rhs), point, params)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


# ----------------------------------------------------------------------------
# Quadrature


def trapezoid_grid(box: Sequence[tuple[float, float]], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``(m, (n+1)^m)`` and tensor trapezoid weights for an axis-aligned box."""
    axes, wts = [], []
    for a, b in box:
        x = np.linspace(a, b, n + 1)
        w = np.full(n + 1, (b - a) / n)
        w[0] = w[-1] = 0.5 * (b - a) / n
        axes.append(x)
        wts.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    wmesh = np.meshgrid(*wts, indexing="ij")
    weights = np.prod(np.stack(wmesh), axis=0)
    return np.stack([g.ravel() for g in mesh]), weights.ravel()


def boundary_mask(box, n: int) -> np.ndarray:
    idx = np.meshgrid(*[np.arange(n + 1)] * len(box), indexing="ij")
    mask = np.zeros(idx[0].shape, dtype=bool)
    for g in idx:
        mask |= (g == 0) | (g == n)
    return mask.ravel()


SectionLike = Callable[[np.ndarray], JetPoint]


def _as_section(section, order: int, params) -> SectionLike:
    if isinstance(section, SectionExpr):
        return prolong(section, order, params)
    return section


def _box(space: Space, box) -> list[tuple[float, float]]:
    box = [tuple(map(float, b)) for b in np.atleast_2d(np.asarray(box, dtype=float))]
    if len(box) != space.m:
        raise ParametrizationError(f"box needs {space.m} intervals")
    return box


def check_boundary(eps: Sequence[Expr], jets: JetPoint, mask: np.ndarray, params, tol: float = 1e-12):
    m = jets.base.shape[0]
    exprs = list(eps) + [ej.formal_derivative(e, mu) for e in eps for mu in range(m)]
    vals = ej.evaluate_many(exprs, jets, params)[:, mask]
    worst = float(np.max(np.abs(vals), initial=0.0))
    if worst > tol:
        raise ParametrizationError(f"parameter functions do not vanish on the boundary (max {worst:.3e})")


def integrate_expr(e: Expr, section, box, n: int, params=None, order: int = 3) -> float:
    """Tensor trapezoid quadrature of ``e`` along a section over ``box``."""
    x, w = trapezoid_grid(box, n)
    jets = _as_section(section, order, params)(x)
    vals = ej.evaluate_many((e,), jets, params)[0]
    return float(np.sum(vals * w))


def discrete_first_variation(L, P, section, eps, box, n: int, params=None) -> float:
    """Quadrature of the first variation along ``section`` for parameters ``eps``.

    ``section`` is a :class:`SectionExpr` or any callable mapping an
    ``(m, npts)`` array of base points to a batched jet point of order >= 2.
    """
    sp = P.space
    eps = _check_eps(P, eps)
    box = _box(sp, box)
    x, w = trapezoid_grid(box, n)
    jets = _as_section(section, 3, params)(x)
    check_boundary(eps, jets, boundary_mask(box, n), params)
    integrand = variation_integrand(L, apply_parametrization(P, eps))
    vals = ej.evaluate_many((integrand,), jets, params)[0]
    return float(np.sum(vals * w))


def e_pairing(L, P, section, eps, box, n: int, params=None) -> float:
    """Quadrature of ``E_A eps^A``."""
    eps = _check_eps(P, eps)
    form = assemble_EF(L, P)
    e = ej.total(form.E[A] * eps[A] for A in range(P.k))
    return integrate_expr(e, section, _box(P.space, box), n, params)


def richardson(fn: Callable[[int], float], n: int) -> tuple[float, float]:
    """Value at ``2n`` and an O(h^2) error estimate from resolutions ``n`` and ``2n``."""
    coarse, fine = fn(n), fn(2 * n)
    return fine, abs(fine - coarse) / 3.0
