"""Classical multiplier formulations of constrained mechanics.

* Nonholonomic rule: ``E_i(L) = lambda_a dPhi^a/dq'^i`` with ``lambda``
  algebraic.
* Vakonomic rule: Euler-Lagrange equations of ``L + lambda_a Phi^a`` with
  ``lambda`` a dynamical field.

Both systems are derived symbolically from ``L`` and the constraints; they
serve as an independent route to the equations produced by
:func:`varicon.paramvar.assemble_EF`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import exprjet as ej
from .admissibility import ConstraintSet, project_jets
from .exprjet import Expr, JetPoint, Space
from .paramvar import euler_lagrange
from .rng import Xorshift

NH = "NH"
VAK = "VAK"


class MultiplierError(Exception):
    pass


@dataclass(frozen=True)
class MultiplierSystem:
    """Residual rows over the space extended by multiplier fields.

    Rows ``0..n-1`` belong to the original fields; the remaining ``r`` rows
    are the constraints (for VAK these are the multiplier Euler-Lagrange rows,
    which coincide with the constraints).
    """

    kind: str
    space: Space
    base_space: Space
    rows: tuple[Expr, ...]
    multipliers: tuple[ej.Jet, ...]

    @property
    def field_rows(self) -> tuple[Expr, ...]:
        return self.rows[: self.base_space.n]

    @property
    def constraint_rows(self) -> tuple[Expr, ...]:
        return self.rows[self.base_space.n:]

    def sources(self) -> list[str]:
        return [ej.to_source(r, self.space) for r in self.rows]


def _multiplier_names(space: Space, r: int) -> list[str]:
    names = ["lam"] if r == 1 else [f"lam{a}" for a in range(r)]
    taken = set(space.field_names) | set(space.param_names)
    while set(names) & taken:
        names = ["_" + nm for nm in names]
    return names


def _require_mechanics(space: Space):
    if space.m != 1:
        raise MultiplierError("multiplier systems are implemented for a 1-dimensional base only")


def nh_system(L: Expr, S: ConstraintSet | Space) -> MultiplierSystem:
    """Nonholonomic multiplier system; passing a bare :class:`Space` means no constraints."""
    if isinstance(S, Space):
        return unconstrained_system(L, S)
    base = S.space
    _require_mechanics(base)
    names = _multiplier_names(base, S.r)
    ext = base.extend(names)
    lams = tuple(ext.jet(nm) for nm in names)
    EL = euler_lagrange(L, base)
    rows = []
    for i in range(base.n):
        reaction = ej.total(lams[a] * ej.diff(phi, base.jet(i, 0)) for a, phi in enumerate(S.phis))
        rows.append(EL[i] - reaction)
    rows.extend(S.phis)
    return MultiplierSystem(NH, ext, base, tuple(rows), lams)


def unconstrained_system(L: Expr, space: Space) -> MultiplierSystem:
    """Plain Euler-Lagrange equations, as a system with no multipliers."""
    _require_mechanics(space)
    return MultiplierSystem(NH, space, space, tuple(euler_lagrange(L, space)), ())


def augmented_lagrangian(L: Expr, S: ConstraintSet) -> tuple[Expr, Space, tuple[ej.Jet, ...]]:
    names = _multiplier_names(S.space, S.r)
    ext = S.space.extend(names)
    lams = tuple(ext.jet(nm) for nm in names)
    return L + ej.total(lam * phi for lam, phi in zip(lams, S.phis)), ext, lams


def vak_system(L: Expr, S: ConstraintSet) -> MultiplierSystem:
    _require_mechanics(S.space)
    Lp, ext, lams = augmented_lagrangian(L, S)
    return MultiplierSystem(VAK, ext, S.space, tuple(euler_lagrange(Lp, ext)), lams)


# ----------------------------------------------------------------------------
# Elimination


@dataclass(frozen=True)
class Elimination:
    equations: tuple[Expr, ...]  # lambda-free field equations
    constraints: tuple[Expr, ...]
    multiplier: Expr  # lambda solved from the chosen row
    validity: Expr  # coefficient of lambda; the reduction holds where it is nonzero
    solve_row: int


def eliminate_multiplier(sys: MultiplierSystem, solve_row: int) -> Elimination:
    if len(sys.multipliers) != 1:
        raise MultiplierError("elimination supports a single constraint; reduce the system by hand for r > 1")
    lam = sys.multipliers[0]
    n = sys.base_space.n
    if not 0 <= solve_row < n:
        raise MultiplierError(f"solve_row must index a field row (0..{n - 1})")
    row = sys.rows[solve_row]
    if any(j.field == lam.field and j.idx for j in row.jets()):
        raise MultiplierError("row is not affine in the multiplier: it involves multiplier derivatives")
    coeff = ej.diff(row, lam)
    if not ej.diff(coeff, lam).is_zero():
        raise MultiplierError("row is not affine in the multiplier")
    if coeff.is_zero():
        raise MultiplierError(f"multiplier coefficient in row {solve_row} is identically zero")
    rest = ej.substitute(row, {lam: ej.ZERO})
    lam_expr = ej.neg(rest) / coeff
    mapping: dict[Expr, Expr] = {lam: lam_expr}
    current = lam_expr
    for k in range(1, ej.MAX_ORDER + 1):
        needed = any(j.field == lam.field and len(j.idx) == k for r in sys.rows for j in r.jets())
        if not needed:
            break
        current = ej.formal_derivative(current, 0)
        mapping[ej.Jet(lam.field, (0,) * k)] = current
    eqs = tuple(ej.substitute(sys.rows[i], mapping) for i in range(n) if i != solve_row)
    cons = tuple(ej.substitute(r, mapping) for r in sys.constraint_rows)
    return Elimination(eqs, cons, lam_expr, coeff, solve_row)


# ----------------------------------------------------------------------------
# Linear solves for the highest jets (used by the integrators)


class JetSolver:
    """Solve rows that are affine in a list of unknown jets, ``A(z) u = b(z)``."""

    def __init__(self, rows: Sequence[Expr], unknowns: Sequence[ej.Jet], params=None):
        self.rows = tuple(rows)
        self.unknowns = tuple(unknowns)
        if len(self.rows) != len(self.unknowns):
            raise MultiplierError("need as many rows as unknowns")
        zero = {u: ej.ZERO for u in self.unknowns}
        A = [ej.diff(r, u) for r in self.rows for u in self.unknowns]
        b = [ej.neg(ej.substitute(r, zero)) for r in self.rows]
        for a in A:
            for u in self.unknowns:
                if not ej.diff(a, u).is_zero():
                    raise MultiplierError("rows are not affine in the unknowns")
        self._comp = ej.compiled(tuple(A + b), "math")
        self.params = dict(params or {})
        self.known = tuple(leaf for leaf in self._comp.leaves if not isinstance(leaf, ej.Param))

    def bind(self, args: Sequence[Expr]):
        """Fast solver ``f(*values)`` taking the known leaves in the order of ``args``."""
        unknown = set(self.unknowns)
        if unknown & set(args):
            raise MultiplierError("unknowns cannot be passed as known values")
        pos = []
        for leaf in self._comp.leaves:
            if isinstance(leaf, ej.Param):
                pos.append(("p", leaf.name))
            else:
                pos.append(("a", list(args).index(leaf)))
        k = len(self.unknowns)
        comp, params = self._comp, self.params

        def f(*values):
            out = comp(*(params[i] if kind == "p" else values[i] for kind, i in pos))
            A = np.array(out[: k * k], dtype=float).reshape(k, k)
            return np.linalg.solve(A, np.array(out[k * k:], dtype=float))

        return f

    def solve(self, values: dict) -> np.ndarray:
        """``values`` maps every known leaf (jets, coordinates) to a float."""
        args = [self.params[leaf.name] if isinstance(leaf, ej.Param) else values[leaf] for leaf in self._comp.leaves]
        out = self._comp(*args)
        k = len(self.unknowns)
        A = np.array(out[: k * k], dtype=float).reshape(k, k)
        b = np.array(out[k * k:], dtype=float)
        return np.linalg.solve(A, b)


def mechanics_solvers(sys: MultiplierSystem, params=None) -> tuple[JetSolver, JetSolver]:
    """Solvers for (second derivatives, top multiplier jet) and one order higher.

    The first solver uses the field rows plus the time derivative of each
    constraint; the second differentiates all of them once more.
    """
    base = sys.base_space
    lam_order = 0 if sys.kind == NH else 1
    rows = list(sys.field_rows) + [ej.formal_derivative(c, 0) for c in sys.constraint_rows]
    u2 = [ej.Jet(i, (0, 0)) for i in range(base.n)] + [ej.Jet(l.field, (0,) * lam_order) for l in sys.multipliers]
    u3 = [ej.Jet(i, (0, 0, 0)) for i in range(base.n)] + [j.raised(0) for j in u2[base.n:]]
    first = JetSolver(rows, u2, params)
    second = JetSolver([ej.formal_derivative(r, 0) for r in rows], u3, params)
    return first, second


# ----------------------------------------------------------------------------
# Oracle agreement between two sets of field equations


@dataclass
class AgreementResult:
    fit_residual: float  # relative residual of E = C R over varied top jets
    coefficient_norm: float
    on_shell: float  # |E| at points where R = 0 (relative)
    converse: float  # |R| at points where E = 0 (relative)

    def ok(self, tol: float = 1e-8, bound: float = 1e8) -> bool:
        return (
            self.fit_residual <= tol
            and self.on_shell <= tol
            and self.converse <= tol
            and np.isfinite(self.coefficient_norm)
            and self.coefficient_norm <= bound
        )


def _top_jets(exprs: Sequence[Expr], space: Space) -> list[ej.Jet]:
    order = max(e.order for e in exprs)
    return space.all_jets(order)


def _free_jets(exprs: Sequence[Expr], space: Space) -> list[ej.Jet]:
    order = max(e.order for e in exprs)
    return [u for k in range(min(2, order), order + 1) for u in space.all_jets(k)]


def zero_set_agreement(
    E: Sequence[Expr], R: Sequence[Expr], space: Space, point: JetPoint, rng: Xorshift, params=None, samples=None
) -> AgreementResult:
    """Do ``E`` and ``R`` have the same zero set near ``point``?

    Both are affine in the highest jets. Varying those jets randomly at
    fixed lower jets, ``E = C R`` must hold with a single matrix ``C``. The
    check also drives ``R`` to zero by moving the jets of order two and up
    and evaluates ``E`` there, and conversely.
    """
    exprs = list(E) + list(R)
    top = _top_jets(exprs, space)
    free = _free_jets(exprs, space)
    samples = samples or len(R) + 4
    Es, Rs = [], []
    for _ in range(samples):
        p = point
        for u in top:
            p = p.with_value(u, rng.uniform(-2, 2))
        Es.append(ej.evaluate_many(E, p, params))
        Rs.append(ej.evaluate_many(R, p, params))
    Es, Rs = np.array(Es), np.array(Rs)
    C_t, *_ = np.linalg.lstsq(Rs, Es, rcond=None)
    scale = max(1.0, float(np.max(np.abs(Es))))
    fit = float(np.max(np.abs(Rs @ C_t - Es))) / scale
    on = project_jets(R, free, point, params)
    on_shell = float(np.max(np.abs(ej.evaluate_many(E, on, params)))) / scale
    off = project_jets(E, free, point, params)
    rscale = max(1.0, float(np.max(np.abs(Rs))))
    converse = float(np.max(np.abs(ej.evaluate_many(R, off, params)))) / rscale
    return AgreementResult(fit, float(np.max(np.abs(C_t))), on_shell, converse)
