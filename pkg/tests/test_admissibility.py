import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from varicon import exprjet as ej
from varicon.admissibility import (
    AdmissibilityError,
    ConstraintSet,
    SectionExpr,
    VerticalField,
    admissibility_report,
    admissibility_residual,
    chetaev_kernel,
    chetaev_matrix,
    chetaev_residual,
    linear_integrable_equivalence_check,
    prolong,
    random_admissible_point,
    stacked_chetaev,
    tangency_exprs,
    vak_tangency_residual,
)
from varicon.rng import Xorshift
from varicon.sampling import random_jet_point

SKATE = ej.Space(1, ("x", "y", "theta"))
PHI = "d(x,0)*sin(theta) - d(y,0)*cos(theta)"
FLUID = ej.Space(4, ("J0", "J1", "J2", "J3"))


@pytest.fixture
def S():
    return ConstraintSet(SKATE, (PHI,))


def test_prolong_polynomial():
    jp = prolong(SectionExpr(SKATE, ("t", "t^2", "0")), 1)(2.0)
    assert np.allclose(jp.values, [2, 4, 0])
    assert np.allclose(jp.d1[:, 0], [1, 4, 0])


def test_prolong_constant_and_sine():
    jp = prolong(SectionExpr(SKATE, ("1.5", "-2", "0.3")), 3)(0.7)
    assert not jp.d1.any() and not jp.d2.any() and not jp.d3.any()
    jp = prolong(SectionExpr(SKATE, ("sin(t)", "0", "0")), 2)(0.0)
    assert jp.values[0] == 0.0 and jp.d1[0, 0] == 1.0 and jp.d2[0, 0, 0] == 0.0


def test_prolong_order_overflow():
    with pytest.raises(ej.OrderOverflow):
        prolong(SectionExpr(SKATE, ("t", "t", "t")), 4)


def test_section_rejects_field_references():
    with pytest.raises(AdmissibilityError):
        SectionExpr(SKATE, ("x", "0", "0"))


def test_constraint_order_limit():
    with pytest.raises(AdmissibilityError):
        ConstraintSet(SKATE, ("d(d(x,0),0)",))


def test_residual_examples(S):
    th0 = 0.4
    along = SectionExpr(SKATE, (f"cos({th0})*(t - t^2)", f"sin({th0})*(t - t^2)", f"{th0}"))
    assert admissibility_residual(S, along, np.linspace(0, 2, 9))[0] <= 1e-15
    sideways = SectionExpr(SKATE, ("t", "t", f"{math.pi / 2!r}"))
    assert admissibility_residual(S, sideways, [0.5, 1.0])[0] == pytest.approx(1.0)
    div = ConstraintSet(FLUID, ("d(J0,0) + d(J1,1) + d(J2,2) + d(J3,3)",))
    static = SectionExpr(FLUID, ("1.3", "0", "0", "0"))
    assert admissibility_residual(div, static, [[0, 0, 0, 0], [1, 2, 3, 4]])[0] == 0.0


def test_report_records(S):
    sigma = SectionExpr(SKATE, ("t", "t", "0.7"))
    recs = admissibility_report(S, sigma, [0.0, 1.0])
    assert len(recs) == 2
    assert set(recs[0]) == {"point", "alpha", "residual", "rank", "kernel_dim"}
    assert recs[0]["rank"] + recs[0]["kernel_dim"] == 3


def test_chetaev_matrix_skate_at_zero(S):
    p = ej.JetPoint.mechanics(0.0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert np.allclose(chetaev_matrix(S, p), [[0.0, -1.0, 0.0]])


def test_chetaev_matrix_fluid_identity_and_velocity_free():
    div = ConstraintSet(FLUID, ("d(J0,0) + d(J1,1) + d(J2,2) + d(J3,3)",))
    p = random_jet_point(FLUID, Xorshift(3), 1)
    assert np.array_equal(stacked_chetaev(div, p), np.eye(4))
    assert chetaev_kernel(div, p).dim == 0
    holo = ConstraintSet(SKATE, ("x - y",))
    q = random_jet_point(SKATE, Xorshift(4), 1)
    assert not chetaev_matrix(holo, q).any()
    assert chetaev_kernel(holo, q).dim == 3


def test_chetaev_kernel_skate_at_zero(S):
    p = ej.JetPoint.mechanics(0.0, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    ker = chetaev_kernel(S, p)
    assert ker.dim == 2
    # span{(1,0,0),(0,0,1)}: projector onto the kernel
    P = ker.basis @ ker.basis.T
    assert np.allclose(P, np.diag([1.0, 0.0, 1.0]), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_kernel_dim_plus_rank(seed):
    rng = Xorshift(seed)
    S = ConstraintSet(SKATE, (PHI, "d(theta,0) - x*d(y,0)"))
    p = random_jet_point(SKATE, rng, 1)
    ker = chetaev_kernel(S, p)
    assert ker.dim + ker.rank == SKATE.n
    B = stacked_chetaev(S, p)
    c = np.array([rng.uniform(-1, 1) for _ in range(ker.dim)])
    assert np.max(np.abs(B @ (ker.basis @ c)), initial=0.0) <= 1e-12


def test_tangency_example_skate(S):
    # V = (cos th, sin th, 0): sin(th)*(-sin(th) th') - cos(th)*(cos(th) th') = -th'
    V = VerticalField(SKATE, ("cos(theta)", "sin(theta)", "0"))
    rng = Xorshift(8)
    expr = tangency_exprs(S, V)[0]
    for _ in range(10):
        p = random_admissible_point(S, rng)
        assert ej.evaluate(expr, p) == pytest.approx(-p.d1[2, 0], abs=1e-14)


def test_tangency_zero_field(S):
    sigma = SectionExpr(SKATE, ("t^2", "t", "0.2"))
    res = vak_tangency_residual(S, VerticalField.zero(SKATE), sigma, [0.0, 0.5, 1.0])
    assert not res.any()


def test_chetaev_residual_for_nh_field(S):
    sigma = SectionExpr(SKATE, ("t^2", "t^3", "sin(t)"))
    V = VerticalField(SKATE, ("cos(theta)", "sin(theta)", "1"))
    assert np.max(np.abs(chetaev_residual(S, V, sigma, np.linspace(0, 1, 7)))) <= 1e-15


def test_random_admissible_point(S):
    rng = Xorshift(17)
    for _ in range(5):
        p = random_admissible_point(S, rng)
        phi = S.phis[0]
        assert abs(ej.evaluate(phi, p)) <= 1e-12
        assert abs(ej.evaluate(ej.formal_derivative(phi, 0), p)) <= 1e-12


def test_equivalence_theorem_linear():
    sp = ej.Space(1, ("q1", "q2"))
    f = ej.parse("q1 - q2", sp)
    sigma = SectionExpr(sp, ("sin(t)", "sin(t) + 0.5"))
    rep = linear_integrable_equivalence_check(f, sigma, 10, (0.0, 1.0), Xorshift(5))
    assert rep.passed
    assert max(rep.chetaev_to_vak) <= 1e-9 and max(rep.vak_to_chetaev) <= 1e-7


def test_equivalence_nonlinear_f():
    sp = ej.Space(1, ("q1", "q2"))
    f = ej.parse("q1^2 + sin(q2)", sp)
    sigma = SectionExpr(sp, ("1 + 0.3*t", "0.2*t^2"))
    rep = linear_integrable_equivalence_check(f, sigma, 5, (0.0, 1.0), Xorshift(6))
    assert rep.passed, rep.violations


def test_equivalence_constant_f():
    sp = ej.Space(1, ("q1", "q2"))
    rep = linear_integrable_equivalence_check(ej.Const(2.0), SectionExpr(sp, ("t", "t")), 4, rng=Xorshift(1))
    assert rep.passed and rep.vak_to_chetaev == [0.0] * 4


def test_negative_control_violates_both():
    # f = q1 and V1 = (t - a)(b - t): neither Chetaev nor vak admissible
    sp = ej.Space(1, ("q1",))
    S = ConstraintSet(sp, ("d(q1,0)",))
    V = VerticalField(sp, ("t*(1 - t)",))
    sigma = SectionExpr(sp, ("t",))
    pts = [0.2, 0.5]
    assert np.min(np.abs(chetaev_residual(S, V, sigma, pts))) > 0.1
    assert np.min(np.abs(vak_tangency_residual(S, V, sigma, [0.2, 0.8]))) > 0.1
