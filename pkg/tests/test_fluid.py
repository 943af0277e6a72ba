import math

import numpy as np
import pytest

from varicon import exprjet as ej
from varicon import fluid as fl
from varicon.admissibility import ConstraintSet, prolong, random_jet_point
from varicon.rng import Xorshift

SP = fl.fluid_space()
FLAT = fl.Metric.minkowski(SP)


def rand_points(rng, n=20, lo=-1.0, hi=1.0):
    return np.array([[rng.uniform(lo, hi) for _ in range(4)] for _ in range(n)])


def test_state_at_rest():
    s = fl.extract_state(fl.static_uniform(2.0, "rho"), FLAT, [0.1, 0.2, 0.3, 0.4])
    assert s.rho == pytest.approx(2.0)
    assert np.allclose(s.u_lower, [-1, 0, 0, 0]) and np.allclose(s.u_upper, [1, 0, 0, 0])
    # e = rho: P = rho^2, mu = rho (1 + rho)
    assert s.P == pytest.approx(4.0) and s.mu == pytest.approx(6.0)
    assert s.normalization() == pytest.approx(-1.0)


def test_dust_state():
    s = fl.extract_state(fl.boosted_dust(1.0, 0.7), FLAT, [0, 0, 0, 0])
    assert s.P == 0.0 and s.mu == pytest.approx(1.0) and s.rho == pytest.approx(1.0)
    assert s.u_upper[1] == pytest.approx(math.sinh(0.7))


def test_spacelike_current_rejected():
    f = fl.FluidField.build(("1", "2", "0", "0"), "rho")
    with pytest.raises(fl.FluidError):
        fl.extract_state(f, FLAT, [0, 0, 0, 0])


def test_normalization_random_currents():
    rng = Xorshift(3)
    for _ in range(5):
        f = fl.random_divergence_free(rng)
        for x in rand_points(rng, 4):
            assert fl.extract_state(f, FLAT, x).normalization() == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("J,expect", [(("x1", "0", "0", "0"), 0.0), (("x0", "0", "0", "0"), 1.0), (("0", "x1", "x2", "-2*x3"), 0.0)])
def test_continuity_examples(J, expect):
    f = fl.FluidField.build(J, "rho")
    assert np.allclose(fl.continuity_residual(f, [[0.3, 0.5, -0.2, 1.0]]), expect)


def test_static_and_dust_are_solutions():
    rng = Xorshift(8)
    pts = rand_points(rng)
    for f in (fl.static_uniform(1.3, "rho^2"), fl.boosted_dust(2.0, -0.4)):
        assert np.max(np.abs(fl.euler_residual(f, FLAT, pts))) < 1e-12


def test_pressure_gradient_residual_matches_finite_difference():
    # at rest u_m = (-1, 0, 0, 0), so R_m reduces to the spatial gradient of P
    f = fl.pressure_gradient(1.0, 0.3, "rho")
    rng = Xorshift(9)
    for x in rand_points(rng, 10):
        R = fl.euler_residual(f, FLAT, x)[0]
        h = 1e-5
        xp, xm = x.copy(), x.copy()
        xp[1] += h
        xm[1] -= h
        dP = (fl.pressure(f, FLAT, xp)[0] - fl.pressure(f, FLAT, xm)[0]) / (2 * h)
        assert R[1] == pytest.approx(dP, rel=1e-7)
        assert abs(R[0]) < 1e-12 and abs(R[2]) < 1e-12


def test_thermodynamic_identities():
    F = fl.forms(fl.static_uniform(1.0, "rho^2 + 0.5*log(rho)"), FLAT)
    for rho in (0.3, 1.0, 4.5):
        a, b = F.identity_residuals(rho)
        assert abs(a) < 1e-10 and abs(b) < 1e-10


def test_lie_drag_example():
    f = fl.FluidField.build(("1", "0", "0", "0"), "rho")
    drag = fl.lie_drag(SP, ("0", "x0", "0", "0"))
    jp = prolong(f.section, 1)(np.array([0.2, 0.1, 0.0, 0.5]))
    vals = ej.evaluate_many(drag.components, jp)
    assert np.allclose(np.ravel(vals), [0, -1, 0, 0])


def test_lie_drag_keeps_divergence_free():
    rng = Xorshift(4)
    for _ in range(3):
        f = fl.random_divergence_free(rng)
        X = fl.random_vector(rng)
        assert np.max(np.abs(fl.lie_drag_divergence(f, X, rand_points(rng)))) < 1e-10


def test_lie_divergence_identity():
    rng = Xorshift(6)
    lhs, rhs = fl.lie_identity_exprs(SP, fl.random_vector(rng))
    for _ in range(10):
        p = random_jet_point(SP, rng)
        assert float(ej.evaluate(lhs - rhs, p)) == pytest.approx(0.0, abs=1e-9)


def test_lie_drag_parametrization_reproduces_drag():
    rng = Xorshift(2)
    P = fl.lie_drag_parametrization(SP)
    X = [ej.Const(rng.uniform(-1, 1)) for _ in range(4)]
    direct = fl.lie_drag(SP, X).components
    p = random_jet_point(SP, rng)
    via = [ej.total(P.p[a][A] * X[A] for A in range(4)) for a in range(4)]
    assert np.allclose(ej.evaluate_many(via, p), ej.evaluate_many(direct, p))


def test_chetaev_trivial_for_continuity():
    rng = Xorshift(1)
    pts = [random_jet_point(SP, rng) for _ in range(10)]
    rep = fl.chetaev_triviality(fl.continuity_constraint(SP), pts)
    assert rep.chetaev_trivial and rep.identity_pattern
    assert rep.verdict == fl.NON_PHYSICAL


def test_chetaev_control_has_variations():
    rng = Xorshift(1)
    rep = fl.chetaev_triviality(ConstraintSet(SP, (SP.jet(0),)), [random_jet_point(SP, rng)])
    assert not rep.chetaev_trivial
    assert rep.as_dict()["max_kernel_dim"] > 0


def test_curved_metric_christoffel():
    sp = fl.fluid_space(("k",))
    g = fl.Metric(sp, (("-1", "0", "0", "0"), ("0", "exp(k*x0)", "0", "0"), ("0", "0", "1", "0"), ("0", "0", "0", "1")))
    x = np.array([[0.3], [0.0], [0.0], [0.0]])
    G = g.christoffel(x, {"k": 0.8})[0]
    a = math.exp(0.8 * 0.3)
    # Gamma^0_{11} = k a / 2, Gamma^1_{01} = k / 2
    assert G[0, 1, 1] == pytest.approx(0.4 * a)
    assert G[1, 0, 1] == pytest.approx(0.4) and G[1, 1, 0] == pytest.approx(0.4)


def test_metric_must_be_symmetric():
    with pytest.raises(fl.FluidError):
        fl.Metric(SP, (("-1", "x1", "0", "0"), ("0", "1", "0", "0"), ("0", "0", "1", "0"), ("0", "0", "0", "1")))


def test_degenerate_metric_rejected():
    g = fl.Metric(SP, (("-1", "0", "0", "0"), ("0", "0", "0", "0"), ("0", "0", "1", "0"), ("0", "0", "0", "1")))
    with pytest.raises(fl.FluidError):
        fl.euler_residual(fl.static_uniform(), g, [[0, 0, 0, 0]])


BOX = [(0.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)]


def test_first_variation_equals_minus_pairing():
    f = fl.pressure_gradient(1.0, 0.3, "rho")
    X = fl.bump_vector(BOX, 1, power=6)
    dS = fl.fluid_first_variation(f, FLAT, X, BOX, 16)
    pair = fl.residual_pairing(f, FLAT, X, BOX, 16)
    assert abs(pair) > 1e-3
    assert abs(dS + pair) <= 1e-3 * abs(pair)


def test_first_variation_vanishes_on_solutions():
    X = fl.bump_vector(BOX, 2, power=6)
    assert abs(fl.fluid_first_variation(fl.static_uniform(1.0, "rho"), FLAT, X, BOX, 8)) < 1e-12
    assert fl.fluid_first_variation(fl.pressure_gradient(), FLAT, ("0", "0", "0", "0"), BOX, 8) == 0.0


def test_variation_field_must_vanish_on_boundary():
    with pytest.raises(fl.FluidError):
        fl.fluid_first_variation(fl.static_uniform(), FLAT, ("0", "1", "0", "0"), BOX, 4)


def test_twist_is_unfaithful():
    rep = fl.twist_counterexample()
    assert rep.demonstrates_unfaithful
    assert rep.max_X_on_boundary == pytest.approx(1.0)
