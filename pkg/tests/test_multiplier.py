import numpy as np
import pytest

from varicon import exprjet as ej
from varicon import skate as sk
from varicon.admissibility import ConstraintSet, random_admissible_point
from varicon.multiplier import (
    MultiplierError,
    JetSolver,
    eliminate_multiplier,
    mechanics_solvers,
    nh_system,
    vak_system,
    zero_set_agreement,
)
from varicon.paramvar import assemble_EF, euler_lagrange
from varicon.rng import Xorshift
from varicon.sampling import random_jet_point

SP = sk.skate_space()
PARAMS = sk.SkateParams(m=1.3, I=0.7, g_eff=9.81).bindings()


def _ext_point(system, rng, order=2):
    return random_jet_point(system.space, rng, order)


def _same(a, b, space, rng, params, order=2, n=8):
    for _ in range(n):
        p = random_jet_point(space, rng, order)
        assert ej.evaluate(a, p, params) == pytest.approx(ej.evaluate(b, p, params), abs=1e-12)


def test_nh_rows_match_hand_form():
    sys = nh_system(sk.lagrangian(), sk.constraints())
    ext = sys.space
    rows = [
        "-m*d(d(x,0),0) - lam*sin(theta)",
        "-m*geff - m*d(d(y,0),0) + lam*cos(theta)",
        "-I*d(d(theta,0),0)",
    ]
    rng = Xorshift(1)
    for r, src in zip(sys.field_rows, rows):
        _same(r, ej.parse(src, ext), ext, rng, PARAMS)
    assert sys.constraint_rows == sk.constraints().phis


def test_nh_elimination_recovers_blade_equation():
    elim = eliminate_multiplier(nh_system(sk.lagrangian(), sk.constraints()), 0)
    # remaining rows: y-row combined with lambda from the x-row, then the theta row
    target = ej.parse("d(d(x,0),0)*cos(theta) + (geff + d(d(y,0),0))*sin(theta)", SP)
    rng = Xorshift(2)
    for _ in range(10):
        p = random_jet_point(SP, rng, 2)
        s = np.sin(p.values[2])
        lhs = ej.evaluate(elim.equations[0], p, PARAMS) * s
        assert lhs == pytest.approx(-PARAMS["m"] * ej.evaluate(target, p, PARAMS), abs=1e-10)
    _same(elim.equations[1], ej.parse("-I*d(d(theta,0),0)", SP), SP, rng, PARAMS)


def test_nh_theta_row_has_no_multiplier():
    with pytest.raises(MultiplierError, match="identically zero"):
        eliminate_multiplier(nh_system(sk.lagrangian(), sk.constraints()), 2)


def test_unconstrained_limit():
    sys = nh_system(sk.lagrangian(), SP)
    assert sys.multipliers == ()
    for r, e in zip(sys.rows, euler_lagrange(sk.lagrangian(), SP)):
        assert r == e


def test_velocity_free_constraint_leaves_equations():
    S = ConstraintSet(SP, ("x - y",))
    sys = nh_system(sk.lagrangian(), S)
    el = euler_lagrange(sk.lagrangian(), SP)
    rng = Xorshift(3)
    for r, e in zip(sys.field_rows, el):
        _same(r, e, sys.space, rng, PARAMS)


def test_vak_theta_row():
    sys = vak_system(sk.lagrangian(), sk.constraints())
    hand = ej.parse("-I*d(d(theta,0),0) + lam*(d(x,0)*cos(theta) + d(y,0)*sin(theta))", sys.space)
    _same(sys.rows[2], hand, sys.space, Xorshift(4), PARAMS)


def test_vak_multiplier_row_is_constraint():
    sys = vak_system(sk.lagrangian(), sk.constraints())
    assert sys.rows[3] == sk.constraints().phis[0]


def test_vak_lambda_zero_reduces_to_free_motion():
    sys = vak_system(sk.lagrangian(), sk.constraints())
    lam = sys.multipliers[0]
    zero = {lam: ej.ZERO, lam.raised(0): ej.ZERO}
    el = euler_lagrange(sk.lagrangian(), SP)
    rng = Xorshift(5)
    for r, e in zip(sys.field_rows, el):
        _same(ej.substitute(r, zero), e, sys.space, rng, PARAMS)


def test_toy_vak_momentum_sum():
    sp = ej.Space(1, ("x", "y"), ("m",))
    sys = vak_system(ej.parse("m/2*(d(x,0)^2 + d(y,0)^2)", sp), ConstraintSet(sp, ("d(x,0) - d(y,0)",)))
    ext = sys.space
    _same(sys.rows[0], ej.parse("-m*d(d(x,0),0) - d(lam,0)", ext), ext, Xorshift(6), {"m": 2.0})
    _same(sys.rows[1], ej.parse("-m*d(d(y,0),0) + d(lam,0)", ext), ext, Xorshift(7), {"m": 2.0})
    _same(sys.rows[0] + sys.rows[1], ej.parse("-m*(d(d(x,0),0) + d(d(y,0),0))", ext), ext, Xorshift(8), {"m": 2.0})


def test_vak_elimination_validity_is_locus():
    elim = eliminate_multiplier(vak_system(sk.lagrangian(), sk.constraints()), 2)
    _same(elim.validity, sk.locus(), SP, Xorshift(9), PARAMS, order=1)
    lam_names = {j.field for j in elim.multiplier.jets()}
    assert all(f < SP.n for f in lam_names)


def test_vak_elimination_matches_reduced_form_up_to_sign():
    elim = sk.eliminated(sk.VAK)
    zi = sk.reduced_vak_equations()
    rng = Xorshift(10)
    for _ in range(10):
        p = random_admissible_point(sk.constraints(), rng, PARAMS)
        if abs(ej.evaluate(sk.locus(), p, PARAMS)) < 1e-2:
            continue
        for a, b in zip(elim.equations, zi):
            assert ej.evaluate(a, p, PARAMS) == pytest.approx(-ej.evaluate(b, p, PARAMS), rel=1e-10, abs=1e-10)


def test_toy_single_field():
    sp = ej.Space(1, ("x",))
    S = ConstraintSet(sp, ("d(x,0) - 1",))
    sys = nh_system(ej.parse("d(x,0)^2/2", sp), S)
    elim = eliminate_multiplier(sys, 0)
    assert not any(j.field >= sp.n for e in elim.equations for j in e.jets())
    p = random_jet_point(sp, Xorshift(11), 2)
    # row -x'' - lam dPhi/dx' = -x'' - lam, so lam = -x''
    assert ej.evaluate(elim.multiplier, p) == pytest.approx(-p.d2[0, 0, 0])


def test_elimination_errors():
    sp = ej.Space(1, ("x", "y"))
    two = ConstraintSet(sp, ("d(x,0)", "d(y,0)"))
    with pytest.raises(MultiplierError):
        eliminate_multiplier(nh_system(ej.parse("d(x,0)^2", sp), two), 0)
    with pytest.raises(MultiplierError):
        eliminate_multiplier(vak_system(sk.lagrangian(), sk.constraints()), 3)
    with pytest.raises(MultiplierError):
        nh_system(ej.parse("J0", ej.Space(4, ("J0",))), ej.Space(4, ("J0",)))


@pytest.mark.parametrize("method,P", [(sk.NH, sk.nh_parametrization), (sk.VAK, sk.vak_parametrization)])
def test_oracle_agreement(method, P):
    form = assemble_EF(sk.lagrangian(), P())
    elim = sk.eliminated(method)
    dphi = [ej.formal_derivative(sk.constraints().phis[0], 0)]
    rng = Xorshift(12)
    checked = 0
    while checked < 8:
        p = random_admissible_point(sk.constraints(), rng, PARAMS)
        if abs(ej.evaluate(sk.locus(), p, PARAMS)) < 1e-3:
            continue
        res = zero_set_agreement(list(form.E) + dphi, list(elim.equations) + dphi, SP, p, rng, PARAMS)
        assert res.ok(1e-8), res
        checked += 1


def test_agreement_detects_different_equations():
    form = assemble_EF(sk.lagrangian(), sk.nh_parametrization())
    wrong = sk.eliminated(sk.VAK)
    dphi = [ej.formal_derivative(sk.constraints().phis[0], 0)]
    rng = Xorshift(13)
    p = random_admissible_point(sk.constraints(), rng, PARAMS)
    res = zero_set_agreement(list(form.E) + dphi, list(wrong.equations) + dphi, SP, p, rng, PARAMS)
    assert not res.ok(1e-8)


def test_jet_solver_linear_system():
    sys = vak_system(sk.lagrangian(), sk.constraints())
    first, _ = mechanics_solvers(sys, PARAMS)
    rng = Xorshift(14)
    p = random_admissible_point(sk.constraints(), rng, PARAMS)
    lam = sys.multipliers[0]
    values = {leaf: float(p.get(leaf)) if leaf.field < SP.n else 0.3 for leaf in first.known if isinstance(leaf, ej.Jet)}
    values.update({leaf: float(p.base[0]) for leaf in first.known if isinstance(leaf, ej.Coord)})
    u = first.solve(values)
    assert u.shape == (4,)
    f = first.bind(list(values))
    assert np.allclose(f(*values.values()), u)
    with pytest.raises(MultiplierError):
        JetSolver([sys.rows[0]], [SP.jet("x", 0, 0), lam])
