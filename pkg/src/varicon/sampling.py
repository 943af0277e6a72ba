"""Random expressions and jet points for property suites."""

from __future__ import annotations

from . import exprjet as ej
from .exprjet import Expr, JetPoint, Space
from .rng import Xorshift


def random_jet_point(space: Space, rng: Xorshift, order: int = 3, scale: float = 1.0) -> JetPoint:
    """Jet point with entries uniform in ``[-scale, scale]`` and symmetric higher partials."""
    n, m = space.n, space.m
    base = rng.uniform(-scale, scale, (m,))
    values = rng.uniform(-scale, scale, (n,))
    derivs = []
    for k in range(1, 4):
        if k > order:
            derivs.append(None)
            continue
        arr = rng.uniform(-scale, scale, (n,) + (m,) * k)
        derivs.append(ej.symmetrize(arr, k) if k > 1 else arr)
    return JetPoint(base, values, *derivs)


def random_expr(space: Space, rng: Xorshift, depth: int = 6, max_order: int = 2) -> Expr:
    """Smooth, well-conditioned random expression.

    Divisions and square roots are guarded (``1 + u^2`` style denominators)
    so the result is finite and differentiable everywhere; ``abs`` is only
    applied to strictly positive arguments.
    """
    leaves = [ej.Coord(mu) for mu in range(space.m)]
    for order in range(max_order + 1):
        leaves.extend(space.all_jets(order))
    leaves.extend(ej.Param(p) for p in space.param_names)

    def leaf():
        if rng.random() < 0.2:
            return ej.Const(round(rng.uniform(-2.0, 2.0), 3))
        return rng.choice(leaves)

    def build(d):
        if d <= 0 or rng.random() < 0.15:
            return leaf()
        kind = rng.integers(0, 10)
        a = build(d - 1)
        if kind == 0:
            return ej.sin(a)
        if kind == 1:
            return ej.cos(a)
        if kind == 2:
            return ej.sqrt(1.0 + a * a)
        if kind == 3:
            return ej.absolute(2.0 + ej.sin(a))
        if kind == 4:
            return -a
        if kind == 5:
            return a ** ej.Const(float(rng.integers(2, 4)))
        b = build(d - 1)
        if kind == 6:
            return a + b
        if kind == 7:
            return a - b
        if kind == 8:
            return a * b
        return a / (1.0 + b * b)

    return build(depth)


def central_difference(e: Expr, c: Expr, point: JetPoint, params=None, h: float = 1e-5) -> float:
    """Central finite difference of ``e`` in the coordinate ``c`` (step relative to ``max(1, |c|)``)."""
    if isinstance(c, ej.Param):
        params = dict(params or {})
        v = params[c.name]
        step = h * max(1.0, abs(v))
        params[c.name] = v + step
        fp = ej.evaluate(e, point, params)
        params[c.name] = v - step
        fm = ej.evaluate(e, point, params)
        return (fp - fm) / (2 * step)
    v = float(point.get(c))
    step = h * max(1.0, abs(v))
    if isinstance(c, ej.Coord):
        plus, minus = point.with_base(c.mu, v + step), point.with_base(c.mu, v - step)
    else:
        plus, minus = point.with_value(c, v + step), point.with_value(c, v - step)
    return (ej.evaluate(e, plus, params) - ej.evaluate(e, minus, params)) / (2 * step)


def random_params(space: Space, rng: Xorshift, low: float = 0.5, high: float = 2.0) -> dict[str, float]:
    return {p: rng.uniform(low, high) for p in space.param_names}


def bump(t: ej.Expr, a: float, b: float, power: int = 3) -> Expr:
    """``((t - a)(b - t))^power``: vanishes with ``power - 1`` derivatives at both ends."""
    return ((t - a) * (b - t)) ** ej.Const(float(power))
