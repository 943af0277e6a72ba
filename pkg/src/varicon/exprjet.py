"""Expressions over jet-bundle coordinates.

An :class:`Expr` is an immutable tree whose leaves are literals, named
parameters, base coordinates ``x^mu`` and jet coordinates ``y^i_{mu...}``.
Derivatives are symbolic: :func:`diff` takes the partial derivative with
respect to one coordinate (all others held independent) and
:func:`formal_derivative` applies the total derivative ``d_mu``.

Only constant folding and 0/1 absorption are performed on construction.
Trees are compared by value and carry a cached hash, so they can be used
as dictionary keys and shared freely between threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_ORDER = 3

UNARY_OPS = ("neg", "sin", "cos", "sqrt", "abs", "sign", "exp", "log")
FUNCTIONS = ("sin", "cos", "sqrt", "abs", "sign", "exp", "log", "pow")
_RESERVED = set(FUNCTIONS) | {"d", "t"}


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax error; ``offset`` is the byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownIdentifier(ParseError):
    pass


class OrderOverflow(ExprError):
    pass


class EvaluationError(ExprError):
    pass


@dataclass(frozen=True)
class Space:
    """Coordinates of a configuration bundle: ``m`` base directions, ``n`` fields."""

    base_dim: int
    field_names: tuple[str, ...]
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "field_names", tuple(self.field_names))
        object.__setattr__(self, "param_names", tuple(self.param_names))
        if self.base_dim < 1:
            raise ValueError("base_dim must be >= 1")
        names = self.field_names + self.param_names
        if len(set(names)) != len(names):
            raise ValueError(f"field and parameter names must be unique: {names}")
        base = {f"x{mu}" for mu in range(self.base_dim)}
        for name in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise ValueError(f"invalid identifier {name!r}")
            if name in _RESERVED or name in base:
                raise ValueError(f"{name!r} is reserved")

    @property
    def n(self) -> int:
        return len(self.field_names)

    @property
    def m(self) -> int:
        return self.base_dim

    def field_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.n:
                raise IndexError(f"field index {name} out of range")
            return int(name)
        try:
            return self.field_names.index(name)
        except ValueError:
            raise KeyError(f"unknown field {name!r}") from None

    def jet(self, field: str | int, *mu: int) -> "Jet":
        for k in mu:
            if not 0 <= k < self.base_dim:
                raise IndexError(f"base index {k} out of range")
        return Jet(self.field_index(field), tuple(mu))

    def fields(self) -> list["Jet"]:
        return [Jet(i, ()) for i in range(self.n)]

    def coord(self, mu: int) -> "Coord":
        if not 0 <= mu < self.base_dim:
            raise IndexError(f"base index {mu} out of range")
        return Coord(mu)

    def param(self, name: str) -> "Param":
        if name not in self.param_names:
            raise KeyError(f"unknown parameter {name!r}")
        return Param(name)

    def base_name(self, mu: int) -> str:
        return "t" if self.base_dim == 1 else f"x{mu}"

    def extend(self, extra_fields: Sequence[str]) -> "Space":
        """Same base and parameters with additional fields appended."""
        return Space(self.base_dim, self.field_names + tuple(extra_fields), self.param_names)

    def all_jets(self, order: int) -> list["Jet"]:
        """Every canonical jet coordinate of exactly the given order."""
        out = []
        for i in range(self.n):
            for idx in _sorted_multi_indices(self.base_dim, order):
                out.append(Jet(i, idx))
        return out


def _sorted_multi_indices(m: int, order: int) -> list[tuple[int, ...]]:
    if order == 0:
        return [()]
    out = []
    for head in _sorted_multi_indices(m, order - 1):
        start = head[-1] if head else 0
        for mu in range(start, m):
            out.append(head + (mu,))
    return out


# ----------------------------------------------------------------------------
# Tree nodes


class Expr:
    __slots__ = ("_hash", "symbols", "order", "size")

    precedence = 5

    def _init(self, key, children: Iterable["Expr"] = ()):
        children = tuple(children)
        self._hash = hash((type(self).__name__, key))
        syms: frozenset = frozenset()
        order = 0
        size = 1
        for c in children:
            syms = syms | c.symbols
            order = max(order, c.order)
            size += c.size
        self.symbols = syms
        self.order = order
        self.size = size

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __ne__(self, other):
        return not self == other

    def _key(self):
        raise NotImplementedError

    def __repr__(self):
        return f"Expr({to_source(self)!r})"

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __rpow__(self, other):
        return power(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def jets(self) -> list["Jet"]:
        return sorted((s for s in self.symbols if isinstance(s, Jet)), key=Jet.sort_key)

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise ExprError(f"non-finite literal {value}")
        self.value = value
        self._init(value)

    def _key(self):
        return self.value

    @property
    def precedence(self):
        return 3 if self.value < 0 else 5


class Param(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name
        self._init(name)
        self.symbols = frozenset([self])

    def _key(self):
        return self.name


class Coord(Expr):
    """Base coordinate ``x^mu``."""

    __slots__ = ("mu",)

    def __init__(self, mu: int):
        self.mu = int(mu)
        self._init(self.mu)
        self.symbols = frozenset([self])

    def _key(self):
        return self.mu


class Jet(Expr):
    """Jet coordinate of field ``field`` with a sorted multi-index of base directions."""

    __slots__ = ("field", "idx")

    def __init__(self, field: int, idx: Sequence[int] = ()):
        idx = tuple(sorted(int(k) for k in idx))
        if len(idx) > MAX_ORDER:
            raise OrderOverflow(f"jet order {len(idx)} exceeds {MAX_ORDER}")
        self.field = int(field)
        self.idx = idx
        self._init((self.field, idx))
        self.symbols = frozenset([self])
        self.order = len(idx)

    def _key(self):
        return (self.field, self.idx)

    def sort_key(self):
        return (len(self.idx), self.field, self.idx)

    def raised(self, mu: int) -> "Jet":
        return Jet(self.field, self.idx + (mu,))


class Unary(Expr):
    __slots__ = ("op", "arg")

    def __init__(self, op: str, arg: Expr):
        if op not in UNARY_OPS:
            raise ExprError(f"unknown unary op {op!r}")
        self.op = op
        self.arg = arg
        self._init((op, arg._hash), (arg,))

    def _key(self):
        return (self.op, self.arg)

    @property
    def precedence(self):
        return 3 if self.op == "neg" else 5


_BINARY_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


class Binary(Expr):
    __slots__ = ("op", "left", "right")

    def __init__(self, op: str, left: Expr, right: Expr):
        if op not in _BINARY_PREC:
            raise ExprError(f"unknown binary op {op!r}")
        self.op = op
        self.left = left
        self.right = right
        self._init((op, left._hash, right._hash), (left, right))

    def _key(self):
        return (self.op, self.left, self.right)

    @property
    def precedence(self):
        return _BINARY_PREC[self.op]


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.integer, np.floating)):
        return Const(float(v))
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def const(v: float) -> Const:
    return Const(v)


# ----------------------------------------------------------------------------
# Folding constructors

_MATH_UNARY = {
    "sin": math.sin,
    "cos": math.cos,
    "sqrt": math.sqrt,
    "abs": abs,
    "sign": lambda v: float(int(v > 0) - int(v < 0)),
    "exp": math.exp,
    "log": math.log,
}


def _try_fold(fn, *args):
    try:
        v = fn(*args)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    if isinstance(v, complex) or not math.isfinite(v):
        return None
    return Const(v)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value) if a.value != 0.0 else ZERO
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(op: str, a: Expr) -> Expr:
    if op == "neg":
        return neg(a)
    if isinstance(a, Const):
        folded = _try_fold(_MATH_UNARY[op], a.value)
        if folded is not None:
            return folded
    return Unary(op, a)


def sin(a):
    return func("sin", as_expr(a))


def cos(a):
    return func("cos", as_expr(a))


def sqrt(a):
    return func("sqrt", as_expr(a))


def absolute(a):
    return func("abs", as_expr(a))


def sign(a):
    return func("sign", as_expr(a))


def exp(a):
    return func("exp", as_expr(a))


def log(a):
    return func("log", as_expr(a))


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    return Binary("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if b.is_zero():
        return a
    if a.is_zero():
        return neg(b)
    return Binary("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a.is_zero() or b.is_zero():
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Const) and a.value == -1.0:
        return neg(b)
    if isinstance(b, Const) and b.value == -1.0:
        return neg(a)
    return Binary("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if b.is_zero():
        raise ZeroDivisionError("division by literal zero")
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    if a.is_zero():
        return ZERO
    if b == ONE:
        return a
    return Binary("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if b.is_zero():
        return ONE
    if b == ONE:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        folded = _try_fold(math.pow, a.value, b.value)
        if folded is not None:
            return folded
    return Binary("^", a, b)


def total(terms: Iterable[Expr]) -> Expr:
    out: Expr = ZERO
    for t in terms:
        out = add(out, t)
    return out


_BINARY_BUILD = {"+": add, "-": sub, "*": mul, "/": div, "^": power}


def rebuild(e: Expr, children: Sequence[Expr]) -> Expr:
    if isinstance(e, Unary):
        return func(e.op, children[0])
    if isinstance(e, Binary):
        return _BINARY_BUILD[e.op](children[0], children[1])
    return e


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Unary):
        return (e.arg,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    return ()


def _postorder(e: Expr) -> list[Expr]:
    """Unique nodes of ``e`` with every child before its parent."""
    seen: set = set()
    out: list[Expr] = []
    stack = [(e, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
            continue
        if node in seen:
            continue
        seen.add(node)
        stack.append((node, True))
        for c in reversed(children(node)):
            if c not in seen:
                stack.append((c, False))
    # a node may have been appended before a duplicate pushed later got seen
    uniq: list[Expr] = []
    done: set = set()
    for node in out:
        if node not in done:
            done.add(node)
            uniq.append(node)
    return uniq


def substitute(e: Expr, mapping: Mapping[Expr, Expr]) -> Expr:
    """Replace leaves (jets, coordinates, parameters) by expressions."""
    if not mapping or not (e.symbols & set(mapping)):
        return e
    memo: dict[Expr, Expr] = {}
    for node in _postorder(e):
        if node in mapping:
            memo[node] = as_expr(mapping[node])
        elif not (node.symbols & mapping.keys()):
            memo[node] = node
        else:
            memo[node] = rebuild(node, [memo[c] for c in children(node)])
    return memo[e]


# ----------------------------------------------------------------------------
# Differentiation


def diff(e: Expr, c: Expr) -> Expr:
    """Partial derivative of ``e`` with respect to the leaf ``c`` (a Jet or Coord)."""
    if not isinstance(c, (Jet, Coord, Param)):
        raise TypeError("can only differentiate with respect to a coordinate")
    if c not in e.symbols:
        return ZERO
    memo: dict[Expr, Expr] = {}
    for node in _postorder(e):
        if c not in node.symbols:
            memo[node] = ZERO
            continue
        if isinstance(node, (Jet, Coord, Param)):
            memo[node] = ONE if node == c else ZERO
        elif isinstance(node, Unary):
            memo[node] = _diff_unary(node, memo[node.arg])
        else:
            memo[node] = _diff_binary(node, memo[node.left], memo[node.right])
    return memo[e]


def _diff_unary(node: Unary, da: Expr) -> Expr:
    a = node.arg
    op = node.op
    if da.is_zero():
        return ZERO
    if op == "neg":
        return neg(da)
    if op == "sin":
        return mul(cos(a), da)
    if op == "cos":
        return neg(mul(sin(a), da))
    if op == "sqrt":
        return div(da, mul(Const(2.0), node))
    if op == "abs":
        return mul(sign(a), da)
    if op == "sign":
        return ZERO
    if op == "exp":
        return mul(node, da)
    if op == "log":
        return div(da, a)
    raise ExprError(f"no derivative rule for {op}")


def _diff_binary(node: Binary, da: Expr, db: Expr) -> Expr:
    a, b, op = node.left, node.right, node.op
    if op == "+":
        return add(da, db)
    if op == "-":
        return sub(da, db)
    if op == "*":
        return add(mul(da, b), mul(a, db))
    if op == "/":
        return sub(div(da, b), div(mul(a, db), power(b, Const(2.0))))
    # a ^ b
    if db.is_zero():
        if isinstance(b, Const):
            return mul(mul(b, power(a, Const(b.value - 1.0))), da)
        return mul(mul(b, power(a, sub(b, ONE))), da)
    return mul(node, add(mul(db, log(a)), div(mul(b, da), a)))


def formal_derivative(e: Expr, mu: int) -> Expr:
    """Total derivative ``d_mu e``: explicit ``x^mu`` dependence plus the chain rule over jets."""
    if e.order >= MAX_ORDER:
        raise OrderOverflow(f"d_{mu} of an order-{e.order} expression needs order-{e.order + 1} jets")
    out = diff(e, Coord(mu))
    for c in e.jets():
        out = add(out, mul(diff(e, c), c.raised(mu)))
    return out


def is_affine_in(e: Expr, unknowns: Sequence[Expr]) -> bool:
    """True when every second partial with respect to ``unknowns`` folds to zero."""
    for u in unknowns:
        du = diff(e, u)
        for v in unknowns:
            if not diff(du, v).is_zero():
                return False
    return True


# ----------------------------------------------------------------------------
# Printing


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(e: Expr, space: Space | None = None) -> str:
    """Render ``e`` in the parser's grammar (round-trips through :func:`parse`)."""
    memo: dict[Expr, str] = {}
    for node in _postorder(e):
        memo[node] = _print_node(node, memo, space)
    return memo[e]


def _wrap(child: Expr, s: str, min_prec: int) -> str:
    return f"({s})" if child.precedence < min_prec else s


def _print_node(node: Expr, memo, space: Space | None) -> str:
    if isinstance(node, Const):
        return _fmt_number(node.value)
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Coord):
        if space is not None:
            return space.base_name(node.mu)
        return f"x{node.mu}"
    if isinstance(node, Jet):
        s = space.field_names[node.field] if space is not None else f"y{node.field}"
        for mu in node.idx:
            s = f"d({s},{mu})"
        return s
    if isinstance(node, Unary):
        a = memo[node.arg]
        if node.op == "neg":
            return "-" + _wrap(node.arg, a, 4)
        return f"{node.op}({a})"
    a, b = memo[node.left], memo[node.right]
    op = node.op
    if op == "^":
        return f"{_wrap(node.left, a, 5)}^{_wrap(node.right, b, 3)}"
    prec = _BINARY_PREC[op]
    left = _wrap(node.left, a, prec)
    right = _wrap(node.right, b, prec + 1 if prec == 1 else 3)
    return f"{left} {op} {right}" if prec == 1 else f"{left}{op}{right}"


# ----------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


class _Parser:
    def __init__(self, src: str, space: Space):
        self.src = src
        self.space = space
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(src):
            mt = _TOKEN.match(src, pos)
            if mt is None:
                raise ParseError(f"unexpected character {src[pos]!r}", self._byte(pos))
            kind = mt.lastgroup
            if kind != "ws":
                self.tokens.append((kind, mt.group(), pos))
            pos = mt.end()
        self.tokens.append(("end", "", len(src)))
        self.i = 0

    def _byte(self, pos: int) -> int:
        return len(self.src[:pos].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None, cls=ParseError):
        tok = tok or self.peek()
        return cls(msg, self._byte(tok[2]))

    def expect(self, text):
        tok = self.next()
        if tok[1] != text:
            found = tok[1] or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}", tok)
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            tok = self.next()
            rhs = self.unary()
            if tok[1] == "*":
                e = mul(e, rhs)
            else:
                if rhs.is_zero():
                    raise self.error("division by literal zero", tok)
                e = div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.next()
            return neg(self.unary())
        if self.peek()[1] == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.next()
            return power(base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.next()
        kind, text, _ = tok
        if kind == "num":
            return Const(float(text))
        if text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if text == "d":
                return self.derivative(tok, depth=1)
            if text in FUNCTIONS:
                self.expect("(")
                a = self.expr()
                if text == "pow":
                    self.expect(",")
                    b = self.expr()
                    self.expect(")")
                    return power(a, b)
                self.expect(")")
                return func(text, a)
            return self.identifier(tok)
        found = text or "end of input"
        raise self.error(f"unexpected token {found!r}", tok)

    def identifier(self, tok) -> Expr:
        text = tok[1]
        sp = self.space
        if text in sp.field_names:
            return Jet(sp.field_names.index(text), ())
        if text in sp.param_names:
            return Param(text)
        if text == "t" and sp.base_dim == 1:
            return Coord(0)
        mt = re.fullmatch(r"x(\d+)", text)
        if mt and int(mt.group(1)) < sp.base_dim:
            return Coord(int(mt.group(1)))
        raise self.error(f"unknown identifier {text!r}", tok, UnknownIdentifier)

    def derivative(self, dtok, depth: int) -> Jet:
        if depth > MAX_ORDER:
            raise self.error(f"derivative operator nested deeper than {MAX_ORDER}", dtok)
        self.expect("(")
        tok = self.next()
        if tok[1] == "d":
            inner = self.derivative(tok, depth + 1)
        elif tok[0] == "ident" and tok[1] in self.space.field_names:
            inner = Jet(self.space.field_names.index(tok[1]), ())
        elif tok[0] == "ident" and tok[1] not in FUNCTIONS and not self._known(tok[1]):
            raise self.error(f"unknown identifier {tok[1]!r}", tok, UnknownIdentifier)
        else:
            raise self.error("derivative operator applied to a non-field", tok)
        self.expect(",")
        itok = self.next()
        if itok[0] != "num" or not itok[1].isdigit():
            raise self.error("base index must be a non-negative integer", itok)
        mu = int(itok[1])
        if mu >= self.space.base_dim:
            raise self.error(f"base index {mu} out of range for m={self.space.base_dim}", itok)
        self.expect(")")
        return inner.raised(mu)

    def _known(self, name: str) -> bool:
        sp = self.space
        if name in sp.param_names or (name == "t" and sp.base_dim == 1):
            return True
        mt = re.fullmatch(r"x(\d+)", name)
        return bool(mt and int(mt.group(1)) < sp.base_dim)


def parse(src: str, space: Space) -> Expr:
    """Parse ``src`` into an expression over ``space``.

    Precedence, tightest first: ``^`` (right-associative), unary minus,
    ``* /``, ``+ -``. ``d(f, mu)`` is the jet coordinate of field ``f``
    differentiated along ``x^mu``; it nests up to three deep and mixed
    partials are stored with a sorted multi-index.
    """
    return _Parser(src, space).parse()


# ----------------------------------------------------------------------------
# Numeric evaluation


@dataclass(frozen=True)
class JetPoint:
    """Values of base coordinates and field jets at one point (or a batch of points).

    ``d1[i, mu]``, ``d2[i, mu, nu]``, ``d3[i, mu, nu, la]`` hold partial
    derivatives of field ``i``. Any trailing axes are batch axes and are
    carried through evaluation unchanged.
    """

    base: np.ndarray
    values: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    d3: np.ndarray | None = None

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "values", values)
        batch = base.shape[1:]
        if values.shape[1:] != batch:
            raise ValueError("batch shape of values does not match base")
        n, m = values.shape[0], base.shape[0]
        arrays = [base, values]
        for k, name in enumerate(("d1", "d2", "d3"), start=1):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n,) + (m,) * k + batch:
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n,) + (m,) * k + batch}")
            if k >= 2 and not _is_symmetric(arr, k):
                raise ValueError(f"{name} is not symmetric in its base indices")
            object.__setattr__(self, name, arr)
            arrays.append(arr)
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise ValueError("JetPoint entries must be finite")
            arr.setflags(write=False)

    @property
    def order(self) -> int:
        for k, arr in ((3, self.d3), (2, self.d2), (1, self.d1)):
            if arr is not None:
                return k
        return 0

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.base.shape[1:]

    def get(self, c: Expr):
        if isinstance(c, Coord):
            return self.base[c.mu]
        if isinstance(c, Jet):
            k = len(c.idx)
            if k == 0:
                return self.values[c.field]
            arr = (self.d1, self.d2, self.d3)[k - 1]
            if arr is None:
                raise EvaluationError(f"point lacks order-{k} jets")
            return arr[(c.field,) + c.idx]
        raise TypeError(f"not a coordinate: {c!r}")

    def with_value(self, c: Jet, value: float) -> "JetPoint":
        """Copy with one jet coordinate replaced (all symmetric slots updated)."""
        k = len(c.idx)
        if k == 0:
            values = self.values.copy()
            values[c.field] = value
            return JetPoint(self.base, values, self.d1, self.d2, self.d3)
        arrs = [self.d1, self.d2, self.d3]
        arr = arrs[k - 1]
        if arr is None:
            raise EvaluationError(f"point lacks order-{k} jets")
        arr = arr.copy()
        for perm in set(_permutations(c.idx)):
            arr[(c.field,) + perm] = value
        arrs[k - 1] = arr
        return JetPoint(self.base, self.values, *arrs)

    def with_base(self, mu: int, value: float) -> "JetPoint":
        base = self.base.copy()
        base[mu] = value
        return JetPoint(base, self.values, self.d1, self.d2, self.d3)

    @classmethod
    def mechanics(cls, t, q, qd=None, qdd=None, qddd=None) -> "JetPoint":
        """Point on a 1-dimensional base from q and its time derivatives.

        ``q`` has shape ``(n, *batch)``; ``t`` has the batch shape.
        """
        q = np.asarray(q, dtype=float)
        batch = q.shape[1:]
        n = q.shape[0]
        derivs = []
        for k, d in enumerate((qd, qdd, qddd), start=1):
            derivs.append(None if d is None else np.asarray(d, dtype=float).reshape((n,) + (1,) * k + batch))
        return cls(np.asarray(t, dtype=float).reshape((1,) + batch), q, *derivs)


def _permutations(idx):
    if len(idx) <= 1:
        yield tuple(idx)
        return
    for i in range(len(idx)):
        for rest in _permutations(idx[:i] + idx[i + 1:]):
            yield (idx[i],) + rest


def _is_symmetric(arr: np.ndarray, k: int) -> bool:
    axes = list(range(arr.ndim))
    for a in range(1, k):
        perm = axes.copy()
        perm[a], perm[a + 1] = perm[a + 1], perm[a]
        if not np.allclose(arr, np.transpose(arr, perm), rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(arr), initial=0)))):
            return False
    return True


def symmetrize(arr: np.ndarray, k: int) -> np.ndarray:
    """Average over permutations of the ``k`` base axes following axis 0."""
    arr = np.asarray(arr, dtype=float)
    axes = list(range(arr.ndim))
    perms = set(_permutations(tuple(range(1, k + 1))))
    out = np.zeros_like(arr)
    for p in perms:
        out += np.transpose(arr, [0] + list(p) + axes[k + 1:])
    return out / len(perms)


class _NumpyMath:
    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)
    sqrt = staticmethod(np.sqrt)
    abs = staticmethod(np.abs)
    sign = staticmethod(np.sign)
    exp = staticmethod(np.exp)
    log = staticmethod(np.log)
    pow = staticmethod(np.power)


class _ScalarMath:
    sin = staticmethod(math.sin)
    cos = staticmethod(math.cos)
    sqrt = staticmethod(math.sqrt)
    abs = staticmethod(abs)
    sign = staticmethod(lambda v: float(int(v > 0) - int(v < 0)))
    exp = staticmethod(math.exp)
    log = staticmethod(math.log)
    pow = staticmethod(math.pow)


_BACKENDS = {"math": _ScalarMath, "numpy": _NumpyMath}


class Compiled:
    """Several expressions compiled into one Python function with shared subexpressions."""

    def __init__(self, exprs: Sequence[Expr], backend: str = "numpy"):
        self.exprs = tuple(exprs)
        leaves: set = set()
        for e in self.exprs:
            leaves |= e.symbols
        self.leaves = tuple(sorted(leaves, key=_leaf_key))
        self.backend = backend
        self._fn = _codegen(self.exprs, self.leaves, _BACKENDS[backend])

    def __call__(self, *leaf_values):
        return self._fn(*leaf_values)

    def at(self, point: JetPoint, params: Mapping[str, float] | None = None) -> list:
        params = params or {}
        args = []
        for leaf in self.leaves:
            if isinstance(leaf, Param):
                if leaf.name not in params:
                    raise EvaluationError(f"no value bound for parameter {leaf.name!r}")
                args.append(params[leaf.name])
            else:
                args.append(point.get(leaf))
        if self.backend == "math":
            try:
                with np.errstate(all="ignore"):
                    out = self._fn(*args)
            except (ZeroDivisionError, ValueError, OverflowError) as exc:
                raise EvaluationError(str(exc)) from None
        else:
            with np.errstate(all="ignore"):
                out = self._fn(*args)
        return list(out)


def _leaf_key(leaf: Expr):
    if isinstance(leaf, Param):
        return (0, leaf.name)
    if isinstance(leaf, Coord):
        return (1, leaf.mu)
    return (2,) + leaf.sort_key()


def _codegen(exprs, leaves, ns):
    names: dict[Expr, str] = {leaf: f"a{k}" for k, leaf in enumerate(leaves)}
    lines = []
    count = 0
    for e in exprs:
        for node in _postorder(e):
            if node in names:
                continue
            if isinstance(node, Const):
                names[node] = repr(node.value)
                continue
            if isinstance(node, Unary):
                a = names[node.arg]
                code = f"-({a})" if node.op == "neg" else f"M.{node.op}({a})"
            else:
                a, b = names[node.left], names[node.right]
                if node.op == "^":
                    code = f"M.pow({a}, {b})"
                else:
                    code = f"({a}) {node.op} ({b})"
            name = f"t{count}"
            count += 1
            lines.append(f"    {name} = {code}")
            names[node] = name
    ret = ", ".join(names[e] for e in exprs)
    src = "def _f({}):\n{}\n    return ({},)\n".format(
        ", ".join(f"a{k}" for k in range(len(leaves))), "\n".join(lines) or "    pass", ret
    )
    scope = {"M": ns}
    exec(compile(src, "<varicon-expr>", "exec"), scope)
    return scope["_f"]


@lru_cache(maxsize=2048)
def compiled(exprs: tuple[Expr, ...], backend: str = "numpy") -> Compiled:
    return Compiled(exprs, backend)


def evaluate_many(exprs: Sequence[Expr], point: JetPoint, params: Mapping[str, float] | None = None) -> np.ndarray:
    """Evaluate expressions at a point; batched points give arrays with the batch shape."""
    backend = "numpy" if point.batch_shape else "math"
    out = compiled(tuple(exprs), backend).at(point, params)
    shape = point.batch_shape
    arr = np.array([np.broadcast_to(np.asarray(v, dtype=float), shape) for v in out], dtype=float)
    if not np.all(np.isfinite(arr)):
        raise EvaluationError("non-finite result (division by zero or domain error)")
    return arr


def evaluate(e: Expr, point: JetPoint, params: Mapping[str, float] | None = None):
    out = evaluate_many((e,), point, params)[0]
    return float(out) if out.ndim == 0 else out


def lambdify(exprs: Sequence[Expr], args: Sequence[Expr], backend: str = "numpy"):
    """Compile ``exprs`` into ``f(*values)`` taking values of ``args`` in order.

    Every leaf of ``exprs`` must appear in ``args``.
    """
    comp = compiled(tuple(exprs), backend)
    missing = set(comp.leaves) - set(args)
    if missing:
        raise EvaluationError(f"unbound leaves: {sorted(map(repr, missing))}")
    pos = [list(args).index(leaf) for leaf in comp.leaves]

    def f(*values):
        return comp(*(values[k] for k in pos))

    return f
