"""Symbolic scalar expressions: parsing, exact differentiation, numeric
evaluation, and randomized identity testing.

Expressions are immutable trees over a fixed vocabulary (rational constants,
chart variables, named parameters, arithmetic, integer powers, and the
functions sin, cos, tan, exp, ln, sqrt, atan).  There is no general
simplifier: identities are certified numerically by `equiv_random`, which
samples a box and compares values against a relative tolerance.  Construction
performs constant folding only, so differentiation stays exact and trees stay
structurally comparable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "atan")

_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
    "atan": np.arctan,
}


class ExprError(ValueError):
    """Malformed expression construction (division by exact zero, etc.)."""


class ExprSyntaxError(ExprError):
    """Parse failure; `position` is the 0-based offset into the source text."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class DomainError(ArithmeticError):
    """Evaluation hit a guard: ln/sqrt argument too small, tiny denominator."""


class SamplingError(RuntimeError):
    """Randomized sampling could not find enough guard-admissible points."""


Numeric = Union[int, Fraction]


class Expr:
    """Base node.  Subclasses are Const, Var, Param, Add, Sub, Mul, Div,
    Pow, Neg, Func."""

    __slots__ = ("_hash", "_names")

    # -- operator sugar; all routed through the folding constructors --------
    def __add__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return add(self, _coerce(other))

    def __radd__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return add(_coerce(other), self)

    def __sub__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return sub(_coerce(other), self)

    def __mul__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        if not isinstance(other, (Expr, int, Fraction)):
            return NotImplemented
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return pow_int(self, n)

    def names(self) -> frozenset:
        """Set of variable and parameter names appearing in the tree."""
        got = getattr(self, "_names", None)
        if got is None:
            got = self._compute_names()
            object.__setattr__(self, "_names", got)
        return got

    def _compute_names(self) -> frozenset:
        raise NotImplementedError

    def __repr__(self):
        return f"<Expr {render(self)}>"

    def __str__(self):
        return render(self)


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Numeric):
        object.__setattr__(self, "value", Fraction(value))

    def __eq__(self, other):
        return isinstance(other, Const) and self.value == other.value

    def __hash__(self):
        return hash(("Const", self.value))

    def _compute_names(self):
        return frozenset()


class Var(Expr):
    """Chart coordinate."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __eq__(self, other):
        return isinstance(other, Var) and self.name == other.name

    def __hash__(self):
        return hash(("Var", self.name))

    def _compute_names(self):
        return frozenset((self.name,))


class Param(Expr):
    """Named parameter (constant under differentiation)."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        object.__setattr__(self, "name", name)

    def __eq__(self, other):
        return isinstance(other, Param) and self.name == other.name

    def __hash__(self):
        return hash(("Param", self.name))

    def _compute_names(self):
        return frozenset((self.name,))


class _Binary(Expr):
    __slots__ = ("left", "right")
    op = "?"

    def __init__(self, left: Expr, right: Expr):
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __eq__(self, other):
        return (
            type(other) is type(self)
            and self.left == other.left
            and self.right == other.right
        )

    def __hash__(self):
        return hash((type(self).__name__, self.left, self.right))

    def _compute_names(self):
        return self.left.names() | self.right.names()


class Add(_Binary):
    __slots__ = ()
    op = "+"


class Sub(_Binary):
    __slots__ = ()
    op = "-"


class Mul(_Binary):
    __slots__ = ()
    op = "*"


class Div(_Binary):
    __slots__ = ()
    op = "/"


class Pow(Expr):
    """Integer power; the exponent is a plain int, never an expression."""

    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exponent", int(exponent))

    def __eq__(self, other):
        return (
            isinstance(other, Pow)
            and self.base == other.base
            and self.exponent == other.exponent
        )

    def __hash__(self):
        return hash(("Pow", self.base, self.exponent))

    def _compute_names(self):
        return self.base.names()


class Neg(Expr):
    __slots__ = ("child",)

    def __init__(self, child: Expr):
        object.__setattr__(self, "child", child)

    def __eq__(self, other):
        return isinstance(other, Neg) and self.child == other.child

    def __hash__(self):
        return hash(("Neg", self.child))

    def _compute_names(self):
        return self.child.names()


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ExprError(f"unknown function '{name}'")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arg", arg)

    def __eq__(self, other):
        return (
            isinstance(other, Func)
            and self.name == other.name
            and self.arg == other.arg
        )

    def __hash__(self):
        return hash(("Func", self.name, self.arg))

    def _compute_names(self):
        return self.arg.names()


ZERO = Const(0)
ONE = Const(1)


def _is_const(e: Expr, value=None) -> bool:
    if not isinstance(e, Const):
        return False
    return True if value is None else e.value == value


# ---------------------------------------------------------------------------
# folding constructors


def _comm_equal(a: Expr, b: Expr) -> bool:
    # equality up to swapping the operands of one top-level Add/Mul
    if a == b:
        return True
    if type(a) is not type(b) or not isinstance(a, (Add, Mul)):
        return False
    return a.left == b.right and a.right == b.left


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    # structural cancellation keeps wedge products of equal forms exactly zero
    if isinstance(b, Neg) and _comm_equal(b.child, a):
        return ZERO
    if isinstance(a, Neg) and _comm_equal(a.child, b):
        return ZERO
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    if _comm_equal(a, b):
        return ZERO
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a, -1):
        return neg(b)
    if _is_const(b, -1):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        raise ExprError("division by constant zero")
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value / b.value)
    if _is_const(b, 1):
        return a
    if _is_const(a, 0):
        return ZERO
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.child
    return Neg(a)


def pow_int(a: Expr, n: int) -> Expr:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        if a.value == 0 and n < 0:
            raise ExprError("zero to a negative power")
        return Const(a.value**n)
    return Pow(a, n)


_EXACT_AT_ZERO = {"sin": ZERO, "tan": ZERO, "atan": ZERO, "cos": ONE, "exp": ONE}


def func(name: str, arg: Expr) -> Expr:
    # fold only the handful of exactly-rational special values
    if isinstance(arg, Const):
        if arg.value == 0 and name in _EXACT_AT_ZERO:
            return _EXACT_AT_ZERO[name]
        if name == "ln" and arg.value == 1:
            return ZERO
        if name == "sqrt" and arg.value >= 0:
            root = _exact_sqrt(arg.value)
            if root is not None:
                return Const(root)
    return Func(name, arg)


def _exact_sqrt(q: Fraction) -> Optional[Fraction]:
    num = _isqrt_exact(q.numerator)
    den = _isqrt_exact(q.denominator)
    if num is None or den is None:
        return None
    return Fraction(num, den)


def _isqrt_exact(n: int) -> Optional[int]:
    import math

    r = math.isqrt(n)
    return r if r * r == n else None


def sin(a) -> Expr:
    return func("sin", _coerce(a))


def cos(a) -> Expr:
    return func("cos", _coerce(a))


def tan(a) -> Expr:
    return func("tan", _coerce(a))


def exp(a) -> Expr:
    return func("exp", _coerce(a))


def ln(a) -> Expr:
    return func("ln", _coerce(a))


def sqrt(a) -> Expr:
    return func("sqrt", _coerce(a))


def atan(a) -> Expr:
    return func("atan", _coerce(a))


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, var: str) -> Expr:
    """Exact partial derivative with respect to the coordinate `var`.

    Parameters differentiate to zero.  No simplification beyond the
    constructors' constant folding.
    """
    if var not in e.names():
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Add):
        return add(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Sub):
        return sub(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Mul):
        return add(
            mul(differentiate(e.left, var), e.right),
            mul(e.left, differentiate(e.right, var)),
        )
    if isinstance(e, Div):
        num = sub(
            mul(differentiate(e.left, var), e.right),
            mul(e.left, differentiate(e.right, var)),
        )
        return div(num, pow_int(e.right, 2))
    if isinstance(e, Neg):
        return neg(differentiate(e.child, var))
    if isinstance(e, Pow):
        inner = differentiate(e.base, var)
        return mul(mul(Const(e.exponent), pow_int(e.base, e.exponent - 1)), inner)
    if isinstance(e, Func):
        inner = differentiate(e.arg, var)
        a = e.arg
        if e.name == "sin":
            outer = cos(a)
        elif e.name == "cos":
            outer = neg(sin(a))
        elif e.name == "tan":
            outer = add(ONE, pow_int(tan(a), 2))
        elif e.name == "exp":
            outer = exp(a)
        elif e.name == "ln":
            outer = div(ONE, a)
        elif e.name == "sqrt":
            outer = div(ONE, mul(Const(2), sqrt(a)))
        else:  # atan
            outer = div(ONE, add(ONE, pow_int(a, 2)))
        return mul(outer, inner)
    raise TypeError(f"cannot differentiate {type(e).__name__}")


def substitute(e: Expr, name: str, replacement: Expr) -> Expr:
    """Replace every Var/Param occurrence of `name` by `replacement`."""
    if name not in e.names():
        return e
    if isinstance(e, (Var, Param)):
        return replacement if e.name == name else e
    if isinstance(e, Add):
        return add(substitute(e.left, name, replacement), substitute(e.right, name, replacement))
    if isinstance(e, Sub):
        return sub(substitute(e.left, name, replacement), substitute(e.right, name, replacement))
    if isinstance(e, Mul):
        return mul(substitute(e.left, name, replacement), substitute(e.right, name, replacement))
    if isinstance(e, Div):
        return div(substitute(e.left, name, replacement), substitute(e.right, name, replacement))
    if isinstance(e, Neg):
        return neg(substitute(e.child, name, replacement))
    if isinstance(e, Pow):
        return pow_int(substitute(e.base, name, replacement), e.exponent)
    if isinstance(e, Func):
        return func(e.name, substitute(e.arg, name, replacement))
    return e


# ---------------------------------------------------------------------------
# evaluation


def _require(cond_array, message: str):
    # cond_array: boolean scalar or array; raise when any entry violates
    if np.any(cond_array):
        raise DomainError(message)


def evaluate(e: Expr, env: Mapping[str, object], guard: Optional[float] = None):
    """Numeric value of `e` with names bound by `env`.

    Values in `env` may be floats or numpy arrays (broadcast elementwise).
    With a guard, denominators and ln/sqrt arguments smaller than it in
    absolute value raise DomainError; without one, only hard domain
    violations (division by zero, ln/sqrt of a nonpositive) do.
    """
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, (Var, Param)):
        try:
            return env[e.name]
        except KeyError:
            raise ExprError(f"unbound name '{e.name}'") from None
    if isinstance(e, Add):
        return evaluate(e.left, env, guard) + evaluate(e.right, env, guard)
    if isinstance(e, Sub):
        return evaluate(e.left, env, guard) - evaluate(e.right, env, guard)
    if isinstance(e, Mul):
        return evaluate(e.left, env, guard) * evaluate(e.right, env, guard)
    if isinstance(e, Div):
        denom = evaluate(e.right, env, guard)
        bound = guard if guard is not None else 0.0
        if bound > 0.0:
            _require(np.abs(denom) < bound, "denominator inside guard")
        else:
            _require(denom == 0, "division by zero")
        return evaluate(e.left, env, guard) / denom
    if isinstance(e, Neg):
        return -evaluate(e.child, env, guard)
    if isinstance(e, Pow):
        base = evaluate(e.base, env, guard)
        if e.exponent < 0:
            bound = guard if guard is not None else 0.0
            if bound > 0.0:
                _require(np.abs(base) < bound, "power base inside guard")
            else:
                _require(base == 0, "zero raised to a negative power")
        return base**e.exponent
    if isinstance(e, Func):
        arg = evaluate(e.arg, env, guard)
        if e.name == "ln":
            bound = guard if guard is not None else 0.0
            _require(arg <= bound, "ln argument too small")
        elif e.name == "sqrt":
            if guard is not None:
                _require(arg < guard, "sqrt argument inside guard")
            else:
                _require(arg < 0, "sqrt of a negative")
        return _NUMPY_FUNCS[e.name](arg)
    raise TypeError(f"cannot evaluate {type(e).__name__}")


# ---------------------------------------------------------------------------
# rendering (inverse of parse, minimal parentheses)

_LEVEL_ADD = 10
_LEVEL_MUL = 20
_LEVEL_NEG = 25
_LEVEL_POW = 30
_LEVEL_ATOM = 40


def _level(e: Expr) -> int:
    if isinstance(e, Const):
        if e.value < 0:
            # negative constants render with a leading '-', and fractions
            # additionally with '/'; weakest level keeps re-parses faithful
            return _LEVEL_ADD
        return _LEVEL_ATOM if e.value.denominator == 1 else _LEVEL_MUL
    if isinstance(e, (Var, Param, Func)):
        return _LEVEL_ATOM
    if isinstance(e, (Add, Sub)):
        return _LEVEL_ADD
    if isinstance(e, (Mul, Div)):
        return _LEVEL_MUL
    if isinstance(e, Neg):
        return _LEVEL_NEG
    if isinstance(e, Pow):
        return _LEVEL_POW
    raise TypeError(type(e).__name__)


def render(e: Expr) -> str:
    """Serialize to the expression grammar; parse(render(e)) == e."""
    if isinstance(e, Const):
        v = e.value
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({render(e.arg)})"
    if isinstance(e, Neg):
        inner = render(e.child)
        if _level(e.child) < _LEVEL_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        base = render(e.base)
        ok_bare = isinstance(e.base, (Var, Param, Func)) or (
            isinstance(e.base, Const)
            and e.base.value >= 0
            and e.base.value.denominator == 1
        )
        if not ok_bare:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, _Binary):
        lvl = _level(e)
        left = render(e.left)
        if _level(e.left) < lvl:
            left = f"({left})"
        right = render(e.right)
        if _level(e.right) <= lvl:
            right = f"({right})"
        return f"{left}{e.op}{right}"
    raise TypeError(type(e).__name__)


# ---------------------------------------------------------------------------
# parsing


class _Token:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind, text, pos):
        self.kind = kind
        self.text = text
        self.pos = pos


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit():
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                if j >= n or not text[j].isdigit():
                    raise ExprSyntaxError("digits expected after decimal point", j)
                while j < n and text[j].isdigit():
                    j += 1
            tokens.append(_Token("number", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], i))
            i = j
            continue
        if c in "+-*/^()":
            tokens.append(_Token(c, c, i))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character '{c}'", i)
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, variables, parameters):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = frozenset(variables)
        self.parameters = frozenset(parameters)

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.take()
        if tok.kind != kind:
            raise ExprSyntaxError(f"expected '{kind}'", tok.pos)
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tail = self.peek()
        if tail.kind != "end":
            raise ExprSyntaxError(f"unexpected '{tail.text}'", tail.pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.take().kind
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.take().kind
            rhs = self.factor()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def factor(self) -> Expr:
        # unary minus binds looser than '^': -x^2 means -(x^2)
        if self.peek().kind == "-":
            self.take()
            return neg(self.factor())
        base = self.base()
        if self.peek().kind == "^":
            self.take()
            return pow_int(base, self.exponent())
        return base

    def exponent(self) -> int:
        sign = 1
        if self.peek().kind == "-":
            self.take()
            sign = -1
        tok = self.take()
        if tok.kind != "number" or "." in tok.text:
            raise ExprSyntaxError("integer exponent expected", tok.pos)
        return sign * int(tok.text)

    def base(self) -> Expr:
        tok = self.take()
        if tok.kind == "number":
            return Const(Fraction(tok.text))
        if tok.kind == "(":
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "ident":
            if self.peek().kind == "(":
                if tok.text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function '{tok.text}'", tok.pos)
                self.take()
                arg = self.expr()
                closer = self.take()
                if closer.kind != ")":
                    raise ExprSyntaxError("expected ')'", closer.pos)
                return func(tok.text, arg)
            if tok.text in self.variables:
                return Var(tok.text)
            if tok.text in self.parameters:
                return Param(tok.text)
            raise ExprSyntaxError(f"undeclared identifier '{tok.text}'", tok.pos)
        raise ExprSyntaxError(f"unexpected '{tok.text or 'end of input'}'", tok.pos)


def parse(text: str, variables: Iterable[str], parameters: Iterable[str] = ()) -> Expr:
    """Parse `text` against declared coordinate and parameter names."""
    return _Parser(text, variables, parameters).parse()


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Point:
    """A concrete evaluation point: coordinate and parameter bindings."""

    coords: Mapping[str, float]
    params: Mapping[str, float] = field(default_factory=dict)

    def env(self) -> dict:
        merged = dict(self.coords)
        merged.update(self.params)
        return merged

    def flat(self) -> str:
        items = sorted(self.coords.items()) + sorted(self.params.items())
        return " ".join(f"{k}={v!r}" for k, v in items)


@dataclass(frozen=True)
class SampleSpec:
    """Randomized verification policy: where to sample, how many, how strict.

    `box` maps coordinate names to intervals; `params` maps parameter names
    to fixed values or to (lo, hi) ranges that are sampled per point.
    """

    box: Mapping[str, tuple] = field(default_factory=dict)
    params: Mapping[str, object] = field(default_factory=dict)
    count: int = 64
    seed: int = 0
    guard: float = 1e-6
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.guard <= 0:
            raise ValueError("guard must be positive")
        for name, (lo, hi) in self.box.items():
            if not lo < hi:
                raise ValueError(f"degenerate interval for '{name}'")

    def replace(self, **kw) -> "SampleSpec":
        data = {
            "box": self.box,
            "params": self.params,
            "count": self.count,
            "seed": self.seed,
            "guard": self.guard,
            "tolerance": self.tolerance,
        }
        data.update(kw)
        return SampleSpec(**data)


_MAX_REDRAWS = 80


def draw_point(spec: SampleSpec, index: int) -> Point:
    """Deterministic sample `index` of the spec's box (no guard filtering)."""
    rng = random.Random(spec.seed ^ index)
    return _draw(spec, rng)


def _draw(spec: SampleSpec, rng: random.Random) -> Point:
    coords = {name: rng.uniform(lo, hi) for name, (lo, hi) in spec.box.items()}
    params = {}
    for name, value in spec.params.items():
        if isinstance(value, tuple):
            lo, hi = value
            params[name] = rng.uniform(lo, hi)
        else:
            params[name] = float(value)
    return Point(coords, params)


def sampled_check(spec: SampleSpec, violation_at) -> "CheckResult":
    """Run `violation_at(point) -> float` at `spec.count` guarded samples.

    Points where the callback raises DomainError are redrawn (deterministic,
    bounded).  Returns the worst violation, its witness point, and the pass
    verdict `max_violation <= spec.tolerance`.
    """
    worst = 0.0
    witness = None
    for i in range(spec.count):
        rng = random.Random(spec.seed ^ i)
        for _attempt in range(_MAX_REDRAWS):
            pt = _draw(spec, rng)
            try:
                v = float(violation_at(pt))
            except DomainError:
                continue
            break
        else:
            raise SamplingError(
                f"guard rejected {_MAX_REDRAWS} consecutive points (sample {i})"
            )
        if v > worst or witness is None:
            worst = v
            witness = pt
    return CheckResult(worst <= spec.tolerance, worst, witness, spec.count)


def sampled_collect(spec: SampleSpec, value_at) -> list:
    """Collect `(point, value_at(point))` per sample with the same guarded
    redraw policy as sampled_check."""
    out = []
    for i in range(spec.count):
        rng = random.Random(spec.seed ^ i)
        for _attempt in range(_MAX_REDRAWS):
            pt = _draw(spec, rng)
            try:
                out.append((pt, value_at(pt)))
            except DomainError:
                continue
            break
        else:
            raise SamplingError(
                f"guard rejected {_MAX_REDRAWS} consecutive points (sample {i})"
            )
    return out


@dataclass(frozen=True)
class CheckResult:
    """Common shape for sampled verdicts."""

    ok: bool
    max_violation: float
    witness: Optional[Point]
    samples: int

    def __bool__(self):
        return self.ok


def equiv_random(e1: Expr, e2: Expr, spec: SampleSpec) -> CheckResult:
    """Randomized identity test: |e1 - e2| <= tol*(1 + |e1| + |e2|) at every
    accepted sample.  max_violation is the worst relative deviation."""

    def deviation(pt: Point) -> float:
        env = pt.env()
        v1 = evaluate(e1, env, spec.guard)
        v2 = evaluate(e2, env, spec.guard)
        return abs(v1 - v2) / (1.0 + abs(v1) + abs(v2))

    return sampled_check(spec, deviation)
