"""Scalar-field expressions over chart coordinates ``q1 .. qk``.

Expressions are parsed into a small immutable tree, differentiated symbolically
(the derivative of an expression is again an expression), and compiled into
plain Python callables for evaluation.  See ``docs/grammar.md`` for the EBNF.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "tanh")
CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    """Raised for malformed input; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of an operation (log of nonpositive, 1/0, ...)."""


# --------------------------------------------------------------------------
# tree


class Expr:
    __slots__ = ()

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 0-based; printed as q{index+1}


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)

# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"q([1-9][0-9]*)$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[bad]!r}", _byte_offset(text, bad))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(text, start)))
        pos = m.end()
    tokens.append(("end", "", len(text.encode("utf-8"))))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, dim: int, params: Mapping[str, float] | Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim
        self.params = set(params)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(val, off)
            m = _VAR.match(val)
            if m is not None and 1 <= int(m.group(1)) <= self.dim:
                return Var(int(m.group(1)) - 1)
            if val in self.params:
                return Param(val)
            if val in CONSTANTS:
                return Const(CONSTANTS[val])
            raise ParseError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", off)

    def call(self, name: str, off: int) -> Expr:
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", off)
        self.expect("(")
        args = []
        if not (self.peek()[0] == "op" and self.peek()[1] == ")"):
            args.append(self.expr())
            while self.peek()[0] == "op" and self.peek()[1] == ",":
                self.take()
                args.append(self.expr())
        self.expect(")")
        if len(args) != 1:
            raise ParseError(f"arity mismatch: {name} takes 1 argument, got {len(args)}", off)
        return Call(name, args[0])


def parse(text: str, dim: int, params: Mapping[str, float] | Sequence[str] = ()) -> Expr:
    """Parse ``text`` into an expression over ``q1..q{dim}`` and named ``params``."""
    return _Parser(text, dim, params).parse()


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_const(v: float) -> str:
    if v < 0 or math.copysign(1.0, v) < 0:
        return "-" + repr(-v)
    return repr(v)


def to_string(e: Expr) -> str:
    """Canonical printer: re-parsing the output yields a structurally equal tree."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return f"q{e.index + 1}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        if _prec(e.arg) < _PREC["^"]:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left, right = to_string(e.left), to_string(e.right)
        if e.op == "^":
            if _prec(e.left) < _PREC["atom"]:
                left = f"({left})"
            if _prec(e.right) < _PREC["neg"]:
                right = f"({right})"
            return f"{left} ^ {right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# constructors with light constant folding


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return BinOp("-", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    if isinstance(a, Neg) and isinstance(b, Neg):
        return mul(a.arg, b.arg)
    if isinstance(a, Neg):
        return neg(mul(a.arg, b))
    if isinstance(b, Neg):
        return neg(mul(a, b.arg))
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if isinstance(a, Neg):
        return neg(div(a.arg, b))
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return ONE
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            return Const(_pow(a.value, b.value))
        except DomainError:
            pass
    return BinOp("^", a, b)


def call(name: str, a: Expr) -> Expr:
    return Call(name, a)


def const(v: float) -> Expr:
    return Const(float(v))


def var(i: int) -> Expr:
    return Var(i)


# --------------------------------------------------------------------------
# analysis


def depends_on(e: Expr, i: int) -> bool:
    if isinstance(e, Var):
        return e.index == i
    if isinstance(e, (Const, Param)):
        return False
    if isinstance(e, (Neg, Call)):
        return depends_on(e.arg, i)
    return depends_on(e.left, i) or depends_on(e.right, i)


def free_vars(e: Expr) -> set[int]:
    if isinstance(e, Var):
        return {e.index}
    if isinstance(e, (Const, Param)):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_vars(e.arg)
    return free_vars(e.left) | free_vars(e.right)


def free_params(e: Expr) -> set[str]:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, (Const, Var)):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_params(e.arg)
    return free_params(e.left) | free_params(e.right)


def diff(e: Expr, i: int) -> Expr:
    """Exact partial derivative with respect to ``q{i+1}``."""
    if isinstance(e, (Const, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, i))
    if isinstance(e, Call):
        u = e.arg
        du = diff(u, i)
        if _is(du, 0.0):
            return ZERO
        f = e.func
        if f == "sin":
            return mul(Call("cos", u), du)
        if f == "cos":
            return neg(mul(Call("sin", u), du))
        if f == "exp":
            return mul(e, du)
        if f == "log":
            return div(du, u)
        if f == "sqrt":
            return div(du, mul(Const(2.0), e))
        if f == "tanh":
            return mul(sub(ONE, power(e, Const(2.0))), du)
        raise ExprError(f"no derivative rule for {f}")
    a, b = e.left, e.right
    if e.op == "+":
        return add(diff(a, i), diff(b, i))
    if e.op == "-":
        return sub(diff(a, i), diff(b, i))
    if e.op == "*":
        return add(mul(diff(a, i), b), mul(a, diff(b, i)))
    if e.op == "/":
        da, db = diff(a, i), diff(b, i)
        return sub(div(da, b), div(mul(a, db), mul(b, b)))
    if e.op == "^":
        da = diff(a, i)
        if not depends_on(b, i):
            if _is(da, 0.0):
                return ZERO
            return mul(mul(b, power(a, sub(b, ONE))), da)
        db = diff(b, i)
        return mul(e, add(mul(db, Call("log", a)), div(mul(b, da), a)))
    raise TypeError(f"not an expression: {e!r}")


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Simultaneously replace variables ``q{i+1}`` by ``mapping[i]``."""
    if isinstance(e, Var):
        return mapping.get(e.index, e)
    if isinstance(e, (Const, Param)):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Call):
        return Call(e.func, substitute(e.arg, mapping))
    a, b = substitute(e.left, mapping), substitute(e.right, mapping)
    return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](a, b)


def bind(e: Expr, params: Mapping[str, float]) -> Expr:
    """Replace named parameters by their numeric values."""
    if isinstance(e, Param):
        if e.name not in params:
            raise ExprError(f"unbound parameter {e.name!r}")
        return Const(float(params[e.name]))
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Neg):
        return neg(bind(e.arg, params))
    if isinstance(e, Call):
        return Call(e.func, bind(e.arg, params))
    a, b = bind(e.left, params), bind(e.right, params)
    return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](a, b)


# --------------------------------------------------------------------------
# evaluation


def _pow(a: float, b: float) -> float:
    if a < 0.0 and b != int(b):
        raise DomainError(f"negative base {a} with non-integer exponent {b}")
    if a == 0.0 and b < 0.0:
        raise DomainError("zero to a negative power")
    return a**b


def _log(x: float) -> float:
    if x <= 0.0:
        raise DomainError(f"log of nonpositive value {x}")
    return math.log(x)


def _sqrt(x: float) -> float:
    if x < 0.0:
        raise DomainError(f"sqrt of negative value {x}")
    return math.sqrt(x)


_RUNTIME = {
    "_pow": _pow,
    "_sin": math.sin,
    "_cos": math.cos,
    "_exp": math.exp,
    "_log": _log,
    "_sqrt": _sqrt,
    "_tanh": math.tanh,
}


def _code(e: Expr, params: Mapping[str, float]) -> str:
    if isinstance(e, Const):
        return f"({e.value!r})"
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Param):
        if e.name not in params:
            raise ExprError(f"unbound parameter {e.name!r}")
        return f"({float(params[e.name])!r})"
    if isinstance(e, Neg):
        return f"(-{_code(e.arg, params)})"
    if isinstance(e, Call):
        return f"_{e.func}({_code(e.arg, params)})"
    a, b = _code(e.left, params), _code(e.right, params)
    if e.op == "^":
        if isinstance(e.right, Const) and e.right.value in (2.0, 3.0):
            return f"({a}*{a})" if e.right.value == 2.0 else f"({a}*{a}*{a})"
        return f"_pow({a}, {b})"
    return f"({a} {e.op} {b})"


def compile_exprs(exprs: Sequence[Expr], dim: int, params: Mapping[str, float] | None = None):
    """Compile expressions into one callable ``f(q) -> tuple of floats``."""
    params = params or {}
    names = ", ".join(f"x{i}" for i in range(dim)) + ("," if dim == 1 else "")
    body = ", ".join(_code(e, params) for e in exprs) + ("," if len(exprs) == 1 else "")
    src = f"def _f(q):\n    {names} = q\n    return ({body})\n" if dim else f"def _f(q):\n    return ({body})\n"
    ns = dict(_RUNTIME)
    exec(compile(src, "<exprfield>", "exec"), ns)
    raw = ns["_f"]

    def evaluate(q):
        try:
            return raw(tuple(float(x) for x in q))
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(str(exc)) from exc

    return evaluate


def evaluate(e: Expr, q: Sequence[float], params: Mapping[str, float] | None = None) -> float:
    dim = max(free_vars(e), default=-1) + 1
    dim = max(dim, len(q))
    return compile_exprs([e], dim, params)(q)[0]


# --------------------------------------------------------------------------
# scalar fields

FD_STEP = 1e-4


class ScalarField:
    """A real function on a chart with exact derivatives up to order two.

    Third-order partials come from central differences of the exact Hessian
    with step ``1e-4 * max(1, |q_k|)`` and one Richardson extrapolation.
    """

    def __init__(self, expr: Expr, dim: int, params: Mapping[str, float] | None = None):
        self.params = dict(params or {})
        self.expr = bind(expr, self.params) if free_params(expr) else expr
        if max(free_vars(self.expr), default=-1) >= dim:
            raise ExprError(f"expression uses coordinates beyond q{dim}")
        self.dim = dim
        self.grad_exprs = [diff(self.expr, i) for i in range(dim)]
        self.hess_exprs = [[None] * dim for _ in range(dim)]
        for i in range(dim):
            for j in range(i, dim):
                h = diff(self.grad_exprs[i], j)
                self.hess_exprs[i][j] = h
                self.hess_exprs[j][i] = h
        self._value = compile_exprs([self.expr], dim)
        self._jet1 = compile_exprs([self.expr, *self.grad_exprs], dim)
        upper = [self.hess_exprs[i][j] for i in range(dim) for j in range(i, dim)]
        self._jet2 = compile_exprs([self.expr, *self.grad_exprs, *upper], dim)
        self.is_constant = not free_vars(self.expr)

    @classmethod
    def from_string(cls, text: str, dim: int, params: Mapping[str, float] | None = None):
        return cls(parse(text, dim, params or {}), dim, params)

    @classmethod
    def constant(cls, value: float, dim: int):
        return cls(Const(float(value)), dim)

    def __repr__(self):
        return f"ScalarField({to_string(self.expr)!r}, dim={self.dim})"

    def __call__(self, q) -> float:
        return self._value(q)[0]

    def gradient(self, q) -> np.ndarray:
        return np.array(self._jet1(q)[1:])

    def hessian(self, q) -> np.ndarray:
        return self.jet(q)[2]

    def jet(self, q):
        """Value, gradient and Hessian at ``q`` in one evaluation."""
        vals = self._jet2(q)
        d = self.dim
        grad = np.array(vals[1 : d + 1])
        hess = np.empty((d, d))
        k = d + 1
        for i in range(d):
            for j in range(i, d):
                hess[i, j] = hess[j, i] = vals[k]
                k += 1
        return vals[0], grad, hess

    def third(self, q) -> np.ndarray:
        """Array ``T[i, j, k] = d^3 f / dq_i dq_j dq_k`` (k differentiated numerically)."""
        q = np.asarray(q, dtype=float)
        out = np.empty((self.dim,) * 3)
        for k in range(self.dim):
            out[:, :, k] = self._fd_hessian(q, k)
        return out

    def _fd_hessian(self, q, k):
        h = FD_STEP * max(1.0, abs(q[k]))
        e = np.zeros(self.dim)
        e[k] = 1.0

        def central(step):
            return (self.hessian(q + step * e) - self.hessian(q - step * e)) / (2 * step)

        return (4.0 * central(h / 2) - central(h)) / 3.0

    def derivative(self, multi_index: Sequence[int]) -> Callable[[Sequence[float]], float]:
        """Evaluator of the partial derivative along the given 0-based indices."""
        idx = tuple(sorted(int(i) for i in multi_index))
        if any(i < 0 or i >= self.dim for i in idx):
            raise ExprError(f"multi-index {multi_index} out of range for dim {self.dim}")
        if len(idx) == 0:
            return self.__call__
        if len(idx) == 1:
            f = compile_exprs([self.grad_exprs[idx[0]]], self.dim)
            return lambda q: f(q)[0]
        if len(idx) == 2:
            f = compile_exprs([self.hess_exprs[idx[0]][idx[1]]], self.dim)
            return lambda q: f(q)[0]
        if len(idx) == 3:
            i, j, k = idx
            return lambda q: float(self._fd_hessian(np.asarray(q, dtype=float), k)[i, j])
        raise ExprError("derivatives above order 3 are not available")
