"""Scalar field expressions in the macro (x), meso (y) and micro (z) variables.

Coefficients, obstacles and loads are written in config files as strings such as
``"(2 + sin(2*pi*y1)) * (2 + sin(2*pi*z1))"``.  This module turns those strings
into small immutable syntax trees and evaluates them on numpy arrays.

Grammar (whitespace insignificant)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so ``-y1^2`` is
``-(y1^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ExprError

__all__ = [
    "Num", "Const", "Var", "BinOp", "Neg", "Call", "Expr",
    "parse", "evaluate", "to_string", "variables", "scales_used",
    "FiniteReport", "check_finite",
]

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}
CONSTANTS = {"pi": math.pi}
SCALES = ("x", "y", "z")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Var:
    scale: str  # 'x', 'y' or 'z'
    index: int  # 1-based


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Const, Var, BinOp, Neg, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"^([xyz])([1-9][0-9]*)$")


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprError(f"unexpected character {text[pos]!r}", pos + 1)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", n + 1))
    return tokens


class _Parser:
    def __init__(self, text, dimension):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dimension = dimension

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ExprError(f"expected {value!r}, found {found}", pos)

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                return self.call(val, pos)
            if val in CONSTANTS:
                return Const(val)
            m = _VAR.match(val)
            if m:
                idx = int(m.group(2))
                if idx > self.dimension:
                    raise ExprError(
                        f"variable index exceeds dimension: {val} with N={self.dimension}", pos)
                return Var(m.group(1), idx)
            raise ExprError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExprError(f"unexpected {found}", pos)

    def call(self, name, pos):
        if name not in FUNCTIONS:
            raise ExprError(f"unknown function {name!r}", pos)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[:2] == ("op", ","):
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name][0]
        if len(args) != arity:
            raise ExprError(f"{name} takes {arity} argument(s), got {len(args)}", pos)
        return Call(name, tuple(args))


def parse(text: str, dimension: int) -> Expr:
    """Parse ``text`` into an expression tree over variables of dimension ``dimension``.

    Raises ExprError carrying the 1-based character position of the fault.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExprError("empty expression", 1)
    if dimension < 1:
        raise ExprError(f"dimension must be >= 1, got {dimension}", 1)
    p = _Parser(text, dimension)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ExprError(f"unexpected {val!r}", pos)
    return node


def _binding(values, scale, index):
    if values is None:
        raise ExprError(f"no binding for {scale}{index}", 0)
    arr = np.asarray(values, dtype=float)
    return arr[..., index - 1]


def evaluate(expr: Expr, x=None, y=None, z=None):
    """Evaluate ``expr`` with numpy semantics.

    Each binding is an array whose last axis has length N; leading axes
    broadcast, so a batch of points of shape (m, N) yields m values.  Division
    by zero and square roots of negatives give inf/nan rather than raising;
    use :func:`check_finite` to surface them.
    """
    env = {"x": x, "y": y, "z": z}
    with np.errstate(all="ignore"):
        out = _eval(expr, env)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        return _binding(env[node.scale], node.scale, node.index)
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        if node.op == "/":
            return np.divide(a, b)
        return np.power(a, b)
    if isinstance(node, Call):
        fn = FUNCTIONS[node.func][1]
        return fn(*(_eval(a, env) for a in node.args))
    raise TypeError(f"not an expression node: {node!r}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _fmt_num(v):
    s = repr(float(v))
    return s if not s.startswith("-") else f"({s})"


def to_string(expr: Expr) -> str:
    """Fully parenthesised rendering that parses back to an equal tree."""
    if isinstance(expr, Num):
        return _fmt_num(expr.value)
    if isinstance(expr, Const):
        return expr.name
    if isinstance(expr, Var):
        return f"{expr.scale}{expr.index}"
    if isinstance(expr, Neg):
        return f"(-{to_string(expr.operand)})"
    if isinstance(expr, BinOp):
        return f"({to_string(expr.left)} {expr.op} {to_string(expr.right)})"
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(to_string(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


def variables(expr: Expr) -> set:
    """Set of (scale, index) pairs referenced by ``expr``."""
    if isinstance(expr, Var):
        return {(expr.scale, expr.index)}
    if isinstance(expr, Neg):
        return variables(expr.operand)
    if isinstance(expr, BinOp):
        return variables(expr.left) | variables(expr.right)
    if isinstance(expr, Call):
        out = set()
        for a in expr.args:
            out |= variables(a)
        return out
    return set()


def scales_used(expr: Expr) -> set:
    return {s for s, _ in variables(expr)}


@dataclass
class FiniteReport:
    """Outcome of sampling a field for non-finite values."""

    n_samples: int
    n_nan: int
    n_inf: int
    first_bad: tuple | None = None

    @property
    def ok(self) -> bool:
        return self.n_nan == 0 and self.n_inf == 0


def check_finite(expr: Expr, x=None, y=None, z=None) -> FiniteReport:
    vals = np.atleast_1d(np.asarray(evaluate(expr, x, y, z), dtype=float))
    nan = np.isnan(vals)
    inf = np.isinf(vals)
    bad = np.flatnonzero(nan | inf)
    first = None
    if bad.size:
        k = int(bad[0])
        first = tuple(
            None if b is None else tuple(np.broadcast_to(np.asarray(b, float),
                                                         vals.shape + (np.shape(b)[-1],))[k])
            for b in (x, y, z)
        )
    return FiniteReport(vals.size, int(nan.sum()), int(inf.sum()), first)
