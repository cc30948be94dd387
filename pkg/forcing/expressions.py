"""Recursive-descent parser for the forcing mini-language.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Names are the coordinates ``x1, x2, y1, y2`` and the constant ``pi``; functions
are ``sin``, ``cos`` and ``exp``. Expressions evaluate on numpy arrays and can
be differentiated symbolically, which is how ``grad_y f1`` is formed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import List, Mapping, Tuple

import numpy as np

from errors import ParseError

VARIABLES = ("x1", "x2", "y1", "y2")
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
CONSTANTS = {"pi": math.pi}

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))")


class Expr:
    """Base node; subclasses are immutable."""

    def evaluate(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, var: str) -> "Expr":
        raise NotImplementedError

    def variables(self) -> frozenset:
        return frozenset()

    def is_zero(self) -> bool:
        return isinstance(self, Num) and self.value == 0.0


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def evaluate(self, env):
        return np.asarray(self.value, dtype=float)

    def derivative(self, var):
        return ZERO

    def __str__(self):
        return f"{self.value:.17g}"


ZERO = Num(0.0)
ONE = Num(1.0)


@dataclass(frozen=True)
class Const(Expr):
    name: str

    def evaluate(self, env):
        return np.asarray(CONSTANTS[self.name])

    def derivative(self, var):
        return ZERO

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def evaluate(self, env):
        try:
            return np.asarray(env[self.name], dtype=float)
        except KeyError:
            raise KeyError(f"Variable {self.name} is not bound") from None

    def derivative(self, var):
        return ONE if var == self.name else ZERO

    def variables(self):
        return frozenset({self.name})

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr

    def evaluate(self, env):
        return -self.operand.evaluate(env)

    def derivative(self, var):
        return neg(self.operand.derivative(var))

    def variables(self):
        return self.operand.variables()

    def __str__(self):
        return f"-({self.operand})"


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env):
        a, b = self.left.evaluate(env), self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return np.power(a, b)

    def derivative(self, var):
        u, v = self.left, self.right
        du, dv = u.derivative(var), v.derivative(var)
        if self.op == "+":
            return add(du, dv)
        if self.op == "-":
            return sub(du, dv)
        if self.op == "*":
            return add(mul(du, v), mul(u, dv))
        if self.op == "/":
            return div(sub(mul(du, v), mul(u, dv)), mul(v, v))
        if var in v.variables():
            raise ValueError("Only constant exponents can be differentiated")
        return mul(mul(v, power(u, sub(v, ONE))), du)

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def evaluate(self, env):
        return FUNCTIONS[self.func](self.arg.evaluate(env))

    def derivative(self, var):
        inner = self.arg.derivative(var)
        if inner.is_zero():
            return ZERO
        if self.func == "sin":
            outer = Call("cos", self.arg)
        elif self.func == "cos":
            outer = neg(Call("sin", self.arg))
        else:
            outer = self
        return mul(outer, inner)

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"{self.func}({self.arg})"


# ---- constant-folding constructors used by derivative() ---- #
def neg(a: Expr) -> Expr:
    return Num(-a.value) if isinstance(a, Num) else Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if b.is_zero():
        return a
    if a.is_zero():
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_zero() or b.is_zero():
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    return ZERO if a.is_zero() else BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if b.is_zero():
        return ONE
    if b == ONE:
        return a
    return BinOp("^", a, b)


# ---------------- parser ---------------- #
@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    column: int


def tokenize(source: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        match = _TOKEN.match(source, pos)
        if not match:
            column = pos + len(source[pos:]) - len(source[pos:].lstrip()) + 1
            raise ParseError(f"Unexpected character {source[column - 1]!r}", None, column)
        kind = match.lastgroup
        tokens.append(Token(kind, match.group(kind), match.start(kind) + 1))
        pos = match.end()
    tokens.append(Token("end", "", len(source) + 1))
    return tokens


class Parser:
    def __init__(self, source: str, allowed: Tuple[str, ...] = VARIABLES):
        self.source = source
        self.tokens = tokenize(source)
        self.pos = 0
        self.allowed = allowed

    # ---- token helpers ---- #
    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def _advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _expect(self, text: str) -> Token:
        if self.current.text != text:
            found = self.current.text or "end of input"
            raise ParseError(f"Expected {text!r}, found {found!r}", None, self.current.column)
        return self._advance()

    # ---- grammar ---- #
    def parse_expression(self) -> Expr:
        expr = self._expr()
        self._expect_end()
        return expr

    def parse_vector(self) -> Tuple[Expr, Expr]:
        self._expect("(")
        first = self._expr()
        self._expect(",")
        second = self._expr()
        self._expect(")")
        self._expect_end()
        return first, second

    def _expect_end(self):
        if self.current.kind != "end":
            raise ParseError(f"Unexpected {self.current.text!r}", None, self.current.column)

    def _expr(self) -> Expr:
        node = self._term()
        while self.current.text in ("+", "-"):
            op = self._advance().text
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._unary()
        while self.current.text in ("*", "/"):
            op = self._advance().text
            node = BinOp(op, node, self._unary())
        return node

    def _unary(self) -> Expr:
        if self.current.text == "-":
            self._advance()
            return Neg(self._unary())
        if self.current.text == "+":
            self._advance()
            return self._unary()
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self.current.text == "^":
            self._advance()
            return BinOp("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        token = self.current
        if token.kind == "num":
            self._advance()
            return Num(float(token.text))
        if token.kind == "name":
            self._advance()
            if token.text in FUNCTIONS:
                self._expect("(")
                arg = self._expr()
                self._expect(")")
                return Call(token.text, arg)
            if token.text in CONSTANTS:
                return Const(token.text)
            if token.text in self.allowed:
                return Var(token.text)
            raise ParseError(f"Unknown name {token.text!r}", None, token.column)
        if token.text == "(":
            self._advance()
            node = self._expr()
            self._expect(")")
            return node
        found = token.text or "end of input"
        raise ParseError(f"Unexpected {found!r}", None, token.column)


def parse_expression(source: str, allowed: Tuple[str, ...] = VARIABLES) -> Expr:
    return Parser(source, allowed).parse_expression()


def parse_vector(source: str, allowed: Tuple[str, ...] = VARIABLES) -> Tuple[Expr, Expr]:
    return Parser(source, allowed).parse_vector()
