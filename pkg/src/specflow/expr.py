"""Scalar expressions over theta1, theta2 and t with symbolic d/dt.

Grammar::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("-" | "+") unary | primary ;
    primary = number | variable | func "(" expr ")" | "(" expr ")" ;
    variable = "theta1" | "theta2" | "t" | "pi" ;
    func    = "sin" | "cos" | "exp" ;

``pi`` is a constant.  Numbers accept the usual decimal/exponent forms.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("theta1", "theta2", "t")
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}


class ExpressionSyntaxError(ValueError):
    def __init__(self, message: str, source: str, offset: int):
        super().__init__(f"{message} at offset {offset} in {source!r}")
        self.source = source
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


class Node:
    def evaluate(self, env):
        raise NotImplementedError

    def diff(self, var: str) -> "Node":
        raise NotImplementedError

    def variables(self) -> set[str]:
        return set()

    def __call__(self, **env):
        return self.evaluate(env)


@dataclass(frozen=True)
class Num(Node):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, var):
        return ZERO

    def __str__(self):
        return repr(self.value) if self.value != int(self.value) or abs(self.value) > 1e15 \
            else str(int(self.value))


@dataclass(frozen=True)
class Var(Node):
    name: str

    def evaluate(self, env):
        if self.name == "pi":
            return math.pi
        try:
            return env[self.name]
        except KeyError:
            raise EvaluationError(f"variable {self.name!r} not bound") from None

    def diff(self, var):
        return ONE if self.name == var else ZERO

    def variables(self):
        return set() if self.name == "pi" else {self.name}

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    arg: Node

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def variables(self):
        return self.arg.variables()

    def __str__(self):
        return f"-{_wrap(self.arg, 3)}"


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise EvaluationError(f"division by zero in {self}")
        return a / b

    def diff(self, var):
        a, b = self.left, self.right
        da, db = a.diff(var), b.diff(var)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        # (a/b)' = a'/b - a b' / b^2
        return sub(div(da, b), div(mul(a, db), mul(b, b)))

    def variables(self):
        return self.left.variables() | self.right.variables()

    def __str__(self):
        prec = _PREC[self.op]
        left = _wrap(self.left, prec)
        right = _wrap(self.right, prec + (self.op in "-/"))
        return f"{left} {self.op} {right}"


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node

    def evaluate(self, env):
        return FUNCTIONS[self.func](self.arg.evaluate(env))

    def diff(self, var):
        inner = self.arg.diff(var)
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


ZERO = Num(0.0)
ONE = Num(1.0)
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node):
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 4


def _wrap(node, prec):
    text = str(node)
    return f"({text})" if _prec(node) < prec else text


def _is(node, value):
    return isinstance(node, Num) and node.value == value


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a, b):
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m.group(0).strip() == "" and m.end() == len(source):
            break
        start = m.start(m.lastindex)
        number, name, other = m.groups()
        if number is not None:
            tokens.append(("num", number, start))
        elif name is not None:
            tokens.append(("name", name, start))
        elif other in "+-*/()":
            tokens.append((other, other, start))
        else:
            raise ExpressionSyntaxError(f"unexpected character {other!r}", source, start)
        pos = m.end()
    tokens.append(("eof", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, offset=None):
        if offset is None:
            offset = self.peek()[2]
        raise ExpressionSyntaxError(msg, self.source, offset)

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "eof":
            self.error(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in "+-" and self.peek()[0] != "eof":
            op = self.next()[0]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.next()[0]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind = self.peek()[0]
        if kind == "-":
            self.next()
            return Neg(self.unary())
        if kind == "+":
            self.next()
            return self.unary()
        return self.primary()

    def group(self):
        _, _, open_at = self.next()
        if self.peek()[0] == "eof":
            self.error("unclosed '('", open_at)
        node = self.expr()
        if self.peek()[0] != ")":
            if self.peek()[0] == "eof":
                self.error("unclosed '('", open_at)
            self.error(f"expected ')' but found {self.peek()[1]!r}")
        self.next()
        return node

    def primary(self):
        kind, text, offset = self.peek()
        if kind == "num":
            self.next()
            return Num(float(text))
        if kind == "name":
            self.next()
            if text in FUNCTIONS:
                if self.peek()[0] != "(":
                    self.error(f"expected '(' after {text}")
                return Call(text, self.group())
            if text in VARIABLES or text == "pi":
                return Var(text)
            self.error(f"unknown name {text!r}", offset)
        if kind == "(":
            return self.group()
        if kind == "eof":
            self.error("unexpected end of input")
        self.error(f"unexpected {text!r}")


def parse(source: str) -> Node:
    """Parse ``source`` into an expression tree."""
    if not isinstance(source, str):
        raise TypeError("expression source must be a string")
    return _Parser(source).parse()


def as_expression(value) -> Node:
    if isinstance(value, Node):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    return parse(value)
