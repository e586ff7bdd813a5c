"""Closed-form scalar expressions in named coordinates.

Metric coefficients and symbol inputs are given as strings built from
numbers, coordinate names, ``+ - * /``, integer powers ``^``/``**``, and the
functions ``sin cos exp sqrt``.  Parsed expressions evaluate on floats,
numpy arrays, or :class:`~cornerray.dual.Dual` values, so one code path
serves pointwise evaluation, vectorized grids, and exact differentiation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import dual
from .errors import ExprParseError, NonDifferentiable

__all__ = ["Expr", "parse", "metric_var_names", "b_var_names"]

_FUNCS = {"sin": dual.sin, "cos": dual.cos, "exp": dual.exp, "sqrt": dual.sqrt}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[()+\-*/^]))"
)


def metric_var_names(k, l):
    """Coordinate names allowed in metric coefficient entries."""
    return tuple(f"x{j + 1}" for j in range(k)) + tuple(
        f"y{i + 1}" for i in range(l)
    )


def b_var_names(k, l):
    """Coordinate names of the b-cotangent chart (x, y, t, sigma, zeta, tau)."""
    return (
        tuple(f"x{j + 1}" for j in range(k))
        + tuple(f"y{i + 1}" for i in range(l))
        + ("t",)
        + tuple(f"sig{j + 1}" for j in range(k))
        + tuple(f"zeta{i + 1}" for i in range(l))
        + ("tau",)
    )


class Node:
    def eval(self, env):
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Node):
    value: float

    def eval(self, env):
        return self.value


@dataclass(frozen=True)
class Var(Node):
    name: str

    def eval(self, env):
        return env[self.name]


@dataclass(frozen=True)
class Unary(Node):
    op: str
    arg: Node

    def eval(self, env):
        v = self.arg.eval(env)
        return -v if self.op == "-" else v


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: Node
    right: Node

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b


@dataclass(frozen=True)
class Power(Node):
    base: Node
    exponent: int

    def eval(self, env):
        return self.base.eval(env) ** self.exponent


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node

    def eval(self, env):
        return _FUNCS[self.func](self.arg.eval(env))


class Expr:
    """A parsed expression together with its source text and variable set."""

    def __init__(self, source, root, variables):
        self.source = source
        self.root = root
        self.variables = variables

    @property
    def is_constant(self):
        return not self.variables

    def __call__(self, env):
        return self.root.eval(env)

    def eval_floats(self, env):
        out = self.root.eval(env)
        if not np.all(np.isfinite(dual.value_of(out))):
            raise NonDifferentiable(
                f"expression {self.source!r} is not finite at the point"
            )
        return out

    def gradient(self, names, values):
        """Value and exact gradient with respect to ``names`` at ``values``."""
        seeds = dual.seed(values)
        env = dict(zip(names, seeds))
        for v in self.variables:
            if v not in env:
                raise KeyError(f"expression variable {v!r} not bound")
        out = self.root.eval(env)
        m = len(names)
        val, grad = dual.value_of(out), dual.grad_of(out, m)
        if not (np.all(np.isfinite(val)) and np.all(np.isfinite(grad))):
            raise NonDifferentiable(
                f"expression {self.source!r} is not differentiable at the point"
            )
        return val, grad

    def __repr__(self):
        return f"Expr({self.source!r})"


class _Parser:
    def __init__(self, text, allowed):
        self.text = text
        self.allowed = allowed
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise ExprParseError(f"unexpected character {text[pos]!r}", pos)
            self.tokens.append((m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            raise ExprParseError(f"expected {value!r}, found {text!r}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind is not None:
            raise ExprParseError(f"trailing input {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            return Unary(op, self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            _, _, pos = self.take()
            sign = 1
            while self.peek()[1] in ("+", "-"):
                if self.take()[1] == "-":
                    sign = -sign
            kind, text, pos = self.take()
            if kind != "num" or not float(text).is_integer():
                raise ExprParseError("exponent must be an integer literal", pos)
            return Power(base, sign * int(float(text)))
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text not in self.allowed:
                raise ExprParseError(f"unknown variable {text!r}", pos)
            return Var(text)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprParseError(f"unexpected token {text!r}", pos)


def _free_vars(node):
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Unary):
        return _free_vars(node.arg)
    if isinstance(node, Binary):
        return _free_vars(node.left) | _free_vars(node.right)
    if isinstance(node, Power):
        return _free_vars(node.base)
    if isinstance(node, Call):
        return _free_vars(node.arg)
    return set()


def parse(text, allowed_names):
    """Parse ``text`` into an :class:`Expr` over the allowed coordinate names."""
    root = _Parser(str(text), frozenset(allowed_names)).parse()
    variables = frozenset(_free_vars(root))
    expr = Expr(str(text), root, variables)
    if expr.is_constant:
        # fold to a plain number once; keeps flat charts on the fast path
        expr.constant_value = float(root.eval({}))
    return expr
