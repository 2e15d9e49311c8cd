"""A small arithmetic expression language for scenario files.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are ``x1 … xn`` and the constant ``pi``; functions are ``sin``,
``cos``, ``tanh``, ``exp`` and ``abs``. Errors carry the byte offset of the
offending token.
"""
import re
from dataclasses import dataclass

import numpy as np
import sympy

from .errors import ExpressionError

FUNCTIONS = {
    "sin": (np.sin, sympy.sin),
    "cos": (np.cos, sympy.cos),
    "tanh": (np.tanh, sympy.tanh),
    "exp": (np.exp, sympy.exp),
    "abs": (np.abs, sympy.Abs),
}
CONSTANTS = {"pi": np.pi}

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))")


@dataclass(frozen=True)
class Node:
    kind: str           # num, var, const, neg, bin, call
    value: object
    args: tuple = ()
    offset: int = 0


def _tokenize(text):
    raw = text.encode()
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionError(f"unexpected character {text[start]!r}",
                                  offset=len(text[:start].encode()))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, text, nvars):
        self.tokens = _tokenize(text)
        self.i = 0
        self.nvars = nvars

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        kind, val, off = self.take()
        if kind != "op" or val != op:
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {op!r}, found {found}", offset=off)

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", offset=off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            _, op, off = self.take()
            node = Node("bin", op, (node, self.term()), off)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            _, op, off = self.take()
            node = Node("bin", op, (node, self.unary()), off)
        return node

    def unary(self):
        kind, val, off = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            inner = self.unary()
            return Node("neg", None, (inner,), off) if val == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            _, _, off = self.take()
            return Node("bin", "^", (base, self.unary()), off)
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Node("num", float(val), (), off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val in FUNCTIONS:
                if not (self.peek()[0] == "op" and self.peek()[1] == "("):
                    raise ExpressionError(f"function {val!r} needs one argument", offset=off)
                self.take()
                arg = self.expr()
                if self.peek()[0] == "op" and self.peek()[1] == ",":
                    raise ExpressionError(f"function {val!r} takes exactly one argument",
                                          offset=self.peek()[2])
                self.expect(")")
                return Node("call", val, (arg,), off)
            if val in CONSTANTS:
                return Node("const", val, (), off)
            m = re.fullmatch(r"x([1-9]\d*)", val)
            if m and (self.nvars is None or int(m.group(1)) <= self.nvars):
                return Node("var", int(m.group(1)) - 1, (), off)
            raise ExpressionError(f"unknown identifier {val!r}", offset=off)
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionError(f"unexpected {found}", offset=off)


def _evaluate(node, x):
    k = node.kind
    if k == "num":
        return node.value
    if k == "const":
        return CONSTANTS[node.value]
    if k == "var":
        if node.value >= x.shape[-1]:
            raise ExpressionError(f"variable x{node.value + 1} not available", offset=node.offset)
        return x[..., node.value]
    if k == "neg":
        return -_evaluate(node.args[0], x)
    if k == "call":
        return FUNCTIONS[node.value][0](_evaluate(node.args[0], x))
    a = _evaluate(node.args[0], x)
    b = _evaluate(node.args[1], x)
    op = node.value
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(np.asarray(b) == 0):
            raise ExpressionError("division by zero", offset=node.offset)
        return a / b
    return np.power(a, b)


def _to_sympy(node, symbols):
    k = node.kind
    if k == "num":
        return sympy.Float(node.value) if node.value != int(node.value) else sympy.Integer(int(node.value))
    if k == "const":
        return sympy.pi
    if k == "var":
        return symbols[node.value]
    if k == "neg":
        return -_to_sympy(node.args[0], symbols)
    if k == "call":
        return FUNCTIONS[node.value][1](_to_sympy(node.args[0], symbols))
    a, b = (_to_sympy(c, symbols) for c in node.args)
    return {"+": a + b, "-": a - b, "*": a * b, "/": a / b, "^": a ** b}[node.value]


class Expression:
    """A parsed expression, callable on ``points[..., n]``.

    Parameters
    ----------
    text : str
        Source text.
    nvars : int, optional
        Highest admissible variable index; ``None`` accepts any ``x<k>``.
    """

    def __init__(self, text, nvars=None):
        self.text = str(text)
        self.nvars = nvars
        self.tree = _Parser(self.text, nvars).parse()

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __call__(self, points):
        x = np.asarray(points, dtype=np.float64)
        if x.ndim == 0:
            x = x[None]
        with np.errstate(all="ignore"):
            out = _evaluate(self.tree, x)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), x.shape[:-1]).copy()

    def sympy(self, n):
        symbols = sympy.symbols(f"x1:{n + 1}")
        return _to_sympy(self.tree, symbols), symbols

    def derivative(self, n, *axes):
        """Vectorised callable for ∂^k/∂x_{axes} of the expression."""
        expr, symbols = self.sympy(n)
        for a in axes:
            expr = sympy.diff(expr, symbols[a])
        fn = sympy.lambdify([symbols], expr, modules="numpy")

        def evaluate(points):
            x = np.asarray(points, dtype=np.float64)
            out = fn(np.moveaxis(x, -1, 0))
            return np.broadcast_to(np.asarray(out, dtype=np.float64), x.shape[:-1]).copy()

        return evaluate


def expression_eval(expr: str, point) -> float:
    """Evaluate ``expr`` at a single point."""
    x = np.atleast_1d(np.asarray(point, dtype=np.float64))
    value = float(Expression(expr)(x))
    if not np.isfinite(value):
        raise ExpressionError(f"expression {expr!r} is not finite at {tuple(x)}")
    return value
