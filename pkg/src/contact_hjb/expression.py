"""Small arithmetic expression language used for potentials, couplings and
initial data in run configurations.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Evaluation is vectorised over numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionError

FUNCTIONS = {
    "abs": (1, np.abs),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "sqrt": (1, None),
    "min": (2, None),
    "max": (2, None),
}
VARIABLES = ("x", "y", "u")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Num | Var | Neg | BinOp | Call


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    end = len(text)
    while pos < end:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, offset = self.take()
        if text != value or kind != "op":
            found = text or "end of input"
            raise ExpressionError(f"expected {value!r}, found {found!r}", offset)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {text!r}", offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, text, offset = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {text!r}", offset)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text][0]
                if len(args) != arity:
                    raise ExpressionError(
                        f"{text} takes {arity} argument(s), got {len(args)}", offset
                    )
                return Call(text, tuple(args))
            if text not in VARIABLES:
                raise ExpressionError(f"unknown identifier {text!r}", offset)
            return Var(text)
        if (kind, text) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {text or 'end of input'!r}", offset)


def parse_expression(text: str) -> Node:
    """Parse ``text`` into an expression tree.

    >>> evaluate(parse_expression("2^3^2"))
    512.0
    """
    return _Parser(text).parse()


def _check_finite_domain(cond, message):
    if np.any(cond):
        raise ExpressionError(message)


def evaluate(node: Node, **variables):
    """Evaluate ``node``; variables may be scalars or numpy arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in variables:
            raise ExpressionError(f"variable {node.name!r} is not bound here")
        return variables[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.operand, **variables)
    if isinstance(node, BinOp):
        a = evaluate(node.left, **variables)
        b = evaluate(node.right, **variables)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            _check_finite_domain(np.asarray(b) == 0, "division by zero")
            return a / b
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.power(np.asarray(a, dtype=float), b)
        _check_finite_domain(np.isnan(out), "power of a negative base is undefined")
        return out if np.ndim(out) else float(out)
    name = node.name
    args = [evaluate(arg, **variables) for arg in node.args]
    if name == "sqrt":
        _check_finite_domain(np.asarray(args[0]) < 0, "sqrt of a negative number")
        return np.sqrt(args[0])
    if name == "min":
        return np.minimum(args[0], args[1])
    if name == "max":
        return np.maximum(args[0], args[1])
    return FUNCTIONS[name][1](args[0])


def variables_of(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables_of(node.operand)
    if isinstance(node, BinOp):
        return variables_of(node.left) | variables_of(node.right)
    if isinstance(node, Call):
        return set().union(*(variables_of(a) for a in node.args))
    return set()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def to_string(node: Node) -> str:
    """Print with the minimum parentheses needed to re-parse to the same tree."""

    def wrap(child, need):
        text = to_string(child)
        return f"({text})" if _prec(child) < need else text

    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + wrap(node.operand, _PREC["neg"])
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    p = _PREC[node.op]
    if node.op == "^":
        return f"{wrap(node.left, _PREC['atom'])}^{wrap(node.right, _PREC['neg'])}"
    return f"{wrap(node.left, p)} {node.op} {wrap(node.right, p + 1)}"


class Expression:
    """Parsed expression together with its source text."""

    def __init__(self, text: str):
        self.text = text
        self.tree = parse_expression(text)
        self.variables = variables_of(self.tree)

    def __call__(self, **variables):
        return evaluate(self.tree, **variables)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def is_constant(self) -> bool:
        return not self.variables
