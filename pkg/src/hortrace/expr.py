"""Coefficient expressions: parsing, simplification, differentiation, evaluation.

The grammar covers what vector-field coefficients need:

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' ['-'] INT)?        (also '**')
    atom   := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

Identifiers are ``x1 .. xd`` and ``t``. ``t`` always names the last coordinate
of the ambient space, so on R^{n+1} it is an alias of ``x{n+1}``.
Functions: ``exp``, ``sin``, ``cos``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("exp", "sin", "cos")


class ExpressionSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the 0-based character index."""

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}" + (f" in {text!r}" if text else ""))
        self.offset = offset
        self.text = text


class UnknownIdentifierError(ValueError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


# --------------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based coordinate index


@dataclass(frozen=True)
class Add:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Sub:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Mul:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Div:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Node"


Node = Union[Const, Var, Add, Sub, Mul, Div, Neg, Pow, Func]

ZERO = Const(0.0)
ONE = Const(1.0)


def is_zero(node: Node) -> bool:
    return isinstance(node, Const) and node.value == 0.0


def is_one(node: Node) -> bool:
    return isinstance(node, Const) and node.value == 1.0


# ------------------------------------------------------------------- simplifier
# Smart constructors fold constants and drop neutral elements. They never
# reorder floating point operations on non-constant subtrees.

def add(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return Add(a, b)


def sub(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if is_zero(b):
        return a
    if is_zero(a):
        return neg(b)
    if a == b:
        return ZERO
    if isinstance(b, Neg):
        return add(a, b.arg)
    return Sub(a, b)


def mul(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if is_zero(a) or is_zero(b):
        return ZERO
    if is_one(a):
        return b
    if is_one(b):
        return a
    if isinstance(a, Const) and a.value == -1.0:
        return neg(b)
    if isinstance(b, Const) and b.value == -1.0:
        return neg(a)
    if isinstance(b, Const) and not isinstance(a, Const):
        return Mul(b, a)
    return Mul(a, b)


def div(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if is_zero(a):
        return ZERO
    if is_one(b):
        return a
    return Div(a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Node, n: int) -> Node:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        if a.value == 0.0 and n < 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return Const(a.value ** n)
    return Pow(a, n)


def func(name: str, a: Node) -> Node:
    if isinstance(a, Const):
        return Const(getattr(math, name)(a.value))
    return Func(name, a)


def simplify(node: Node) -> Node:
    """Rebuild ``node`` bottom-up through the folding constructors."""
    if isinstance(node, (Const, Var)):
        return node
    if isinstance(node, Add):
        return add(simplify(node.left), simplify(node.right))
    if isinstance(node, Sub):
        return sub(simplify(node.left), simplify(node.right))
    if isinstance(node, Mul):
        return mul(simplify(node.left), simplify(node.right))
    if isinstance(node, Div):
        return div(simplify(node.left), simplify(node.right))
    if isinstance(node, Neg):
        return neg(simplify(node.arg))
    if isinstance(node, Pow):
        return power(simplify(node.base), node.exponent)
    if isinstance(node, Func):
        return func(node.name, simplify(node.arg))
    raise TypeError(node)


# ---------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, message: str):
        raise ExpressionSyntaxError(message, self.tok.pos, self.text)

    def eat(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def parse(self) -> Node:
        if self.tok.kind == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.tok.kind != "end":
            self.fail(f"unexpected token {self.tok.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            if self.eat("+"):
                node = Add(node, self.term())
            elif self.eat("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.unary()
        while True:
            if self.eat("*"):
                node = Mul(node, self.unary())
            elif self.eat("/"):
                node = Div(node, self.unary())
            else:
                return node

    def unary(self) -> Node:
        if self.eat("-"):
            return Neg(self.unary())
        if self.eat("+"):
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.eat("^") or self.eat("**"):
            sign = -1 if self.eat("-") else 1
            tok = self.tok
            if tok.kind != "num" or not re.fullmatch(r"\d+", tok.text):
                self.fail("exponent must be an integer literal")
            self.i += 1
            return Pow(base, sign * int(tok.text))
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "id":
            self.i += 1
            if tok.text in FUNCTIONS:
                if not self.eat("("):
                    self.fail(f"expected '(' after {tok.text}")
                arg = self.expr()
                if not self.eat(")"):
                    self.fail("expected ')'")
                return Func(tok.text, arg)
            return Var(self._var_index(tok))
        if self.eat("("):
            node = self.expr()
            if not self.eat(")"):
                self.fail("expected ')'")
            return node
        if tok.kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected token {tok.text!r}")

    def _var_index(self, tok: _Tok) -> int:
        if tok.text == "t":
            return self.dim - 1
        m = re.fullmatch(r"x([1-9]\d*)", tok.text)
        if m and int(m.group(1)) <= self.dim:
            return int(m.group(1)) - 1
        raise UnknownIdentifierError(tok.text, tok.pos)


def parse(text: str, dim: int) -> "Expression":
    """Parse ``text`` into an :class:`Expression` over ``dim`` coordinates."""
    return Expression(simplify(_Parser(text, dim).parse()), dim)


# ------------------------------------------------------------- differentiation

def diff(node: Node, var: int) -> Node:
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == var else ZERO
    if isinstance(node, Add):
        return add(diff(node.left, var), diff(node.right, var))
    if isinstance(node, Sub):
        return sub(diff(node.left, var), diff(node.right, var))
    if isinstance(node, Mul):
        return add(mul(diff(node.left, var), node.right), mul(node.left, diff(node.right, var)))
    if isinstance(node, Div):
        num = sub(mul(diff(node.left, var), node.right), mul(node.left, diff(node.right, var)))
        return div(num, power(node.right, 2))
    if isinstance(node, Neg):
        return neg(diff(node.arg, var))
    if isinstance(node, Pow):
        inner = diff(node.base, var)
        if is_zero(inner):
            return ZERO
        return mul(mul(Const(float(node.exponent)), power(node.base, node.exponent - 1)), inner)
    if isinstance(node, Func):
        inner = diff(node.arg, var)
        if is_zero(inner):
            return ZERO
        if node.name == "exp":
            outer = node
        elif node.name == "sin":
            outer = func("cos", node.arg)
        else:
            outer = neg(func("sin", node.arg))
        return mul(outer, inner)
    raise TypeError(node)


def substitute(node: Node, var: int, value: float) -> Node:
    """Replace coordinate ``var`` by a constant and re-simplify."""
    if isinstance(node, Var):
        return Const(value) if node.index == var else node
    if isinstance(node, Const):
        return node
    if isinstance(node, (Add, Sub, Mul, Div)):
        return simplify(type(node)(substitute(node.left, var, value), substitute(node.right, var, value)))
    if isinstance(node, Neg):
        return neg(substitute(node.arg, var, value))
    if isinstance(node, Pow):
        return power(substitute(node.base, var, value), node.exponent)
    if isinstance(node, Func):
        return func(node.name, substitute(node.arg, var, value))
    raise TypeError(node)


def variables(node: Node) -> set[int]:
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Const):
        return set()
    if isinstance(node, (Add, Sub, Mul, Div)):
        return variables(node.left) | variables(node.right)
    if isinstance(node, (Neg, Func)):
        return variables(node.arg)
    if isinstance(node, Pow):
        return variables(node.base)
    raise TypeError(node)


def reindex(node: Node, mapping: dict[int, int]) -> Node:
    """Rename coordinates; indices missing from ``mapping`` raise KeyError."""
    if isinstance(node, Var):
        return Var(mapping[node.index])
    if isinstance(node, Const):
        return node
    if isinstance(node, (Add, Sub, Mul, Div)):
        return type(node)(reindex(node.left, mapping), reindex(node.right, mapping))
    if isinstance(node, Neg):
        return Neg(reindex(node.arg, mapping))
    if isinstance(node, Pow):
        return Pow(reindex(node.base, mapping), node.exponent)
    if isinstance(node, Func):
        return Func(node.name, reindex(node.arg, mapping))
    raise TypeError(node)


# ------------------------------------------------------------------ evaluation

_NP_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos}


def evaluate_node(node: Node, X: np.ndarray):
    """Evaluate on points ``X`` of shape (N, d); returns shape (N,)."""
    if isinstance(node, Const):
        return np.full(X.shape[0], node.value)
    if isinstance(node, Var):
        return X[:, node.index].astype(float, copy=True)
    if isinstance(node, Add):
        return evaluate_node(node.left, X) + evaluate_node(node.right, X)
    if isinstance(node, Sub):
        return evaluate_node(node.left, X) - evaluate_node(node.right, X)
    if isinstance(node, Mul):
        return evaluate_node(node.left, X) * evaluate_node(node.right, X)
    if isinstance(node, Div):
        return evaluate_node(node.left, X) / evaluate_node(node.right, X)
    if isinstance(node, Neg):
        return -evaluate_node(node.arg, X)
    if isinstance(node, Pow):
        return _ipow(evaluate_node(node.base, X), node.exponent)
    if isinstance(node, Func):
        return _NP_FUNCS[node.name](evaluate_node(node.arg, X))
    raise TypeError(node)


def _ipow(x, n: int):
    # Repeated squaring; both kernel backends use this exact sequence.
    if n < 0:
        return 1.0 / _ipow(x, -n)
    result = None
    base = x
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return result


# --------------------------------------------------------------------- printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def to_text(node: Node, dim: int | None = None) -> str:
    def name(i):
        return f"x{i + 1}"

    def wrap(child, prec, strict=False):
        s = go(child)
        p = _PREC.get(type(child), 5)
        if isinstance(child, Const) and child.value < 0:
            p = 3
        return f"({s})" if (p < prec or (strict and p == prec)) else s

    def go(n):
        if isinstance(n, Const):
            v = n.value
            return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
        if isinstance(n, Var):
            return name(n.index)
        if isinstance(n, Add):
            return f"{wrap(n.left, 1)} + {wrap(n.right, 1)}"
        if isinstance(n, Sub):
            return f"{wrap(n.left, 1)} - {wrap(n.right, 1, strict=True)}"
        if isinstance(n, Mul):
            return f"{wrap(n.left, 2)}*{wrap(n.right, 2)}"
        if isinstance(n, Div):
            return f"{wrap(n.left, 2)}/{wrap(n.right, 2, strict=True)}"
        if isinstance(n, Neg):
            return f"-{wrap(n.arg, 3)}"
        if isinstance(n, Pow):
            return f"{wrap(n.base, 5)}^{n.exponent}"
        if isinstance(n, Func):
            return f"{n.name}({go(n.arg)})"
        raise TypeError(n)

    return go(node)


# ---------------------------------------------------------------- compilation

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_POW, OP_EXP, OP_SIN, OP_COS = range(11)
_FUNC_OPS = {"exp": OP_EXP, "sin": OP_SIN, "cos": OP_COS}
_BIN_OPS = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV}


def compile_postfix(node: Node, ops: list, args: list, consts: list) -> int:
    """Append postfix code for ``node``; returns the stack depth it needs."""
    if isinstance(node, Const):
        ops.append(OP_CONST)
        args.append(len(consts))
        consts.append(node.value)
        return 1
    if isinstance(node, Var):
        ops.append(OP_VAR)
        args.append(node.index)
        return 1
    if type(node) in _BIN_OPS:
        d1 = compile_postfix(node.left, ops, args, consts)
        d2 = compile_postfix(node.right, ops, args, consts)
        ops.append(_BIN_OPS[type(node)])
        args.append(0)
        return max(d1, d2 + 1)
    if isinstance(node, Neg):
        d = compile_postfix(node.arg, ops, args, consts)
        ops.append(OP_NEG)
        args.append(0)
        return d
    if isinstance(node, Pow):
        d = compile_postfix(node.base, ops, args, consts)
        ops.append(OP_POW)
        args.append(node.exponent)
        return d
    if isinstance(node, Func):
        d = compile_postfix(node.arg, ops, args, consts)
        ops.append(_FUNC_OPS[node.name])
        args.append(0)
        return d
    raise TypeError(node)


# ------------------------------------------------------------------ public type

class Expression:
    """An immutable scalar expression over ``dim`` coordinates."""

    __slots__ = ("node", "dim")

    def __init__(self, node: Node, dim: int):
        object.__setattr__(self, "node", node)
        object.__setattr__(self, "dim", dim)

    def __setattr__(self, key, value):
        raise AttributeError("Expression is immutable")

    @classmethod
    def constant(cls, value: float, dim: int) -> "Expression":
        return cls(Const(float(value)), dim)

    @classmethod
    def coordinate(cls, index: int, dim: int) -> "Expression":
        return cls(Var(index), dim)

    def diff(self, var: int) -> "Expression":
        return Expression(diff(self.node, var), self.dim)

    def substitute(self, var: int, value: float) -> "Expression":
        return Expression(substitute(self.node, var, value), self.dim)

    def is_zero(self) -> bool:
        return is_zero(self.node)

    def is_constant(self) -> bool:
        return isinstance(self.node, Const)

    def variables(self) -> set[int]:
        return variables(self.node)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {X.shape[1]}")
        return evaluate_node(self.node, X)

    def __add__(self, other):
        return Expression(add(self.node, _node(other)), self.dim)

    def __sub__(self, other):
        return Expression(sub(self.node, _node(other)), self.dim)

    def __mul__(self, other):
        return Expression(mul(self.node, _node(other)), self.dim)

    __radd__ = __add__

    def __rmul__(self, other):
        return Expression(mul(_node(other), self.node), self.dim)

    def __neg__(self):
        return Expression(neg(self.node), self.dim)

    def __eq__(self, other):
        return isinstance(other, Expression) and self.dim == other.dim and self.node == other.node

    def __hash__(self):
        return hash((self.node, self.dim))

    def __str__(self):
        return to_text(self.node)

    def __repr__(self):
        return f"Expression({to_text(self.node)!r}, dim={self.dim})"


def _node(value) -> Node:
    if isinstance(value, Expression):
        return value.node
    return Const(float(value))
