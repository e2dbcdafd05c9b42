"""Small arithmetic expression language for Mattis functions and spin maps.

Grammar (EBNF)::

    expr     = term , { ("+" | "-") , term } ;
    term     = unary , { ("*" | "/") , unary } ;
    unary    = "-" , unary | power ;
    power    = atom , [ "^" , exponent ] ;
    exponent = integer , [ "^" , exponent ] ;      (* right associative *)
    atom     = number | identifier | func , "(" , expr , ")" | "(" , expr , ")" ;
    func     = "exp" | "log" | "cosh" | "tanh" | "abs" ;

Exponents are literal nonnegative integers, so every expression is real
valued on all of R^n except for poles and the log branch cut, which are
reported as :class:`ExprDomainError` at evaluation time.

Evaluation accepts floats or numpy arrays as bindings; arrays broadcast.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "Neg", "BinOp", "Pow", "Call",
    "ExprError", "ExprSyntaxError", "UnknownIdentifierError", "ExprDomainError",
    "FUNCTIONS", "parse_expr", "eval_expr", "to_source", "variables_of",
    "compile_numba",
]

FUNCTIONS = {
    "exp": np.exp,
    "log": np.log,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "abs": np.abs,
}


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r}", position)
        self.name = name


class ExprDomainError(ExprError, ArithmeticError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]


# -- tokenizer and parser ------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos:].strip() == "":
            break
        match = _TOKEN.match(source, pos)
        if match is None or match.end() == pos:
            start = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {source[start]!r}", start)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, variables: frozenset[str]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> int:
        kind, text, pos = self.take()
        if kind == "op" and text == "-":
            raise ExprSyntaxError("negative exponent", pos)
        if kind != "num":
            raise ExprSyntaxError("exponent must be a literal nonnegative integer", pos)
        if not text.isdigit():
            raise ExprSyntaxError(f"non-integer exponent {text!r}", pos)
        value = int(text)
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            value = value ** self.exponent()
        return value

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ExprSyntaxError(f"function {text!r} requires an argument", pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                raise ExprSyntaxError(f"unknown function {text!r}", pos)
            if text not in self.variables:
                raise UnknownIdentifierError(text, pos)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)


def parse_expr(source: str, variables: Iterable[str]) -> Expr:
    """Parse ``source`` into an AST; every identifier must be in ``variables``."""
    return _Parser(source, frozenset(variables)).parse()


# -- evaluation ----------------------------------------------------------------

def eval_expr(node: Expr, bindings: Mapping[str, object]):
    """Evaluate ``node``.  Scalar bindings give a float, array bindings an array."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = _eval(node, bindings)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _eval(node: Expr, b: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return b[node.name]
        except KeyError:
            raise ExprError(f"unbound variable {node.name!r}") from None
    if isinstance(node, Neg):
        return -np.asarray(_eval(node.arg, b), dtype=float)
    if isinstance(node, BinOp):
        left = np.asarray(_eval(node.left, b), dtype=float)
        right = np.asarray(_eval(node.right, b), dtype=float)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if np.any(right == 0.0):
            raise ExprDomainError("division by zero")
        return left / right
    if isinstance(node, Pow):
        return np.asarray(_eval(node.base, b), dtype=float) ** node.exponent
    if isinstance(node, Call):
        arg = np.asarray(_eval(node.arg, b), dtype=float)
        if node.func == "log" and np.any(arg <= 0.0):
            raise ExprDomainError("log of nonpositive argument")
        return FUNCTIONS[node.func](arg)
    raise TypeError(f"not an expression node: {node!r}")


def variables_of(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return variables_of(node.arg)
    if isinstance(node, Pow):
        return variables_of(node.base)
    return variables_of(node.left) | variables_of(node.right)


# -- printing --------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_NEG, _POW, _ATOM = 3, 4, 5


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG
    if isinstance(node, Pow):
        return _POW
    return _ATOM


def to_source(node: Expr) -> str:
    """Print ``node`` so that parsing the result rebuilds the same tree."""
    def wrap(child: Expr, minimum: int) -> str:
        text = to_source(child)
        return f"({text})" if _prec(child) < minimum else text

    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + wrap(node.arg, _NEG)
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        # right operand strictly tighter: keeps the tree (and float rounding) intact
        return f"{wrap(node.left, p)} {node.op} {wrap(node.right, p + 1)}"
    if isinstance(node, Pow):
        return f"{wrap(node.base, _ATOM)}^{node.exponent}"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# -- numba compilation -----------------------------------------------------------

def _py_source(node: Expr, index: Mapping[str, int]) -> str:
    if isinstance(node, Num):
        return f"({float(node.value)!r})"
    if isinstance(node, Var):
        return f"v[{index[node.name]}]"
    if isinstance(node, Neg):
        return f"(-{_py_source(node.arg, index)})"
    if isinstance(node, BinOp):
        return f"({_py_source(node.left, index)} {node.op} {_py_source(node.right, index)})"
    if isinstance(node, Pow):
        return f"({_py_source(node.base, index)} ** {node.exponent})"
    if node.func == "abs":
        return f"abs({_py_source(node.arg, index)})"
    return f"math.{node.func}({_py_source(node.arg, index)})"


def compile_numba(node: Expr, index: Mapping[str, int]) -> Callable:
    """Jit-compile ``node`` into ``f(v) -> float`` reading variable ``name`` from ``v[index[name]]``.

    The generated source only contains literals, indexed reads of ``v`` and
    calls from the fixed function set, all taken from an already validated AST.
    """
    import numba

    namespace = {"math": math}
    exec(f"def _f(v):\n    return {_py_source(node, index)}\n", namespace)
    return numba.njit(cache=False)(namespace["_f"])
