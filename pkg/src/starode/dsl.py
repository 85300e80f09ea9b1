"""Expression language for coefficient functions of t, and JSON problem files.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' intlit)*          right-associative
    atom   := number | 't' | func '(' expr ')' | '(' expr ')'

Exponents are non-negative integer literals.  Error positions are byte
offsets into the UTF-8 source.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .solver import ODEProblem

__all__ = [
    "ProblemError",
    "ParseError",
    "ExprEvalError",
    "SchemaError",
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Pow",
    "Call",
    "parse_expr",
    "eval_expr",
    "pretty",
    "ProblemDocument",
    "load_document",
    "load_problem",
]

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}


class ProblemError(ValueError):
    """Base class for user-input errors (exit code 2 in the CLI)."""


class ParseError(ProblemError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at byte {position}")
        self.position = position


class ExprEvalError(ProblemError, ArithmeticError):
    def __init__(self, message: str, position: int, t=None):
        where = f" (t={t!r})" if t is not None else ""
        super().__init__(f"{message} at byte {position}{where}")
        self.position = position
        self.t = t


class SchemaError(ProblemError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Expr:
    pos: int = field(default=0, compare=False, kw_only=True)

    def __call__(self, t):
        return eval_expr(self, t)

    @property
    def constant_value(self):
        if _has_var(self):
            return None
        try:
            return float(eval_expr(self, 0.0))
        except ExprEvalError:
            return None

    @property
    def is_zero(self) -> bool:
        return self.constant_value == 0.0

    def __str__(self):
        return pretty(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str = "t"


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    name: str
    arg: Expr


def _has_var(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Num):
        return False
    if isinstance(e, Neg):
        return _has_var(e.operand)
    if isinstance(e, BinOp):
        return _has_var(e.left) or _has_var(e.right)
    if isinstance(e, Pow):
        return _has_var(e.base)
    return _has_var(e.arg)


# ---------------------------------------------------------------- lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    i = 0
    byte = 0
    while i < len(src):
        m = _TOKEN.match(src, i)
        if m is None:
            raise ParseError(f"unexpected character {src[i]!r}", byte)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            toks.append(_Tok(kind, text, byte))
        byte += len(text.encode("utf-8"))
        i = m.end()
    toks.append(_Tok("end", "", byte))
    return toks


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def accept(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            return self.advance()
        return None

    def expect(self, text):
        tok = self.accept(text)
        if tok is None:
            found = self.tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", self.tok.pos)
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected token {self.tok.text!r}", self.tok.pos)
        return e

    def expr(self):
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance()
            e = BinOp(op.text, e, self.term(), pos=op.pos)
        return e

    def term(self):
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance()
            e = BinOp(op.text, e, self.unary(), pos=op.pos)
        return e

    def unary(self):
        op = self.accept("-")
        if op is not None:
            return Neg(self.unary(), pos=op.pos)
        return self.power()

    def power(self):
        base = self.atom()
        op = self.accept("^")
        if op is None:
            return base
        return Pow(base, self.exponent(), pos=op.pos)

    def exponent(self) -> int:
        # right-associative chain of integer literals: 2^3^2 == 2^9
        tok = self.tok
        if tok.kind != "num":
            raise ParseError("exponent must be a non-negative integer literal", tok.pos)
        self.advance()
        value = float(tok.text)
        if not value.is_integer() or not re.fullmatch(r"\d+", tok.text):
            raise ParseError(f"non-integer exponent {tok.text!r}", tok.pos)
        n = int(tok.text)
        if self.accept("^") is not None:
            n = n ** self.exponent()
        if n > 10_000:
            raise ParseError(f"exponent {n} too large", tok.pos)
        return n

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ParseError(f"number literal {tok.text!r} overflows", tok.pos)
            return Num(value, pos=tok.pos)
        if tok.kind == "name":
            self.advance()
            if tok.text == "t":
                return Var(pos=tok.pos)
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg, pos=tok.pos)
            raise ParseError(f"unknown identifier {tok.text!r}", tok.pos)
        if self.accept("(") is not None:
            e = self.expr()
            self.expect(")")
            return e
        found = tok.text or "end of input"
        raise ParseError(f"unexpected {found!r}", tok.pos)


def parse_expr(src: str | bytes) -> Expr:
    if isinstance(src, (bytes, bytearray)):
        try:
            src = bytes(src).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from None
    if not isinstance(src, str):
        raise ParseError(f"expression must be a string, got {type(src).__name__}", 0)
    try:
        return _Parser(_tokenize(src)).parse()
    except RecursionError:
        raise ParseError("expression nested too deeply", 0) from None


# ---------------------------------------------------------------- evaluation


def _ipow(x, n: int):
    result = np.ones_like(x)
    while n:
        if n & 1:
            result = result * x
        x = x * x
        n >>= 1
    return result


def _check(value, e: Expr, t, what: str):
    bad = ~np.isfinite(value)
    if np.any(bad):
        tt = np.asarray(t)
        at = float(tt.flat[np.argmax(bad)]) if tt.ndim else float(tt)
        raise ExprEvalError(what, e.pos, at)
    return value


def _eval(e: Expr, t):
    if isinstance(e, Num):
        return np.full_like(t, e.value)
    if isinstance(e, Var):
        return t
    if isinstance(e, Neg):
        return -_eval(e.operand, t)
    if isinstance(e, BinOp):
        a, b = _eval(e.left, t), _eval(e.right, t)
        if e.op == "+":
            return _check(a + b, e, t, "overflow in '+'")
        if e.op == "-":
            return _check(a - b, e, t, "overflow in '-'")
        if e.op == "*":
            return _check(a * b, e, t, "overflow in '*'")
        if np.any(b == 0.0):
            tt = np.asarray(t)
            at = float(tt.flat[np.argmax(b == 0.0)]) if tt.ndim else float(tt)
            raise ExprEvalError("division by zero", e.pos, at)
        return _check(a / b, e, t, "overflow in '/'")
    if isinstance(e, Pow):
        return _check(_ipow(_eval(e.base, t), e.exponent), e, t, "overflow in '^'")
    x = _eval(e.arg, t)
    if e.name == "log" and np.any(x <= 0.0):
        raise ExprEvalError("log of non-positive value", e.pos, _first(t, x <= 0.0))
    if e.name == "sqrt" and np.any(x < 0.0):
        raise ExprEvalError("sqrt of negative value", e.pos, _first(t, x < 0.0))
    return _check(FUNCTIONS[e.name](x), e, t, f"overflow in {e.name}")


def _first(t, mask):
    tt = np.asarray(t)
    return float(tt.flat[np.argmax(mask)]) if tt.ndim else float(tt)


def eval_expr(e: Expr, t):
    """Evaluate at a float or an array of floats."""
    scalar = np.ndim(t) == 0
    tt = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(tt)):
        raise ExprEvalError("t must be finite", e.pos)
    with np.errstate(all="ignore"):
        out = _eval(e, tt)
    return float(out) if scalar else out


def pretty(e: Expr) -> str:
    """Fully parenthesised source that parses back to the same tree."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return "t"
    if isinstance(e, Neg):
        return f"(-{pretty(e.operand)})"
    if isinstance(e, BinOp):
        return f"({pretty(e.left)} {e.op} {pretty(e.right)})"
    if isinstance(e, Pow):
        return f"({pretty(e.base)}^{e.exponent})"
    return f"{e.name}({pretty(e.arg)})"


# ---------------------------------------------------------------- documents

_KEYS = {"n", "a", "b", "m", "grid", "rel_tol", "neumann"}


@dataclass
class ProblemDocument:
    N: int
    A: list
    B: list | None = None
    M: int = 40
    t_grid: list = field(default_factory=lambda: list(np.linspace(0.0, 1.0, 11)))
    rel_tol: float = 1e-12
    neumann: bool = False

    def to_problem(self, M: int | None = None) -> ODEProblem:
        return ODEProblem(self.A, self.B, self.M if M is None else M)


def _expr_grid(raw, name: str, N: int):
    if not isinstance(raw, list) or len(raw) != N:
        raise SchemaError(name, f"{name.upper()} must be square ({N} x {N})")
    out = []
    for i, row in enumerate(raw):
        if not isinstance(row, list):
            raise SchemaError(f"{name}[{i}]", "row must be a list")
        if len(row) != N:
            raise SchemaError(f"{name}[{i}]", f"{name.upper()} must be square ({N} x {N})")
        parsed = []
        for j, cell in enumerate(row):
            path = f"{name}[{i}][{j}]"
            if isinstance(cell, bool) or not isinstance(cell, (str, int, float)):
                raise SchemaError(path, "entry must be an expression string or a number")
            try:
                parsed.append(parse_expr(str(cell)) if isinstance(cell, str) else Num(float(cell)))
            except ParseError as exc:
                raise SchemaError(path, str(exc)) from None
        out.append(parsed)
    return out


def _as_int(value, path, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise SchemaError(path, f"must be an integer >= {minimum}")
    return value


def load_document(doc: str | bytes | dict) -> ProblemDocument:
    """Parse and validate a JSON problem document.

    Keys (case-insensitive): n, a, b?, m?, grid?, rel_tol?, neumann?.
    """
    if isinstance(doc, (str, bytes, bytearray)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise SchemaError("", "document must be a JSON object")
    data: dict[str, Any] = {}
    for k, v in doc.items():
        key = str(k).lower()
        if key not in _KEYS:
            raise SchemaError(str(k), "unknown field")
        data[key] = v
    if "n" not in data:
        raise SchemaError("n", "missing required field")
    if "a" not in data:
        raise SchemaError("a", "missing required field")
    N = _as_int(data["n"], "n", 1)
    A = _expr_grid(data["a"], "a", N)
    B = _expr_grid(data["b"], "b", N) if data.get("b") is not None else None
    M = _as_int(data.get("m", 40), "m", 2)
    grid = data.get("grid")
    if grid is None:
        grid = list(np.linspace(0.0, 1.0, 11))
    else:
        if not isinstance(grid, list) or not grid:
            raise SchemaError("grid", "must be a non-empty list of numbers")
        for i, g in enumerate(grid):
            if isinstance(g, bool) or not isinstance(g, (int, float)) or not 0.0 <= g <= 1.0:
                raise SchemaError(f"grid[{i}]", "must be a number in [0, 1]")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise SchemaError("grid", "must be sorted ascending")
        grid = [float(g) for g in grid]
    rel_tol = data.get("rel_tol", 1e-12)
    if isinstance(rel_tol, bool) or not isinstance(rel_tol, (int, float)) or not rel_tol > 0:
        raise SchemaError("rel_tol", "must be a positive number")
    neumann = data.get("neumann", False)
    if not isinstance(neumann, bool):
        raise SchemaError("neumann", "must be true or false")
    return ProblemDocument(N, A, B, M, grid, float(rel_tol), neumann)


def load_problem(doc: str | bytes | dict) -> ODEProblem:
    return load_document(doc).to_problem()
