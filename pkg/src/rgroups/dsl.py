"""A tiny language for metric charts.

Example (Poincare half-plane)::

    dim 2; coords x y; domain x (-inf,inf) y (0,inf);
    g[0][0] = 1/(y*y); g[1][0] = 0; g[1][1] = 1/(y*y);

Statements end with ``;``, whitespace is insignificant and ``#`` starts a
comment running to the end of the line. Only the lower triangle
``g[i][j]`` with ``j <= i`` is written; the evaluator mirrors it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, MetricParseError
from .jets import Jet2

FUNCTIONS = ("sin", "cos", "sinh", "cosh", "exp", "ln", "sqrt")
CONSTANTS = {"pi": math.pi, "e": math.e}


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Num | Var | Const | Neg | BinOp | Pow | Call

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_NEG_PREC = 3
_POW_PREC = 4
_ATOM_PREC = 5


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    if isinstance(node, Pow):
        return _POW_PREC
    return _ATOM_PREC


def format_expr(node: Expr) -> str:
    """Render an expression with the minimal parentheses that re-parse to ``node``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({format_expr(node.arg)})"
    if isinstance(node, Neg):
        inner = format_expr(node.arg)
        return f"-({inner})" if _prec(node.arg) < _NEG_PREC else f"-{inner}"
    if isinstance(node, Pow):
        base = format_expr(node.base)
        if _prec(node.base) <= _POW_PREC:
            base = f"({base})"
        return f"{base}^{node.exponent}"
    p = _PREC[node.op]
    left = format_expr(node.left)
    right = format_expr(node.right)
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _identifiers(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Neg, Call)):
        return _identifiers(node.arg)
    if isinstance(node, Pow):
        return _identifiers(node.base)
    if isinstance(node, BinOp):
        return _identifiers(node.left) | _identifiers(node.right)
    return set()


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[;\[\]\(\),=+\-*/^])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num, ident, op, eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise MetricParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        if "\n" in chunk:
            line += chunk.count("\n")
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------- parser

@dataclass(frozen=True)
class MetricSpec:
    dim: int
    coords: tuple[str, ...]
    domain: tuple[tuple[float, float], ...]
    entries: dict[tuple[int, int], Expr] = field(hash=False)

    def entry(self, i: int, j: int) -> Expr:
        return self.entries[(i, j) if j <= i else (j, i)]

    def to_text(self) -> str:
        def bound(v: float) -> str:
            if math.isinf(v):
                return "-inf" if v < 0 else "inf"
            return repr(float(v))

        dom = " ".join(f"{c} ({bound(lo)},{bound(hi)})" for c, (lo, hi) in zip(self.coords, self.domain))
        lines = [f"dim {self.dim};", f"coords {' '.join(self.coords)};", f"domain {dom};"]
        for (i, j) in sorted(self.entries):
            lines.append(f"g[{i}][{j}] = {format_expr(self.entries[(i, j)])};")
        return "\n".join(lines) + "\n"


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, msg: str, tok: Token | None = None) -> MetricParseError:
        tok = tok or self.tok
        return MetricParseError(msg, tok.line, tok.col)

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def integer(self) -> int:
        tok = self.tok
        if tok.kind != "num" or not tok.text.isdigit():
            raise self.error("expected an integer literal")
        self.advance()
        return int(tok.text)

    # expr := term (('+'|'-') term)*
    def expr(self) -> Expr:
        node = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            sign = -1 if self.accept("-") else 1
            tok = self.tok
            if tok.kind != "num" or not tok.text.isdigit():
                raise self.error("exponent of '^' must be an integer literal")
            self.advance()
            base = Pow(base, sign * int(tok.text))
            if self.tok.text == "^":
                raise self.error("chained '^' is not allowed; use parentheses")
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            if self.tok.text == "(":
                raise self.error(f"unknown function {tok.text!r}", tok)
            if tok.text in CONSTANTS:
                return Const(tok.text)
            return Var(tok.text)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r} in expression")

    def bound(self) -> float:
        if self.tok.text == "-" and self.tokens[self.i + 1].text == "inf":
            self.i += 2
            return -math.inf
        if self.accept("inf"):
            return math.inf
        start = self.tok
        node = self.expr()
        names = _identifiers(node)
        if names:
            raise self.error(f"domain bound may not reference coordinates: {sorted(names)}", start)
        return float(evaluate_plain(node, {}))


def parse_metric(text: str) -> MetricSpec:
    """Parse metric source text into a validated :class:`MetricSpec`."""
    p = _Parser(text)
    dim: int | None = None
    coords: list[str] | None = None
    domain: dict[str, tuple[float, float]] = {}
    entries: dict[tuple[int, int], tuple[Expr, Token]] = {}
    dim_tok = coords_tok = None

    while p.tok.kind != "eof":
        tok = p.tok
        if p.accept("dim"):
            if dim is not None:
                raise p.error("duplicate 'dim' statement", tok)
            dim, dim_tok = p.integer(), tok
            if dim < 1:
                raise p.error("dimension must be at least 1", tok)
        elif p.accept("coords"):
            if coords is not None:
                raise p.error("duplicate 'coords' statement", tok)
            coords, coords_tok = [], tok
            while p.tok.kind == "ident":
                name = p.advance()
                if name.text in CONSTANTS or name.text in FUNCTIONS or name.text in ("g", "inf"):
                    raise p.error(f"reserved name {name.text!r} cannot be a coordinate", name)
                if name.text in coords:
                    raise p.error(f"duplicate coordinate {name.text!r}", name)
                coords.append(name.text)
            if not coords:
                raise p.error("'coords' needs at least one name")
        elif p.accept("domain"):
            if p.tok.kind != "ident":
                raise p.error("'domain' needs at least one coordinate interval")
            while p.tok.kind == "ident":
                name = p.advance()
                p.expect("(")
                lo = p.bound()
                p.expect(",")
                hi = p.bound()
                p.expect(")")
                if not lo < hi:
                    raise p.error(f"empty domain interval for {name.text!r}", name)
                domain[name.text] = (lo, hi)
        elif tok.text == "g" and p.tokens[p.i + 1].text == "[":
            p.advance()
            p.expect("[")
            i = p.integer()
            p.expect("]")
            p.expect("[")
            j = p.integer()
            p.expect("]")
            p.expect("=")
            if j > i:
                raise p.error(f"g[{i}][{j}] is in the upper triangle; write g[{j}][{i}]", tok)
            if (i, j) in entries:
                raise p.error(f"duplicate entry g[{i}][{j}]", tok)
            entries[(i, j)] = (p.expr(), tok)
        else:
            raise p.error(f"unknown statement {tok.text or 'end of input'!r}")
        p.expect(";")

    last = p.tok
    if dim is None:
        raise MetricParseError("missing 'dim' statement", last.line, last.col)
    if coords is None:
        raise MetricParseError("missing 'coords' statement", last.line, last.col)
    if len(coords) != dim:
        raise MetricParseError(
            f"dimension mismatch: dim {dim} but {len(coords)} coordinates", coords_tok.line, coords_tok.col)
    for name in domain:
        if name not in coords:
            raise MetricParseError(f"domain given for unknown coordinate {name!r}", dim_tok.line, dim_tok.col)
    for (i, j), (node, tok) in entries.items():
        if i >= dim:
            raise MetricParseError(f"entry g[{i}][{j}] out of range for dim {dim}", tok.line, tok.col)
        unknown = _identifiers(node) - set(coords)
        if unknown:
            raise MetricParseError(f"unknown identifier(s) {sorted(unknown)} in g[{i}][{j}]", tok.line, tok.col)
    missing = [f"g[{i}][{j}]" for i in range(dim) for j in range(i + 1) if (i, j) not in entries]
    if missing:
        raise MetricParseError(f"missing metric entries: {', '.join(missing)}", last.line, last.col)

    return MetricSpec(
        dim=dim,
        coords=tuple(coords),
        domain=tuple(domain.get(c, (-math.inf, math.inf)) for c in coords),
        entries={key: node for key, (node, _) in entries.items()},
    )


def load_metric(path: str | Path) -> MetricSpec:
    return parse_metric(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- evaluation

def evaluate_plain(node: Expr, env: dict[str, float]) -> float:
    """Plain float evaluation, used for domain bounds and reference checks."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate_plain(node.arg, env)
    if isinstance(node, Pow):
        return evaluate_plain(node.base, env) ** node.exponent
    if isinstance(node, Call):
        a = evaluate_plain(node.arg, env)
        fn = {"ln": math.log}.get(node.fn) or getattr(math, node.fn)
        return fn(a)
    a, b = evaluate_plain(node.left, env), evaluate_plain(node.right, env)
    return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[node.op]


def _eval_jet(node: Expr, variables: list[Jet2], index: dict[str, int], batch: int, n: int, order: int) -> Jet2:
    if isinstance(node, Num):
        return Jet2.constant(node.value, batch, n, order)
    if isinstance(node, Const):
        return Jet2.constant(CONSTANTS[node.name], batch, n, order)
    if isinstance(node, Var):
        return variables[index[node.name]]
    if isinstance(node, Neg):
        return -_eval_jet(node.arg, variables, index, batch, n, order)
    if isinstance(node, Pow):
        return _eval_jet(node.base, variables, index, batch, n, order).ipow(node.exponent)
    if isinstance(node, Call):
        return getattr(_eval_jet(node.arg, variables, index, batch, n, order), node.fn)()
    a = _eval_jet(node.left, variables, index, batch, n, order)
    b = _eval_jet(node.right, variables, index, batch, n, order)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    return a / b


def eval_jets(spec: MetricSpec, x: np.ndarray, order: int = 2):
    """Metric with exact derivatives at a batch of points ``x`` of shape ``(B, n)``.

    Returns ``(g, dg, d2g)`` with ``dg[..., i, j, k] = d_k g_ij`` and
    ``d2g[..., i, j, k, l] = d_k d_l g_ij``; ``d2g`` is None for ``order=1``.
    Domain violations inside the expressions raise :class:`DomainError`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    batch, n = x.shape
    index = {c: i for i, c in enumerate(spec.coords)}
    variables = [Jet2.variable(x, i, order) for i in range(n)]
    g = np.empty((batch, n, n))
    dg = np.empty((batch, n, n, n))
    d2g = np.empty((batch, n, n, n, n)) if order >= 2 else None
    try:
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            for (i, j), node in spec.entries.items():
                jet = _eval_jet(node, variables, index, batch, n, order)
                for a, b in {(i, j), (j, i)}:
                    g[:, a, b] = jet.value
                    dg[:, a, b, :] = jet.grad
                    if d2g is not None:
                        d2g[:, a, b] = jet.hess
    except (ZeroDivisionError, ValueError, FloatingPointError) as exc:
        raise DomainError(f"metric expression undefined at this point: {exc}") from exc
    return g, dg, d2g


def eval_jet2(spec: MetricSpec, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-point ``(g, dg, d2g)`` after checking ``x`` against the domain box."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a point with {spec.dim} coordinates, got shape {x.shape}")
    for c, v, (lo, hi) in zip(spec.coords, x, spec.domain):
        if not lo < v < hi:
            raise DomainError(f"coordinate {c}={v} outside domain ({lo}, {hi})")
    g, dg, d2g = eval_jets(spec, x[None, :])
    return g[0], dg[0], d2g[0]
