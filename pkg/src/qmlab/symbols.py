"""Smooth phase-space symbols with exact jets to third order.

A symbol is a scalar function p(x, xi) on R^n x R^n (or r(x) on R^n) given by
a small expression tree over x1..xn, xi1..xin.  Derivatives are computed by
nested first-order forward-mode differentiation (dual numbers), so jets are
exact to machine precision; central finite differences are kept in the test
suite as an independent oracle.

Coordinate convention, fixed globally: x1 = t, xn = r, the remaining x are
y'; dually tau = xi1, nu = xin.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Dual",
    "DomainError",
    "ParseError",
    "PhasePoint",
    "Jet",
    "SymbolFn",
    "PoissonBracket",
    "parse_symbol",
    "parse_base_function",
    "parse_named_function",
    "eval_jet",
    "jet_of_callable",
    "poisson_bracket",
    "builtin_symbol",
    "BUILTIN_NAMES",
]


class DomainError(ValueError):
    """Evaluation left the symbol's domain (log/sqrt of a negative, division by zero)."""


class ParseError(ValueError):
    """Malformed expression; carries the 0-based offset of the offending token."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


# ---------------------------------------------------------------------------
# dual numbers


class Dual:
    """First-order dual a + b*eps; components may themselves be Dual (nesting)."""

    __slots__ = ("re", "du")

    def __init__(self, re, du):
        self.re = re
        self.du = du

    def __repr__(self):
        return f"Dual({self.re!r}, {self.du!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.du + other.du)
        return Dual(self.re + other, self.du)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.du - other.du)
        return Dual(self.re - other, self.du)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.du)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.re * other.du + self.du * other.re)
        return Dual(self.re * other, self.du * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.re / other.re
            return Dual(q, (self.du - q * other.du) / other.re)
        return Dual(self.re / other, self.du / other)

    def __rtruediv__(self, other):
        q = other / self.re
        return Dual(q, -q * self.du / self.re)


def _ipow(x, k: int):
    """x**k for integer k, valid for negative bases; dual-aware."""
    if k == 0:
        return 1.0
    if k < 0:
        return 1.0 / _ipow(x, -k)
    out = x
    for _ in range(k - 1):
        out = out * x
    return out


def _exp(x):
    if isinstance(x, Dual):
        e = _exp(x.re)
        return Dual(e, e * x.du)
    return math.exp(x)


def _log(x):
    if isinstance(x, Dual):
        return Dual(_log(x.re), x.du / x.re)
    if x <= 0.0:
        raise DomainError(f"log of non-positive value {x}")
    return math.log(x)


def _sqrt(x):
    if isinstance(x, Dual):
        s = _sqrt(x.re)
        return Dual(s, x.du / (2.0 * s))
    if x < 0.0:
        raise DomainError(f"sqrt of negative value {x}")
    return math.sqrt(x)


def _sin(x):
    if isinstance(x, Dual):
        return Dual(_sin(x.re), _cos(x.re) * x.du)
    return math.sin(x)


def _cos(x):
    if isinstance(x, Dual):
        return Dual(_cos(x.re), -_sin(x.re) * x.du)
    return math.cos(x)


_FUNCTIONS = {"exp": _exp, "log": _log, "sqrt": _sqrt, "sin": _sin, "cos": _cos}

# numpy equivalents for whole-grid evaluation (build_osc_operator etc.)
_NP_FUNCTIONS = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos}


# ---------------------------------------------------------------------------
# expression trees


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


def _eval_node(node, env, fns):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.index]
    if isinstance(node, Neg):
        return -_eval_node(node.arg, env, fns)
    if isinstance(node, Call):
        return fns[node.fn](_eval_node(node.arg, env, fns))
    op = node.op
    left = _eval_node(node.left, env, fns)
    if op == "^":
        # integer literal exponents keep negative bases legal
        if isinstance(node.right, Num) and float(node.right.value).is_integer():
            return _ipow(left, int(node.right.value))
        right = _eval_node(node.right, env, fns)
        return fns["exp"](fns["log"](left) * right)
    right = _eval_node(node.right, env, fns)
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    return left / right


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _to_text(node, parent_prec=0):
    if isinstance(node, Num):
        return repr(node.value) if node.value != int(node.value) else str(int(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = _to_text(node.arg, 4)
        text = f"-{inner}"
        return f"({text})" if parent_prec > 1 else text
    if isinstance(node, Call):
        return f"{node.fn}({_to_text(node.arg, 0)})"
    prec = _PRECEDENCE[node.op]
    # ^ is right-associative, the rest left-associative: the re-associating
    # child needs parens at equal precedence
    if node.op == "^":
        left = _to_text(node.left, prec + 1)
        right = _to_text(node.right, prec)
    else:
        left = _to_text(node.left, prec)
        right = _to_text(node.right, prec + 1)
    text = f"{left} {node.op} {right}"
    return f"({text})" if prec < parent_prec else text


# ---------------------------------------------------------------------------
# tokenizer / recursive-descent parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_VAR_RE = re.compile(r"^(xi|x)([1-9][0-9]*)$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[bad]!r}", bad)
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num")), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, var_index: dict):
        self.tokens = _tokenize(text)
        self.k = 0
        self.var_index = var_index
        self.used: set[str] = set()

    def peek(self):
        return self.tokens[self.k]

    def advance(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect_op(self, op: str):
        kind, value, pos = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", pos)
        self.advance()

    def parse(self):
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ParseError(f"trailing input {value!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                node = BinOp(value, node, rhs)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.unary()
                node = BinOp(value, node, rhs)
            else:
                return node

    def unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "op" and value == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            return BinOp("^", base, self.unary())  # right-associative, sign allowed
        return base

    def atom(self):
        kind, value, pos = self.advance()
        if kind == "num":
            return Num(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            if value in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(value, arg)
            if value in self.var_index:
                self.used.add(value)
                return Var(self.var_index[value], value)
            if _VAR_RE.match(value):
                raise ParseError(f"variable {value!r} exceeds dimension", pos)
            raise ParseError(f"unknown identifier {value!r}", pos)
        raise ParseError(f"expected a value, got {value!r}", pos)


def _phase_var_names(n: int):
    return tuple(f"x{i}" for i in range(1, n + 1)) + tuple(f"xi{i}" for i in range(1, n + 1))


# ---------------------------------------------------------------------------
# public types


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, xi) of phase space; x = (t, y', r), xi = (tau, eta', nu)."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if self.x.shape != self.xi.shape or self.x.ndim != 1:
            raise ValueError("x and xi must be 1-d vectors of equal length")
        if not (np.isfinite(self.x).all() and np.isfinite(self.xi).all()):
            raise ValueError("phase point has non-finite entries")

    @property
    def n(self) -> int:
        return self.x.size

    def env(self) -> list:
        return [float(v) for v in self.x] + [float(v) for v in self.xi]


@dataclass(frozen=True)
class Jet:
    """Value and derivatives at a point; tensors are exactly symmetric."""

    value: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = None

    @property
    def order(self) -> int:
        for order, part in ((3, self.third), (2, self.hessian), (1, self.gradient)):
            if part is not None:
                return order
        return 0


@dataclass(frozen=True)
class SymbolFn:
    """A differentiable scalar function over phase space (or base space).

    ``arity`` is "phase" for p(x, xi) and "base" for functions of x alone,
    e.g. a hypersurface defining function r(x).
    """

    n: int
    arity: str
    var_names: tuple
    root: object = field(repr=False)
    text: str = ""

    @property
    def nvars(self) -> int:
        return len(self.var_names)

    def eval_env(self, env: Sequence):
        if len(env) != self.nvars:
            raise ValueError(f"environment of length {len(env)}, expected {self.nvars}")
        try:
            return _eval_node(self.root, env, _FUNCTIONS)
        except ZeroDivisionError as exc:
            raise DomainError(f"division by zero while evaluating {self.text!r}") from exc
        except OverflowError as exc:
            raise DomainError(f"overflow while evaluating {self.text!r}") from exc

    def eval_phase(self, env: Sequence):
        """Evaluate on a full 2n phase environment (base functions use x only)."""
        if self.arity == "base":
            return self.eval_env(env[: self.n])
        return self.eval_env(env)

    def eval_array(self, env: Sequence[np.ndarray]) -> np.ndarray:
        """Vectorized evaluation over broadcastable numpy arrays."""
        if len(env) != self.nvars:
            raise ValueError(f"environment of length {len(env)}, expected {self.nvars}")
        with np.errstate(divide="raise", invalid="raise"):
            try:
                out = _eval_node(self.root, env, _NP_FUNCTIONS)
            except FloatingPointError as exc:
                raise DomainError(f"domain error while evaluating {self.text!r}") from exc
        return np.broadcast_arrays(out, *env)[0] if np.ndim(out) == 0 else out

    def __call__(self, pt: PhasePoint) -> float:
        if pt.n != self.n:
            raise ValueError(f"point of dimension {pt.n}, symbol expects {self.n}")
        return float(self.eval_phase(pt.env()))

    def to_text(self) -> str:
        return _to_text(self.root)


def parse_symbol(text: str, n: int) -> SymbolFn:
    """Parse an expression over x1..xn, xi1..xin into a SymbolFn.

    The arity tag is "base" when no xi variable occurs, "phase" otherwise.
    """
    if n < 2:
        raise ValueError("dimension must be >= 2")
    names = _phase_var_names(n)
    parser = _Parser(text, {name: i for i, name in enumerate(names)})
    root = parser.parse()
    if any(name.startswith("xi") for name in parser.used):
        return SymbolFn(n, "phase", names, root, text)
    # re-index onto x-only environment
    return SymbolFn(n, "base", names[:n], root, text)


def parse_base_function(text: str, n: int) -> SymbolFn:
    """Parse a function of x alone; xi variables are rejected."""
    fn = parse_symbol(text, n)
    if fn.arity != "base":
        raise ParseError("base-space function must not mention xi variables", 0)
    return fn


def parse_named_function(text: str, var_names: Sequence[str], n: int) -> SymbolFn:
    """Parse over an explicit variable list (used for reduced symbols a(x, xibar))."""
    parser = _Parser(text, {name: i for i, name in enumerate(var_names)})
    root = parser.parse()
    return SymbolFn(n, "named", tuple(var_names), root, text)


# ---------------------------------------------------------------------------
# jets by nested seeding


def _seeded_derivative(eval_env, env: Sequence, idxs) -> float:
    seeded = list(env)
    for idx in idxs:
        seeded = [Dual(v, 1.0 if j == idx else 0.0) for j, v in enumerate(seeded)]
    out = eval_env(seeded)
    for _ in range(len(idxs)):
        out = out.du if isinstance(out, Dual) else 0.0
    return float(out.re) if isinstance(out, Dual) else float(out)


def jet_of_callable(eval_env, env: Sequence, order: int, m: Optional[int] = None) -> Jet:
    """Jet of an arbitrary env-function by repeated first-order seeding."""
    if not 0 <= order <= 3:
        raise ValueError("order must be between 0 and 3")
    m = len(env) if m is None else m
    value = eval_env(list(env))
    value = float(value.re) if isinstance(value, Dual) else float(value)
    gradient = hessian = third = None
    if order >= 1:
        gradient = np.array([_seeded_derivative(eval_env, env, (i,)) for i in range(m)])
    if order >= 2:
        hessian = np.zeros((m, m))
        for i in range(m):
            for j in range(i, m):
                hessian[i, j] = hessian[j, i] = _seeded_derivative(eval_env, env, (i, j))
    if order >= 3:
        third = np.zeros((m, m, m))
        for i in range(m):
            for j in range(i, m):
                for k in range(j, m):
                    v = _seeded_derivative(eval_env, env, (i, j, k))
                    for perm in ((i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)):
                        third[perm] = v
    return Jet(value, gradient, hessian, third)


def eval_jet(f, pt: PhasePoint, order: int = 1) -> Jet:
    """Jet of a phase-space function at pt, over all 2n variables.

    Works for SymbolFn and for composite evaluables such as Poisson brackets;
    base-space functions get zero xi-derivatives.
    """
    if pt.n != f.n:
        raise ValueError(f"point of dimension {pt.n}, function expects {f.n}")
    return jet_of_callable(f.eval_phase, pt.env(), order)


# ---------------------------------------------------------------------------
# Poisson brackets


def _partial(f, env: Sequence, idx: int):
    """d f / d var_idx at env, one extra dual level deep (composable)."""
    seeded = [Dual(v, 1.0 if j == idx else 0.0) for j, v in enumerate(env)]
    out = f.eval_phase(seeded)
    return out.du if isinstance(out, Dual) else 0.0


@dataclass(frozen=True)
class PoissonBracket:
    """{f, g} = d_xi f . d_x g - d_x f . d_xi g, itself phase-evaluable."""

    f: object
    g: object

    def __post_init__(self):
        if self.f.n != self.g.n:
            raise ValueError(f"dimension mismatch: {self.f.n} vs {self.g.n}")

    @property
    def n(self) -> int:
        return self.f.n

    def eval_phase(self, env: Sequence):
        n = self.n
        total = 0.0
        for i in range(n):
            total = total + _partial(self.f, env, n + i) * _partial(self.g, env, i)
            total = total - _partial(self.f, env, i) * _partial(self.g, env, n + i)
        return total

    def __call__(self, pt: PhasePoint) -> float:
        if pt.n != self.n:
            raise ValueError(f"point of dimension {pt.n}, bracket expects {self.n}")
        out = self.eval_phase(pt.env())
        return float(out.re) if isinstance(out, Dual) else float(out)


def poisson_bracket(f, g) -> PoissonBracket:
    """Bracket of two phase-evaluable functions; composable for iterated brackets."""
    return PoissonBracket(f, g)


# ---------------------------------------------------------------------------
# builtins

BUILTIN_NAMES = ("model-fold", "flat-elliptic")


def builtin_symbol(name: str, n: int) -> SymbolFn:
    """Builtin symbols: the folding local model and the flat elliptic symbol.

    model-fold:    xi1 - xn - sum_{i>=2} xi_i^2
    flat-elliptic: |xi|^2 - 1
    """
    if n < 2:
        raise ValueError("dimension must be >= 2")
    if name == "model-fold":
        text = f"xi1 - x{n} - " + " - ".join(f"xi{i}^2" for i in range(2, n + 1))
    elif name == "flat-elliptic":
        text = " + ".join(f"xi{i}^2" for i in range(1, n + 1)) + " - 1"
    else:
        raise ValueError(f"unknown builtin {name!r}; known: {BUILTIN_NAMES}")
    return parse_symbol(text, n)
