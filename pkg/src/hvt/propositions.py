"""Occupation propositions and their characteristic operators.

An elementary proposition says "the occupied stationary state at time t lies
in subspace C".  C is either a set of indices into the model's frozen
stationary basis or, for degenerate spectra, an explicit projector onto a
subspace that is invariant under ``h0``.

Compound propositions are trees of :class:`Not`, :class:`And` and
:class:`Or` nodes over elementary leaves.  Their characteristic operator is
built with these rules:

* NOT:  x = 1 - x(A)
* OR:   x = x(A) + x(B) - x(A AND B)
* AND:  x = K^dagger K with K the product of partial characteristic
  operators, latest time leftmost.  Factors sharing a time are averaged over
  all of their orderings.

The textual grammar (used by the command line) is::

    expr  := or
    or    := and ("OR" and)*
    and   := unary ("AND" unary)*
    unary := "NOT" unary | "(" expr ")" | atom
    atom  := LABEL "@" NUMBER
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

from .qcore import DEFAULT_TOL, SystemModel, Tolerances

__all__ = [
    "ElementaryProposition",
    "Not",
    "And",
    "Or",
    "PropositionExpr",
    "PartialCharacteristic",
    "Characteristic",
    "projector",
    "heisenberg",
    "characteristic",
    "exclusivity_check",
    "atoms_of",
    "pretty",
    "parse_expr",
    "ExprSyntaxError",
    "IncompatibleConjunction",
    "MAX_COINCIDENT_FACTORS",
]

# coincident-time factors averaged over all orderings; k! grows fast
MAX_COINCIDENT_FACTORS = 6


@dataclass(frozen=True, eq=False)
class PartialCharacteristic:
    """Partial characteristic operator ``z`` tagged with its Heisenberg time."""

    matrix: np.ndarray
    time: float = 0.0

    def is_projector(self, tol: float = DEFAULT_TOL.proj) -> bool:
        return _is_projector(self.matrix, tol)


@dataclass(frozen=True, eq=False)
class Characteristic:
    """Characteristic operator ``x``; ``Tr[x rho]`` is a probability."""

    matrix: np.ndarray

    def expectation(self, rho: Any) -> float:
        m = rho.matrix if hasattr(rho, "matrix") else np.asarray(rho)
        return float(np.real(np.trace(self.matrix @ m)))


class IncompatibleConjunction(ValueError):
    """A coincident-time conjunction failed the compatibility check in strict mode."""


def _is_projector(p: np.ndarray, tol: float) -> bool:
    scale = max(1.0, float(np.linalg.norm(p)))
    return (np.linalg.norm(p @ p - p) <= tol * scale
            and np.linalg.norm(p - p.conj().T) <= tol * scale)


@dataclass(frozen=True, eq=False)
class ElementaryProposition:
    """Occupation of a set of stationary states at a single time.

    Parameters
    ----------
    label : str
        Name used in expressions and reports.
    indices : iterable of int, optional
        Indices into the model's frozen stationary basis.
    time : float
        Time tag.
    operator : ndarray, optional
        Explicit projector, for subspaces of degenerate eigenspaces that are
        not spanned by basis columns.  Exactly one of ``indices`` and
        ``operator`` must be given.
    """

    label: str
    indices: tuple[int, ...] | None = None
    time: float = 0.0
    operator: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if (self.indices is None) == (self.operator is None):
            raise ValueError(f"{self.label}: give exactly one of indices or operator")
        t = float(self.time)
        if not math.isfinite(t):
            raise ValueError(f"{self.label}: time must be finite")
        object.__setattr__(self, "time", t)
        if self.indices is not None:
            raw = list(self.indices)
            if not raw:
                raise ValueError(f"{self.label}: index set must be non-empty")
            if any(int(k) != k or k < 0 for k in raw):
                raise ValueError(f"{self.label}: indices must be non-negative integers")
            if len(set(raw)) != len(raw):
                raise ValueError(f"{self.label}: duplicate indices")
            object.__setattr__(self, "indices", tuple(sorted(int(k) for k in raw)))
        else:
            p = np.array(self.operator, dtype=complex)
            if p.ndim != 2 or p.shape[0] != p.shape[1]:
                raise ValueError(f"{self.label}: operator must be a square matrix")
            if not _is_projector(p, DEFAULT_TOL.proj):
                raise ValueError(f"{self.label}: operator is not an orthogonal projector")
            if np.real(np.trace(p)) < 0.5:
                raise ValueError(f"{self.label}: projector must be non-zero")
            p.setflags(write=False)
            object.__setattr__(self, "operator", p)

    @classmethod
    def from_vectors(cls, label: str, vectors: Any, time: float = 0.0) -> "ElementaryProposition":
        """Proposition for the span of the given vectors (columns, or a single vector)."""
        v = np.asarray(vectors, dtype=complex)
        if v.ndim == 1:
            v = v[:, None]
        q, r = np.linalg.qr(v)
        keep = np.abs(np.diag(r)) > 1e-12
        if not np.any(keep):
            raise ValueError(f"{label}: vectors span the zero subspace")
        q = q[:, keep]
        return cls(label, None, time, q @ q.conj().T)

    def at(self, time: float) -> "ElementaryProposition":
        """Same subspace, different time tag."""
        return replace(self, time=time)

    def renamed(self, label: str) -> "ElementaryProposition":
        return replace(self, label=label)

    def projector(self, model: SystemModel) -> np.ndarray:
        """Schrodinger-picture projector on ``model``'s Hilbert space."""
        if self.indices is not None:
            return projector(model, self.indices).matrix
        if self.operator.shape[0] != model.dim:
            raise ValueError(
                f"{self.label}: operator dimension {self.operator.shape[0]} "
                f"does not match model dimension {model.dim}"
            )
        p = self.operator
        comm = p @ model.h0 - model.h0 @ p
        if np.linalg.norm(comm) > model.tol.comm * max(1.0, float(np.linalg.norm(model.h0))):
            raise ValueError(f"{self.label}: subspace is not spanned by stationary states of h0")
        return np.asarray(p)

    def partial(self, model: SystemModel) -> PartialCharacteristic:
        """Heisenberg-picture partial characteristic operator at this proposition's time."""
        return heisenberg(PartialCharacteristic(self.projector(model), 0.0), model, self.time)

    def rank(self, model: SystemModel) -> int:
        if self.indices is not None:
            return len(self.indices)
        return int(round(np.real(np.trace(self.operator))))

    def _key(self) -> tuple:
        op = None if self.operator is None else self.operator.tobytes()
        return (self.label, self.indices, self.time, op)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ElementaryProposition):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash((self.label, self.indices, self.time))


@dataclass(frozen=True)
class Not:
    child: "PropositionExpr"


@dataclass(frozen=True)
class And:
    left: "PropositionExpr"
    right: "PropositionExpr"


@dataclass(frozen=True)
class Or:
    left: "PropositionExpr"
    right: "PropositionExpr"


PropositionExpr = Union[ElementaryProposition, Not, And, Or]


def atoms_of(expr: PropositionExpr) -> list[ElementaryProposition]:
    """Leaves of ``expr`` from left to right."""
    if isinstance(expr, ElementaryProposition):
        return [expr]
    if isinstance(expr, Not):
        return atoms_of(expr.child)
    if isinstance(expr, (And, Or)):
        return atoms_of(expr.left) + atoms_of(expr.right)
    raise TypeError(f"not a proposition expression: {expr!r}")


def projector(model: SystemModel, indices: Iterable[int]) -> PartialCharacteristic:
    """Sum of ``v_k v_k^dagger`` over the given stationary-basis indices."""
    idx = sorted(set(int(k) for k in indices))
    if not idx:
        raise ValueError("index set must be non-empty")
    if idx[0] < 0 or idx[-1] >= model.dim:
        raise ValueError(f"index out of range for model dimension {model.dim}: {idx}")
    v = model.basis.eigenvectors[:, idx]
    return PartialCharacteristic(v @ v.conj().T, 0.0)


def heisenberg(z: PartialCharacteristic, model: SystemModel, t: float) -> PartialCharacteristic:
    """Conjugate ``z`` by the evolution operator: ``U(t)^dagger z U(t)``."""
    m = np.asarray(z.matrix)
    if m.shape != (model.dim, model.dim):
        raise ValueError(f"operator shape {m.shape} does not match model dimension {model.dim}")
    return PartialCharacteristic(model.heisenberg(m, t), float(t))


# -- characteristic operators -------------------------------------------------

@dataclass
class _Eval:
    x: np.ndarray
    # Heisenberg-picture (matrix, time) factors when the node has a partial
    # characteristic operator; None for multi-time negations/disjunctions.
    factors: list[tuple[np.ndarray, float]] | None


def _ordered_products(factors: Sequence[tuple[np.ndarray, float]]) -> Iterator[np.ndarray]:
    """All chain products: latest time leftmost, every ordering of ties."""
    by_time: dict[float, list[np.ndarray]] = {}
    for m, t in factors:
        by_time.setdefault(t, []).append(m)
    groups = [by_time[t] for t in sorted(by_time, reverse=True)]
    for g in groups:
        if len(g) > MAX_COINCIDENT_FACTORS:
            raise ValueError(
                f"{len(g)} coincident-time factors exceed the limit of {MAX_COINCIDENT_FACTORS}"
            )
    for choice in itertools.product(*(itertools.permutations(g) for g in groups)):
        k = None
        for group in choice:
            for m in group:
                k = m if k is None else k @ m
        yield k


def _symmetrized_x(factors: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    total = None
    n = 0
    for k in _ordered_products(factors):
        kk = k.conj().T @ k
        total = kk if total is None else total + kk
        n += 1
    return total / n


def _single_time(factors: Sequence[tuple[np.ndarray, float]] | None) -> float | None:
    if not factors:
        return None
    times = {t for _, t in factors}
    return times.pop() if len(times) == 1 else None


def _check_coincident(factors, model, rho0, tol) -> None:
    from .compatibility import compat_residuals  # local: compatibility imports this module

    by_time: dict[float, list[np.ndarray]] = {}
    for m, t in factors:
        by_time.setdefault(t, []).append(m)
    for t, mats in by_time.items():
        if len(mats) < 2:
            continue
        worst, _ = compat_residuals(mats, rho0, tol)
        if worst >= tol.compat:
            raise IncompatibleConjunction(
                f"incompatible coincident-time conjunction at t={t!r} "
                f"(worst residual {worst:.3g})"
            )


def _evaluate(expr: PropositionExpr, model: SystemModel, ctx: dict) -> _Eval:
    tol = model.tol
    ident = np.eye(model.dim, dtype=complex)
    if isinstance(expr, ElementaryProposition):
        z = expr.partial(model).matrix
        return _Eval(z, [(z, expr.time)])
    if isinstance(expr, Not):
        c = _evaluate(expr.child, model, ctx)
        x = ident - c.x
        t = _single_time(c.factors)
        return _Eval(x, [(x, t)] if t is not None and _is_projector(x, tol.proj) else None)
    if isinstance(expr, And):
        a = _evaluate(expr.left, model, ctx)
        b = _evaluate(expr.right, model, ctx)
        if a.factors is None or b.factors is None:
            raise ValueError(
                "conjunction with a negation or disjunction spanning several times is not defined"
            )
        factors = a.factors + b.factors
        if ctx["strict"]:
            _check_coincident(factors, model, ctx["rho0"], tol)
        x = _symmetrized_x(factors)
        return _Eval(x, factors)
    if isinstance(expr, Or):
        a = _evaluate(expr.left, model, ctx)
        b = _evaluate(expr.right, model, ctx)
        both = _evaluate(And(expr.left, expr.right), model, ctx)
        x = a.x + b.x - both.x
        t = _single_time(both.factors)
        return _Eval(x, [(x, t)] if t is not None and _is_projector(x, tol.proj) else None)
    raise TypeError(f"not a proposition expression: {expr!r}")


def characteristic(expr: PropositionExpr, model: SystemModel, rho0: Any = None,
                   strict: bool = False) -> Characteristic:
    """Characteristic operator of a compound proposition.

    In strict mode every group of coincident-time factors inside a
    conjunction must pass the compatibility check against ``rho0`` (the
    ensemble's density operator at time zero); otherwise ``ValueError``.
    """
    if strict and rho0 is None:
        raise ValueError("strict mode needs the ensemble density operator rho0")
    rho_m = None if rho0 is None else np.asarray(getattr(rho0, "matrix", rho0))
    ev = _evaluate(expr, model, {"strict": strict, "rho0": rho_m})
    x = 0.5 * (ev.x + ev.x.conj().T)
    return Characteristic(x)


def exclusivity_check(a: ElementaryProposition, b: ElementaryProposition,
                      model: SystemModel) -> bool:
    """True when the two equal-time propositions cannot both hold."""
    if a.time != b.time:
        raise ValueError(f"exclusivity needs equal times, got {a.time!r} and {b.time!r}")
    if a.indices is not None and b.indices is not None:
        for k in a.indices + b.indices:
            if k >= model.dim:
                raise ValueError(f"index {k} out of range for model dimension {model.dim}")
        return not set(a.indices) & set(b.indices)
    pa, pb = a.projector(model), b.projector(model)
    return float(np.linalg.norm(pa @ pb)) < model.tol.proj


# -- text form ----------------------------------------------------------------

_PREC = {Or: 1, And: 2, Not: 3}


def _prec(e: PropositionExpr) -> int:
    return _PREC.get(type(e), 4)


def _fmt_time(t: float) -> str:
    return repr(float(t))


def pretty(expr: PropositionExpr) -> str:
    """Render ``expr`` with the minimal parentheses that preserve its tree."""
    if isinstance(expr, ElementaryProposition):
        return f"{expr.label}@{_fmt_time(expr.time)}"
    if isinstance(expr, Not):
        inner = pretty(expr.child)
        return f"NOT ({inner})" if _prec(expr.child) < 3 else f"NOT {inner}"
    op = "AND" if isinstance(expr, And) else "OR"
    p = _prec(expr)
    left = pretty(expr.left)
    right = pretty(expr.right)
    if _prec(expr.left) < p:
        left = f"({left})"
    # left-associative: an equal-precedence right child needs parentheses
    if _prec(expr.right) <= p:
        right = f"({right})"
    return f"{left} {op} {right}"


class ExprSyntaxError(ValueError):
    """Lexing or parsing failure; ``pos`` is the character offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<lp>\()|(?P<rp>\))|(?P<at>@)"
    r"|(?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<word>[A-Za-z_][A-Za-z0-9_]*)"
    r")"
)
_KEYWORDS = {"AND", "OR", "NOT"}


def _lex(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        val = m.group(kind)
        start = m.start(kind)
        if kind == "word" and val in _KEYWORDS:
            kind = val
        out.append((kind, val, start))
        pos = m.end()
    out.append(("end", "", n))
    return out


class _Parser:
    def __init__(self, text: str, table: Mapping[str, Any]):
        self.toks = _lex(text)
        self.i = 0
        self.table = table

    def peek(self) -> tuple[str, str, int]:
        return self.toks[self.i]

    def take(self, kind: str) -> tuple[str, str, int]:
        tok = self.toks[self.i]
        if tok[0] != kind:
            want = {"rp": "')'", "at": "'@'", "num": "time value", "end": "end of input"}.get(kind, kind)
            got = tok[1] or "end of input"
            raise ExprSyntaxError(f"expected {want}, found {got!r}", tok[2])
        self.i += 1
        return tok

    def expr(self) -> PropositionExpr:
        node = self.and_()
        while self.peek()[0] == "OR":
            self.i += 1
            node = Or(node, self.and_())
        return node

    def and_(self) -> PropositionExpr:
        node = self.unary()
        while self.peek()[0] == "AND":
            self.i += 1
            node = And(node, self.unary())
        return node

    def unary(self) -> PropositionExpr:
        kind, val, pos = self.peek()
        if kind == "NOT":
            self.i += 1
            return Not(self.unary())
        if kind == "lp":
            self.i += 1
            node = self.expr()
            self.take("rp")
            return node
        if kind == "word":
            self.i += 1
            self.take("at")
            num = self.peek()
            if num[0] != "num":
                raise ExprSyntaxError(f"malformed time tag for {val!r}", num[2])
            self.i += 1
            t = float(num[1])
            if not math.isfinite(t):
                raise ExprSyntaxError(f"malformed time tag for {val!r}", num[2])
            if val not in self.table:
                raise ExprSyntaxError(f"unknown label {val!r}", pos)
            return _resolve(val, self.table[val], t)
        raise ExprSyntaxError(f"unexpected token {val or 'end of input'!r}", pos)


def _resolve(label: str, entry: Any, t: float) -> ElementaryProposition:
    if isinstance(entry, ElementaryProposition):
        return replace(entry, label=label, time=t)
    if isinstance(entry, Mapping):
        return ElementaryProposition(label, tuple(entry["indices"]), t)
    return ElementaryProposition(label, tuple(entry), t)


def parse_expr(text: str, table: Mapping[str, Any]) -> PropositionExpr:
    """Parse ``text`` into a proposition tree.

    ``table`` maps labels to :class:`ElementaryProposition` objects, to
    ``{"indices": [...]}`` mappings, or to plain index lists.  The time tag
    written after ``@`` replaces any time stored in the table.
    """
    p = _Parser(text, table)
    node = p.expr()
    p.take("end")
    return node
