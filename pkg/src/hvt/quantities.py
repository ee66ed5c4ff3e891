"""Physical quantities discretized on grids.

A :class:`Grid` is an increasing list of anchors ``F_i`` containing zero.
Cell ``i`` collects the simultaneous eigenstates of the quantity and ``h0``
whose eigenvalue lies in ``[(F_{i-1}+F_i)/2, (F_i+F_{i+1})/2)``; the outermost
cells extend by half of their neighbouring interval.  A one-anchor grid is a
single cell covering the whole real line.

Arithmetic between quantities is gated: the cell propositions of all
quantities involved must form a compatible set at the evaluation time.
"""

from __future__ import annotations

import itertools
import logging
import math
import operator as _op
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .compatibility import CompatReport, compat_check
from .probability import Ensemble
from .propositions import ElementaryProposition
from .qcore import SystemModel, as_matrix

__all__ = [
    "Grid",
    "Quantity",
    "CompositeQuantity",
    "InstantValue",
    "GateRefusal",
    "build_quantity",
    "instantaneous_value",
    "gated_arithmetic",
    "cell_expectation",
    "variance",
    "robertson_bound",
    "classical_ok",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Anchors ``F_i`` with ``F_0 = 0``; ``anchors[zero]`` is ``F_0``."""

    anchors: tuple[float, ...]

    def __post_init__(self) -> None:
        a = tuple(float(x) for x in self.anchors)
        if not a or not all(math.isfinite(x) for x in a):
            raise ValueError("grid anchors must be finite and non-empty")
        if any(b <= c for c, b in zip(a, a[1:])):
            raise ValueError("grid anchors must be strictly increasing")
        if 0.0 not in a:
            raise ValueError("grid anchors must include 0")
        object.__setattr__(self, "anchors", a)

    @classmethod
    def uniform(cls, delta: float, i_min: int, i_max: int) -> "Grid":
        if not delta > 0:
            raise ValueError("uniform grid spacing must be positive")
        if not i_min <= 0 <= i_max:
            raise ValueError("uniform grid index range must contain 0")
        return cls(tuple(delta * i for i in range(int(i_min), int(i_max) + 1)))

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any]) -> "Grid":
        """Build from ``{"anchors": [...]}`` or ``{"uniform": {"delta", "i_min", "i_max"}}``."""
        if "anchors" in spec:
            return cls(tuple(spec["anchors"]))
        if "uniform" in spec:
            u = spec["uniform"]
            return cls.uniform(float(u["delta"]), int(u["i_min"]), int(u["i_max"]))
        raise ValueError("grid spec needs 'anchors' or 'uniform'")

    def scaled(self, factor: float) -> "Grid":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return Grid(tuple(factor * a for a in self.anchors))

    @property
    def zero(self) -> int:
        return self.anchors.index(0.0)

    @property
    def index_range(self) -> tuple[int, int]:
        return (-self.zero, len(self.anchors) - 1 - self.zero)

    @property
    def intervals(self) -> tuple[float, ...]:
        a = self.anchors
        return tuple(b - c for c, b in zip(a, a[1:]))

    @property
    def min_interval(self) -> float:
        iv = self.intervals
        return min(iv) if iv else math.inf

    @property
    def max_interval(self) -> float:
        iv = self.intervals
        return max(iv) if iv else 0.0

    def anchor(self, i: int) -> float:
        lo, hi = self.index_range
        if not lo <= i <= hi:
            raise ValueError(f"grid index {i} outside [{lo}, {hi}]")
        return self.anchors[i + self.zero]

    def bounds(self, i: int) -> tuple[float, float]:
        """Half-open interval of cell ``i``."""
        a = self.anchors
        p = i + self.zero
        if len(a) == 1:
            return (-math.inf, math.inf)
        lower = (a[p - 1] + a[p]) / 2 if p > 0 else a[0] - (a[1] - a[0]) / 2
        upper = (a[p] + a[p + 1]) / 2 if p < len(a) - 1 else a[-1] + (a[-1] - a[-2]) / 2
        return (lower, upper)

    def cell_of(self, value: float) -> int | None:
        """Grid index whose cell contains ``value``, or ``None`` outside the grid."""
        lo, hi = self.index_range
        for i in range(lo, hi + 1):
            lower, upper = self.bounds(i)
            if lower <= value < upper:
                return i
        return None


@dataclass(frozen=True, eq=False)
class Quantity:
    """A Hermitian operator commuting with ``h0``, with its grid cells.

    ``cell_propositions`` maps grid index to the occupation proposition of
    that cell; only cells containing at least one eigenstate appear.
    """

    name: str
    operator: np.ndarray
    grid: Grid
    cell_propositions: Mapping[int, ElementaryProposition]
    model: SystemModel = field(repr=False)

    @property
    def cells(self) -> list[int]:
        return sorted(self.cell_propositions)

    def value(self, cell: int) -> float:
        return self.grid.anchor(cell)

    def at(self, t: float) -> dict[int, ElementaryProposition]:
        return {i: p.at(t) for i, p in self.cell_propositions.items()}


def build_quantity(model: SystemModel, operator: Any, grid: Grid, name: str = "F",
                   cell_labels: Mapping[int, str] | None = None) -> Quantity:
    """Discretize ``operator`` on ``grid``.

    The simultaneous eigenbasis is found by diagonalizing ``operator`` inside
    each eigenspace of ``h0``.  Raises ``ValueError`` when the operator does
    not commute with ``h0`` or has an eigenvalue outside the grid.
    """
    f = as_matrix(operator, name)
    if f.shape != (model.dim, model.dim):
        raise ValueError(f"{name}: shape {f.shape} does not match model dimension {model.dim}")
    if np.linalg.norm(f - f.conj().T) > model.tol.herm * max(1.0, float(np.linalg.norm(f))):
        raise ValueError(f"{name}: operator is not Hermitian")
    f = 0.5 * (f + f.conj().T)
    comm = f @ model.h0 - model.h0 @ f
    scale = max(1.0, float(np.linalg.norm(f)) * float(np.linalg.norm(model.h0)))
    cn = float(np.linalg.norm(comm))
    if cn > model.tol.comm * scale:
        raise ValueError(
            f"{name}: does not commute with h0 (commutator norm {cn:.3g}); "
            "no instantaneous value is definable"
        )
    vecs = model.basis.eigenvectors
    members: dict[int, list[np.ndarray]] = {}
    for block in model.basis.eigenspaces():
        v = vecs[:, block]
        w, u = np.linalg.eigh(v.conj().T @ f @ v)
        sv = v @ u
        for k in range(len(block)):
            cell = grid.cell_of(float(w[k]))
            if cell is None:
                raise ValueError(f"{name}: eigenvalue {w[k]:.6g} lies outside the grid range")
            members.setdefault(cell, []).append(sv[:, k])
    labels = dict(cell_labels or {})
    props = {}
    for cell in sorted(members):
        label = labels.get(cell, f"{name}_{cell}")
        props[cell] = ElementaryProposition.from_vectors(label, np.column_stack(members[cell]), 0.0)
    f.setflags(write=False)
    return Quantity(name, f, grid, props, model)


@dataclass(frozen=True)
class InstantValue:
    quantity: str
    trial: int
    value: float
    cell: int


def _trial_cell_projector(trial: Any, t: float) -> np.ndarray:
    try:
        return trial.projector_at(t)
    except KeyError:
        raise ValueError(f"trial {trial.j} has no outcome at t={t!r}") from None


def _resolve_cell(q: "Quantity", p_trial: np.ndarray, t: float) -> int:
    tol = max(1e-8, 100 * q.model.tol.proj)
    for cell, prop in q.cell_propositions.items():
        pq = prop.projector(q.model)
        if np.linalg.norm(pq @ p_trial - p_trial) < tol:
            return cell
    raise ValueError(f"trial outcome at t={t!r} does not resolve the cells of {q.name}")


def instantaneous_value(q: Quantity, trial: Any, t: float) -> InstantValue:
    """Anchor of the cell of ``q`` that contains the trial's occupied cell at ``t``."""
    cell = _resolve_cell(q, _trial_cell_projector(trial, t), t)
    return InstantValue(q.name, trial.j, q.value(cell), cell)


# -- gated arithmetic -------------------------------------------------------------

_OPS: dict[str, Callable[[float, float], float]] = {"add": _op.add, "mul": _op.mul}


class GateRefusal(ValueError):
    """Arithmetic refused because the cell propositions are incompatible.

    ``pair`` holds the labels of a non-commuting pair inside the failing
    sub-chain; ``residual`` is that sub-chain's worst residual.
    """

    def __init__(self, op: str, f_name: str, g_name: str, report: CompatReport,
                 pair: tuple[str, str] | None):
        self.op = op
        self.report = report
        self.pair = pair
        self.residual = report.worst_residual
        self.subset_labels = tuple(report.labels[i] for i in report.subset)
        shown = f"{{{pair[0]}, {pair[1]}}}" if pair else "{" + ", ".join(self.subset_labels) + "}"
        super().__init__(
            f"{op}({f_name}, {g_name}) refused: incompatible pair {shown} "
            f"(sub-chain of order {report.order}, residual {report.worst_residual:.3g})"
        )


@dataclass(frozen=True, eq=False)
class CompositeQuantity:
    """Result of gated arithmetic.

    ``bases`` are the grid quantities involved; ``table`` rows are
    ``(outcome, value, probability)`` where ``outcome`` maps each base
    quantity name to its cell index.
    """

    name: str
    bases: tuple[Quantity, ...]
    combine: Callable[[Sequence[float]], float] = field(repr=False)
    table: tuple[tuple[dict, float, float], ...] = ()
    report: CompatReport | None = field(default=None, repr=False)

    def value_of(self, trial: Any, t: float) -> float:
        """Per-trial value from the instantaneous values of the base quantities."""
        return self.combine([instantaneous_value(b, trial, t).value for b in self.bases])

    @property
    def reachable_values(self) -> list[float]:
        return sorted({v for _, v, p in self.table if p > 0})

    @property
    def values(self) -> list[float]:
        return sorted({v for _, v, _ in self.table})

    def partition(self) -> list[ElementaryProposition]:
        """Common refinement of the base cells, when all cell projectors commute."""
        model = self.bases[0].model
        cells = []
        for combo in itertools.product(*(sorted(b.cell_propositions.items()) for b in self.bases)):
            p = np.eye(model.dim, dtype=complex)
            for _, prop in combo:
                q = prop.projector(model)
                if np.linalg.norm(p @ q - q @ p) > 1e-9:
                    raise ValueError("base cells do not commute; no common refinement exists")
                p = p @ q
            if np.real(np.trace(p)) > 0.5:
                label = "&".join(prop.label for _, prop in combo)
                cells.append(ElementaryProposition(label, None, 0.0, 0.5 * (p + p.conj().T)))
        return cells


def _lift(q: Quantity | CompositeQuantity) -> CompositeQuantity:
    if isinstance(q, CompositeQuantity):
        return q
    return CompositeQuantity(q.name, (q,), lambda vals: vals[0])


def _cells_high_first(q: Quantity) -> list[ElementaryProposition]:
    return [q.cell_propositions[c] for c in sorted(q.cell_propositions, reverse=True)]


def gated_arithmetic(op: str, f: Quantity | CompositeQuantity, g: Quantity | CompositeQuantity,
                     ens: Ensemble, t: float = 0.0, name: str | None = None) -> CompositeQuantity:
    """Sum or product of two quantities, refused when their cells are incompatible.

    The gate runs :func:`compat_check` at time ``t`` over every cell
    proposition of every grid quantity involved (cells scanned from the
    highest anchor down, quantities in order of first appearance).  On
    failure a :class:`GateRefusal` is raised and logged.
    """
    if op not in _OPS:
        raise ValueError(f"unknown operation {op!r}; expected 'add' or 'mul'")
    fn = _OPS[op]
    cf, cg = _lift(f), _lift(g)
    bases: list[Quantity] = []
    for b in cf.bases + cg.bases:
        if not any(b is x for x in bases):
            bases.append(b)
    model = bases[0].model
    if any(b.model is not model for b in bases):
        raise ValueError("quantities belong to different models")
    pos = [next(i for i, x in enumerate(bases) if x is b) for b in cf.bases]
    pos_g = [next(i for i, x in enumerate(bases) if x is b) for b in cg.bases]

    def combine(vals: Sequence[float]) -> float:
        return fn(cf.combine([vals[i] for i in pos]), cg.combine([vals[i] for i in pos_g]))

    cells = [p for b in bases for p in _cells_high_first(b)]
    label = name or f"{op}({cf.name}, {cg.name})"
    report = None
    if len(cells) >= 2:
        report = compat_check(model, ens.rho0, cells, t, stop_at_first=True)
        if not report.compatible:
            pair = None
            if report.failing_pair is not None:
                pair = tuple(report.labels[i] for i in report.failing_pair)
            err = GateRefusal(op, cf.name, cg.name, report, pair)
            log.warning("%s", err)
            raise err
    rho_t = model.evolve(ens.rho0.matrix, t)
    rows = []
    for combo in itertools.product(*(sorted(b.cell_propositions.items()) for b in bases)):
        k = np.eye(model.dim, dtype=complex)
        for _, prop in combo:
            k = k @ prop.projector(model)
        p = float(np.real(np.trace(k @ rho_t @ k.conj().T)))
        p = min(1.0, max(0.0, p))
        outcome = {b.name: cell for b, (cell, _) in zip(bases, combo)}
        rows.append((outcome, combine([b.value(c) for b, (c, _) in zip(bases, combo)]), p))
    return CompositeQuantity(label, tuple(bases), combine, tuple(rows), report)


# -- moments -----------------------------------------------------------------------

def _op_matrix(q: Quantity | np.ndarray) -> np.ndarray:
    return np.asarray(q.operator if isinstance(q, Quantity) else q, dtype=complex)


def _rho_at(ens: Ensemble, model: SystemModel, t: float) -> np.ndarray:
    return model.evolve(ens.rho0.matrix, t)


def cell_expectation(ens: Ensemble, q: Quantity, t: float = 0.0) -> float:
    """``sum_i F_i Pr(cell i at t)``."""
    rho = _rho_at(ens, q.model, t)
    total = 0.0
    for cell, prop in q.cell_propositions.items():
        p = float(np.real(np.trace(prop.projector(q.model) @ rho)))
        total += q.value(cell) * p
    return total


def variance(ens: Ensemble, model: SystemModel, q: Quantity | np.ndarray, t: float = 0.0) -> float:
    """``Tr[(F - <F>)^2 rho(t)]``."""
    f = _op_matrix(q)
    rho = _rho_at(ens, model, t)
    mean = float(np.real(np.trace(f @ rho)))
    d = f - mean * np.eye(f.shape[0])
    return float(np.real(np.trace(d @ d @ rho)))


def robertson_bound(ens: Ensemble, model: SystemModel, f: Quantity | np.ndarray,
                    g: Quantity | np.ndarray, t: float = 0.0) -> float:
    """``|Tr([F, G] rho(t))| / 2``."""
    a, b = _op_matrix(f), _op_matrix(g)
    rho = _rho_at(ens, model, t)
    return 0.5 * abs(np.trace((a @ b - b @ a) @ rho))


def classical_ok(f: Quantity, g: Quantity, ens: Ensemble, t: float = 0.0,
                 factor: float = 10.0) -> bool:
    """Grid precisions are coarse enough: ``min dF * min dG >= factor * bound``."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    bound = robertson_bound(ens, f.model, f, g, t)
    return f.grid.min_interval * g.grid.min_interval >= factor * bound
