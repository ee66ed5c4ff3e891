"""Chain operators and the compatibility selection rule.

For a list of partial characteristic operators ``z_1 ... z_n`` evaluated at a
common time, the set is compatible against a density operator ``rho`` when
every sub-chain ``K = z_i1 z_i2 ... z_ik`` (subset in listed order) gives the
same trace ``Tr[K rho K^dagger]`` for every reordering of its factors.

The residual of a reordering ``P`` is ``|Tr[K rho K^dagger] - Tr[(PK) rho (PK)^dagger]|``
and the verdict compares the worst residual with ``tol.compat``.  The same
quantity divided by ``max(Tr[K rho K^dagger], eps)`` is also reported as
``worst_relative_residual``; it is informational because it diverges for
chains with vanishing weight.

Subsets of up to ``max_exhaustive`` factors are enumerated over all
permutations.  Larger subsets use ``n_samples`` random permutations from a
fixed seed and the report is flagged ``sampled``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .propositions import ElementaryProposition, PartialCharacteristic, projector
from .qcore import DEFAULT_TOL, DensityOperator, SystemModel, Tolerances

__all__ = [
    "ChainOperator",
    "CompatReport",
    "ConsistencyReport",
    "chain",
    "compat_check",
    "compat_residuals",
    "classify",
    "consistency_check",
    "history_probabilities",
    "resolve_partition",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ChainOperator:
    """Time-ordered product of Heisenberg-picture partial characteristic operators.

    ``factors`` is listed left to right as multiplied, so times never
    increase along the list.
    """

    factors: tuple[tuple[PartialCharacteristic, float], ...]
    matrix: np.ndarray

    def probability(self, rho: Any) -> float:
        """``Tr[K rho K^dagger]`` (unclamped)."""
        m = np.asarray(getattr(rho, "matrix", rho))
        k = self.matrix
        return float(np.real(np.trace(k @ m @ k.conj().T)))


def chain(model: SystemModel, atoms: Sequence[ElementaryProposition]) -> ChainOperator:
    """Chain operator for ``atoms``; the latest time acts last (leftmost).

    Atoms sharing a time keep their listed order.
    """
    atoms = list(atoms)
    if not atoms:
        raise ValueError("chain needs at least one proposition")
    ordered = sorted(atoms, key=lambda a: -a.time)  # stable for ties
    factors = []
    k = None
    for a in ordered:
        z = a.partial(model)
        factors.append((z, a.time))
        k = z.matrix if k is None else k @ z.matrix
    return ChainOperator(tuple(factors), k)


@dataclass(frozen=True)
class CompatReport:
    """Outcome of :func:`compat_check`.

    ``order`` and ``subset`` identify the sub-chain with the worst residual;
    ``per_permutation`` lists ``(permutation, residual)`` for that sub-chain.
    """

    order: int
    subset: tuple[int, ...]
    worst_residual: float
    per_permutation: tuple[tuple[tuple[int, ...], float], ...]
    verdict: str
    classification: str
    sampled: bool
    worst_relative_residual: float = 0.0
    labels: tuple[str, ...] = ()
    time: float = 0.0
    failing_pair: tuple[int, int] | None = None

    @property
    def compatible(self) -> bool:
        return self.verdict == "compatible"

    def to_dict(self) -> dict:
        """Ordered mapping in the documented serialization layout."""
        return {
            "order": self.order,
            "subset": list(self.subset),
            "worst_residual": self.worst_residual,
            "verdict": self.verdict,
            "classification": self.classification,
            "sampled": self.sampled,
        }


def _trace_kk(k: np.ndarray, rho: np.ndarray) -> float:
    return float(np.real(np.einsum("ij,jk,ik->", k, rho, k.conj())))


def _product(mats: Sequence[np.ndarray], order: Iterable[int]) -> np.ndarray:
    out = None
    for i in order:
        out = mats[i] if out is None else out @ mats[i]
    return out


def _noncommuting_pair(mats: Sequence[np.ndarray], subset: Sequence[int], tol: float) -> tuple[int, int] | None:
    best, best_norm = None, tol
    for i, j in itertools.combinations(subset, 2):
        c = float(np.linalg.norm(mats[i] @ mats[j] - mats[j] @ mats[i]))
        if c > best_norm * (1 + 1e-9):
            best, best_norm = (i, j), c
    return best


def _scan(mats: Sequence[np.ndarray], rho: np.ndarray, tol: Tolerances, *,
          max_exhaustive: int = 6, n_samples: int = 1000, seed: int = 0,
          stop_at_first: bool = False, check_operator: bool = True) -> dict:
    n = len(mats)
    rng = np.random.default_rng(seed)
    best = {"abs": -1.0, "rel": 0.0, "subset": tuple(range(min(n, 2))), "perms": ()}
    sampled = False
    type_i = True
    failed = False
    for k in range(2, n + 1):
        for subset in itertools.combinations(range(n), k):
            base_k = _product(mats, subset)
            base = _trace_kk(base_k, rho)
            base_kk = base_k.conj().T @ base_k if check_operator else None
            if k <= max_exhaustive:
                perms = itertools.permutations(subset)
            else:
                sampled = True
                idx = np.asarray(subset)
                perms = (tuple(idx[rng.permutation(k)]) for _ in range(n_samples))
            rows = []
            worst_here = 0.0
            rel_here = 0.0
            for perm in perms:
                perm = tuple(int(p) for p in perm)
                if perm == subset:
                    rows.append((perm, 0.0))
                    continue
                pk = _product(mats, perm)
                r = abs(_trace_kk(pk, rho) - base)
                rows.append((perm, r))
                if r > worst_here:
                    worst_here = r
                    rel_here = r / max(base, tol.eps)
                if type_i and check_operator:
                    if np.linalg.norm(pk.conj().T @ pk - base_kk) > tol.op:
                        type_i = False
            if worst_here > best["abs"]:
                best = {"abs": worst_here, "rel": rel_here, "subset": subset, "perms": tuple(rows)}
            if worst_here >= tol.compat:
                failed = True
                if stop_at_first:
                    return {"best": best, "sampled": sampled, "type_i": False, "stopped": True}
    return {"best": best, "sampled": sampled, "type_i": type_i and not failed, "stopped": False}


def compat_residuals(mats: Sequence[np.ndarray], rho: np.ndarray,
                     tol: Tolerances = DEFAULT_TOL, **kwargs) -> tuple[float, dict]:
    """Worst absolute residual over all sub-chains of raw operator matrices.

    Both ``mats`` and ``rho`` must be in the same picture (Schrodinger
    operators with the evolved state, or Heisenberg operators with the
    initial state).
    """
    res = _scan(list(mats), np.asarray(rho), tol, **kwargs)
    return max(res["best"]["abs"], 0.0), res


def _report(mats, res, tol, labels, t) -> CompatReport:
    best = res["best"]
    worst = max(best["abs"], 0.0)
    verdict = "compatible" if worst < tol.compat else "incompatible"
    if verdict == "incompatible":
        classification = "n/a"
    else:
        classification = "type_i" if res["type_i"] else "type_ii"
    pair = None
    if verdict == "incompatible":
        pair = _noncommuting_pair(mats, best["subset"], tol.op)
    return CompatReport(
        order=len(best["subset"]),
        subset=tuple(int(i) for i in best["subset"]),
        worst_residual=worst,
        per_permutation=best["perms"],
        verdict=verdict,
        classification=classification,
        sampled=res["sampled"],
        worst_relative_residual=best["rel"],
        labels=tuple(labels),
        time=float(t),
        failing_pair=pair,
    )


def _state_matrix(rho0: Any, model: SystemModel) -> np.ndarray:
    m = np.asarray(getattr(rho0, "matrix", rho0), dtype=complex)
    if m.shape != (model.dim, model.dim):
        raise ValueError(f"density shape {m.shape} does not match model dimension {model.dim}")
    return m


def compat_check(model: SystemModel, rho0: Any, atoms: Sequence[ElementaryProposition],
                 t: float = 0.0, *, max_exhaustive: int = 6, n_samples: int = 1000,
                 seed: int = 0, stop_at_first: bool = False) -> CompatReport:
    """Check the compatibility rule for ``atoms`` at the common time ``t``.

    The atoms' own time tags are ignored: every projector is taken in the
    Schrodinger picture and tested against ``rho(t) = U(t) rho0 U(t)^dagger``.
    With ``stop_at_first`` the scan ends at the first failing sub-chain and
    the classification is ``n/a``.
    """
    atoms = list(atoms)
    if len(atoms) < 2:
        raise ValueError("compat_check needs at least two propositions")
    if max_exhaustive < 2 or n_samples < 1:
        raise ValueError("permutation budget must allow at least pairs and one sample")
    rho_t = model.evolve(_state_matrix(rho0, model), t)
    mats = [a.projector(model) for a in atoms]
    res = _scan(mats, rho_t, model.tol, max_exhaustive=max_exhaustive,
                n_samples=n_samples, seed=seed, stop_at_first=stop_at_first)
    if res["stopped"]:
        res["type_i"] = False
    return _report(mats, res, model.tol, [a.label for a in atoms], t)


def classify(atoms: Sequence[ElementaryProposition], model: SystemModel,
             rho0: Any = None, t: float = 0.0) -> str:
    """``"type_i"`` when every reordering leaves ``K^dagger K`` unchanged as an operator.

    If ``rho0`` is given the set must first pass :func:`compat_check`.
    """
    atoms = list(atoms)
    if rho0 is not None:
        rep = compat_check(model, rho0, atoms, t)
        if not rep.compatible:
            raise ValueError(
                f"classification needs a compatible set (worst residual {rep.worst_residual:.3g})"
            )
        return rep.classification
    mats = [a.projector(model) for a in atoms]
    tol = model.tol
    for k in range(2, len(mats) + 1):
        for subset in itertools.combinations(range(len(mats)), k):
            base = _product(mats, subset)
            base_kk = base.conj().T @ base
            for perm in itertools.permutations(subset):
                pk = _product(mats, perm)
                if np.linalg.norm(pk.conj().T @ pk - base_kk) > tol.op:
                    return "type_ii"
    return "type_i"


# -- partitions and histories ---------------------------------------------------

def resolve_partition(model: SystemModel, cells: Sequence[Any]) -> list[np.ndarray]:
    """Projectors for one time's cells; checks they are disjoint and exhaustive.

    A cell is an index list, an :class:`ElementaryProposition` or a projector matrix.
    """
    if not cells:
        raise ValueError("partition has no cells")
    mats = []
    seen: set[int] = set()
    for c in cells:
        if isinstance(c, ElementaryProposition):
            mats.append(c.projector(model))
        elif isinstance(c, np.ndarray) and c.ndim == 2:
            mats.append(np.asarray(c, dtype=complex))
        else:
            idx = [int(k) for k in c]
            if set(idx) & seen:
                raise ValueError(f"partition cells overlap at indices {sorted(set(idx) & seen)}")
            seen.update(idx)
            mats.append(projector(model, idx).matrix)
    tol = model.tol.proj * max(1.0, float(model.dim))
    total = sum(mats)
    if np.linalg.norm(total - np.eye(model.dim)) > tol:
        raise ValueError("partition cells are not exhaustive")
    for i, j in itertools.combinations(range(len(mats)), 2):
        if np.linalg.norm(mats[i] @ mats[j]) > tol:
            raise ValueError(f"partition cells {i} and {j} are not disjoint")
    return mats


def _family(model: SystemModel, family: Sequence[tuple[float, Sequence[Any]]]):
    times = [float(t) for t, _ in family]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("history times must be strictly increasing")
    parts = []
    for t, cells in family:
        mats = resolve_partition(model, cells)
        parts.append([model.heisenberg(m, t) for m in mats])
    return times, parts


def _history_chains(parts):
    for outcome in itertools.product(*(range(len(p)) for p in parts)):
        k = None
        for i in reversed(range(len(parts))):  # latest leftmost
            m = parts[i][outcome[i]]
            k = m if k is None else k @ m
        yield outcome, k


def history_probabilities(model: SystemModel, rho0: Any,
                          family: Sequence[tuple[float, Sequence[Any]]]) -> dict[tuple[int, ...], float]:
    """``Tr[K rho0 K^dagger]`` for every history of a partition family."""
    rho = _state_matrix(rho0, model)
    _, parts = _family(model, family)
    return {o: _trace_kk(k, rho) for o, k in _history_chains(parts)}


@dataclass(frozen=True)
class ConsistencyReport:
    """Off-diagonal chain overlaps of a history family.

    ``pair_compat`` lists, for cells at different times, the two-factor
    compatibility residual of their Heisenberg-picture operators against
    the initial state.
    """

    histories: tuple[tuple[int, ...], ...]
    max_overlap: float
    worst_pair: tuple[tuple[int, ...], tuple[int, ...]] | None
    consistent: bool
    pair_compat: tuple[dict, ...] = field(default=())

    @property
    def all_pairs_compatible(self) -> bool:
        return all(p["verdict"] == "compatible" for p in self.pair_compat)


def consistency_check(model: SystemModel, rho0: Any,
                      family: Sequence[tuple[float, Sequence[Any]]]) -> ConsistencyReport:
    """Decoherence-functional check ``|Tr[K rho K'^dagger]| < tol.compat`` for distinct histories."""
    rho = _state_matrix(rho0, model)
    times, parts = _family(model, family)
    chains = list(_history_chains(parts))
    worst, worst_pair = 0.0, None
    for (oa, ka), (ob, kb) in itertools.combinations(chains, 2):
        v = abs(np.trace(ka @ rho @ kb.conj().T))
        if v > worst:
            worst, worst_pair = float(v), (oa, ob)
    pair_compat = []
    tol = model.tol
    for (i, pi), (j, pj) in itertools.combinations(enumerate(parts), 2):
        for a, ma in enumerate(pi):
            for b, mb in enumerate(pj):
                r, _ = compat_residuals([ma, mb], rho, tol, check_operator=False)
                pair_compat.append({
                    "cells": ((times[i], a), (times[j], b)),
                    "residual": r,
                    "verdict": "compatible" if r < tol.compat else "incompatible",
                })
    return ConsistencyReport(
        histories=tuple(o for o, _ in chains),
        max_overlap=worst,
        worst_pair=worst_pair,
        consistent=worst < tol.compat,
        pair_compat=tuple(pair_compat),
    )
