"""Joint and conditional probabilities over an ensemble.

All probabilities are Heisenberg-picture traces ``Tr[K rho0 K^dagger]`` where
``rho0`` is the ensemble's density operator at time zero and ``K`` is the
chain operator of the atoms involved.

Strict mode refuses a joint probability whose coincident-time atoms fail the
compatibility check.  Permissive mode evaluates every ordering of such atoms
and returns their mean; :func:`joint_spread` gives the range.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .compatibility import CompatReport, chain, compat_check
from .propositions import ElementaryProposition, IncompatibleConjunction, MAX_COINCIDENT_FACTORS
from .qcore import DensityOperator, SystemModel

__all__ = [
    "Ensemble",
    "MisdetectionModel",
    "IncompatibleError",
    "RelationEvidence",
    "joint",
    "joint_spread",
    "conditional",
    "condition_ensemble",
    "is_deterministic",
    "is_exclusive",
    "is_independent",
    "apply_misdetection",
    "probability_table",
    "table_to_csv",
]

log = logging.getLogger(__name__)


class IncompatibleError(IncompatibleConjunction):
    """A coincident-time conjunction failed the compatibility check."""

    def __init__(self, report: CompatReport):
        labels = ", ".join(report.labels)
        super().__init__(
            f"coincident propositions {{{labels}}} at t={report.time!r} are incompatible "
            f"(worst residual {report.worst_residual:.3g})"
        )
        self.report = report


@dataclass(frozen=True)
class Ensemble:
    """Initial-time density operator plus a description of how it was prepared."""

    rho0: DensityOperator
    label: str = ""

    def at(self, model: SystemModel, t: float) -> DensityOperator:
        """Schrodinger-picture state at time ``t``."""
        m = model.evolve(self.rho0.matrix, t)
        return DensityOperator.trusted(0.5 * (m + m.conj().T), self.rho0.tol)


@dataclass(frozen=True)
class MisdetectionModel:
    """Independent detector errors.

    ``p_tn`` is the probability that a true event is missed; ``p_fp`` the
    probability that an absent event is reported.
    """

    p_tn: float = 0.0
    p_fp: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_tn", "p_fp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _as_atoms(a: ElementaryProposition | Sequence[ElementaryProposition]) -> list[ElementaryProposition]:
    if isinstance(a, ElementaryProposition):
        return [a]
    atoms = list(a)
    if not atoms:
        raise ValueError("empty proposition list")
    return atoms


def _groups(atoms: Sequence[ElementaryProposition]) -> dict[float, list[ElementaryProposition]]:
    out: dict[float, list[ElementaryProposition]] = {}
    for a in atoms:
        out.setdefault(a.time, []).append(a)
    return out


def _check_dims(ens: Ensemble, model: SystemModel) -> None:
    if ens.rho0.dim != model.dim:
        raise ValueError(f"ensemble dimension {ens.rho0.dim} does not match model dimension {model.dim}")


def _clamp(p: float, what: str) -> float:
    if p < 0.0 or p > 1.0:
        log.debug("clamped %s %.3g into [0, 1]", what, p)
    return min(1.0, max(0.0, p))


def _ratio(j: float, p_given: float, tol) -> float:
    # drift is clamped; a real excess (later-time condition on an
    # interfering family) is returned as is
    r = j / p_given
    if -tol.psd <= r <= 1.0 + tol.psd:
        return min(1.0, max(0.0, r))
    log.warning("conditional ratio %.12g lies outside [0, 1]; the family is not additive", r)
    return r


def _orderings(atoms: Sequence[ElementaryProposition]):
    groups = _groups(atoms)
    for g in groups.values():
        if len(g) > MAX_COINCIDENT_FACTORS:
            raise ValueError(f"{len(g)} coincident atoms exceed the limit of {MAX_COINCIDENT_FACTORS}")
    keys = list(groups)
    for choice in itertools.product(*(itertools.permutations(groups[k]) for k in keys)):
        yield [a for grp in choice for a in grp]


def _raw_values(ens, model, atoms) -> list[float]:
    return [chain(model, order).probability(ens.rho0) for order in _orderings(atoms)]


def joint(ens: Ensemble, model: SystemModel,
          atoms: ElementaryProposition | Sequence[ElementaryProposition],
          strict: bool = True) -> float:
    """Probability that every atom holds at its own time."""
    atoms = _as_atoms(atoms)
    _check_dims(ens, model)
    if strict:
        for t, grp in _groups(atoms).items():
            if len(grp) > 1:
                rep = compat_check(model, ens.rho0, grp, t)
                if not rep.compatible:
                    raise IncompatibleError(rep)
        p = chain(model, atoms).probability(ens.rho0)
    else:
        vals = _raw_values(ens, model, atoms)
        p = float(np.mean(vals))
    return _clamp(p, "joint probability")


def joint_spread(ens: Ensemble, model: SystemModel,
                 atoms: Sequence[ElementaryProposition]) -> tuple[float, float]:
    """Minimum and maximum of the joint over orderings of coincident atoms."""
    vals = _raw_values(ens, model, _as_atoms(atoms))
    return (_clamp(min(vals), "joint probability"), _clamp(max(vals), "joint probability"))


def conditional(ens: Ensemble, model: SystemModel, a, given, strict: bool = True) -> float:
    """``Pr(a and given) / Pr(given)``."""
    a, given = _as_atoms(a), _as_atoms(given)
    p_given = joint(ens, model, given, strict)
    if p_given <= ens.rho0.tol.div:
        raise ValueError(f"conditioning proposition has probability {p_given:.3g}")
    return _ratio(joint(ens, model, a + given, strict), p_given, ens.rho0.tol)


def condition_ensemble(ens: Ensemble, model: SystemModel, given) -> Ensemble:
    """Ensemble restricted to trials where ``given`` holds.

    Returns ``K rho0 K^dagger / Tr[K rho0 K^dagger]`` with ``K`` the chain
    operator of ``given``; the result is still referred to time zero.
    """
    given = _as_atoms(given)
    _check_dims(ens, model)
    k = chain(model, given).matrix
    m = k @ ens.rho0.matrix @ k.conj().T
    p = float(np.real(np.trace(m)))
    if p <= ens.rho0.tol.div:
        raise ValueError(f"conditioning proposition has probability {p:.3g}")
    m = m / p
    label = " AND ".join(f"{g.label}@{g.time!r}" for g in given)
    return Ensemble(DensityOperator.trusted(0.5 * (m + m.conj().T), ens.rho0.tol),
                    f"{ens.label} | {label}" if ens.label else label)


@dataclass(frozen=True)
class RelationEvidence:
    """Result of a relation test with the expectation values behind it."""

    holds: bool
    joint: float
    p_a: float
    p_b: float

    def __bool__(self) -> bool:
        return self.holds


def _three(ens, model, a, b, strict):
    a, b = _as_atoms(a), _as_atoms(b)
    return joint(ens, model, a + b, strict), joint(ens, model, a, strict), joint(ens, model, b, strict)


def is_deterministic(ens: Ensemble, model: SystemModel, a, b, strict: bool = True) -> RelationEvidence:
    """Both conditionals equal one: the two propositions hold in the same trials."""
    j, pa, pb = _three(ens, model, a, b, strict)
    tol = ens.rho0.tol
    if pa <= tol.div or pb <= tol.div:
        raise ValueError("deterministic relation undefined: a marginal probability is zero")
    holds = abs(j / pa - 1.0) < tol.det and abs(j / pb - 1.0) < tol.det
    return RelationEvidence(holds, j, pa, pb)


def is_exclusive(ens: Ensemble, model: SystemModel, a, b, strict: bool = True) -> RelationEvidence:
    """Joint probability vanishes."""
    j, pa, pb = _three(ens, model, a, b, strict)
    return RelationEvidence(j < ens.rho0.tol.det, j, pa, pb)


def is_independent(ens: Ensemble, model: SystemModel, a, b, strict: bool = True) -> RelationEvidence:
    """Joint probability factorizes."""
    j, pa, pb = _three(ens, model, a, b, strict)
    return RelationEvidence(abs(j - pa * pb) < ens.rho0.tol.det, j, pa, pb)


def apply_misdetection(p: float, m: MisdetectionModel) -> float:
    """Observed probability ``(1 - p_tn) p + p_fp (1 - p)``, clamped to [0, 1]."""
    if not -1e-12 <= p <= 1.0 + 1e-12:
        raise ValueError(f"probability out of range: {p}")
    p = min(1.0, max(0.0, p))
    return _clamp((1.0 - m.p_tn) * p + m.p_fp * (1.0 - p), "observed probability")


def _negate(a: ElementaryProposition, model: SystemModel) -> ElementaryProposition:
    if a.indices is not None:
        rest = [k for k in range(model.dim) if k not in a.indices]
        if rest:
            return ElementaryProposition(f"NOT {a.label}", tuple(rest), a.time)
        return None
    comp = np.eye(model.dim) - a.projector(model)
    if np.real(np.trace(comp)) < 0.5:
        return None
    return ElementaryProposition(f"NOT {a.label}", None, a.time, comp)


def probability_table(ens: Ensemble, model: SystemModel, a: ElementaryProposition,
                      b: ElementaryProposition, strict: bool = True) -> list[dict]:
    """Rows for outcomes (1/0) of ``a`` and ``b``.

    Columns: outcome_a, outcome_b, joint, marginal_a, marginal_b,
    conditional_a_given_b (``None`` when the condition has zero probability).
    """
    opts_a = [(1, a), (0, _negate(a, model))]
    opts_b = [(1, b), (0, _negate(b, model))]
    rows = []
    for oa, pa in opts_a:
        for ob, pb in opts_b:
            ma = joint(ens, model, pa, strict) if pa is not None else 0.0
            mb = joint(ens, model, pb, strict) if pb is not None else 0.0
            j = joint(ens, model, [pa, pb], strict) if pa is not None and pb is not None else 0.0
            cond = mb > ens.rho0.tol.div
            rows.append({
                "outcome_a": oa,
                "outcome_b": ob,
                "joint": j,
                "marginal_a": ma,
                "marginal_b": mb,
                "conditional_a_given_b": None if not cond else _ratio(j, mb, ens.rho0.tol),
            })
    return rows


TABLE_COLUMNS = ("outcome_a", "outcome_b", "joint", "marginal_a", "marginal_b", "conditional_a_given_b")


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def table_to_csv(rows: Sequence[dict]) -> str:
    """Serialize :func:`probability_table` rows with LF line endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in TABLE_COLUMNS])
    return buf.getvalue()
