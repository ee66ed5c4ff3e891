"""Monte Carlo trials over a history of orthogonal partitions.

Each trial walks through the history times in order.  At each time the
conditioned state is evolved, one cell is drawn with probability
``Tr[P rho P]`` and the state is conditioned on it.  The resulting joint
distribution of outcomes equals ``Tr[K rho0 K^dagger]`` for the chain
operator ``K`` of the history.

Randomness
----------
Trial ``j`` of a run with base seed ``s`` uses the stream seed
``seed_j = mix(mix(s) XOR j)`` where ``mix`` is the splitmix64 finalizer
applied after adding the golden-ratio increment ``0x9E3779B97F4A7C15``.  The
``i``-th uniform draw of a trial is ``mix(seed_j + i * 0x9E3779B97F4A7C15) >> 11``
scaled by ``2**-53``.  Trials are therefore independent of the order and the
thread in which they are generated.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats as _stats

from .compatibility import history_probabilities, resolve_partition
from .probability import Ensemble
from .qcore import SystemModel

__all__ = [
    "HistorySpec",
    "TrialRecord",
    "EmpiricalStats",
    "splitmix64",
    "trial_seed",
    "sample_history",
    "sample_trials",
    "jump_count",
    "empirical_expectation",
    "expected_jump_count",
    "history_chi_square",
    "trials_to_csv",
    "worker_count",
]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: add the golden increment and apply the finalizer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def trial_seed(base_seed: int, j: int) -> int:
    """Stream seed of trial ``j``."""
    return splitmix64(splitmix64(int(base_seed) & _MASK) ^ (int(j) & _MASK))


def _uniform(seed: int, i: int) -> float:
    return (splitmix64((seed + i * _GOLDEN) & _MASK) >> 11) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class HistorySpec:
    """Strictly increasing times, each with a partition into cells.

    A cell is a list of stationary-basis indices, an
    :class:`~hvt.propositions.ElementaryProposition`, or a projector matrix.
    """

    times: tuple[float, ...]
    partitions: tuple[tuple[Any, ...], ...]
    cell_labels: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ValueError("history needs at least one time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("history times must be strictly increasing")
        if len(self.partitions) != len(times):
            raise ValueError("one partition per time is required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "partitions", tuple(tuple(p) for p in self.partitions))

    @classmethod
    def repeated(cls, times: Sequence[float], cells: Sequence[Any], cell_labels=None) -> "HistorySpec":
        """Same partition at every time."""
        labels = None if cell_labels is None else tuple(tuple(cell_labels) for _ in times)
        return cls(tuple(times), tuple(tuple(cells) for _ in times), labels)

    def family(self) -> list[tuple[float, tuple[Any, ...]]]:
        return list(zip(self.times, self.partitions))

    def resolve(self, model: SystemModel) -> tuple[tuple[np.ndarray, ...], ...]:
        """Schrodinger-picture projectors; validates every partition."""
        out = []
        for cells in self.partitions:
            mats = resolve_partition(model, cells)
            for m in mats:
                m.setflags(write=False)
            out.append(tuple(mats))
        return tuple(out)


@dataclass(frozen=True)
class TrialRecord:
    """One sampled trial.

    ``outcomes[i]`` is the cell chosen at ``times[i]``; ``x_values`` maps
    ``(time, cell)`` to the logical variable of that cell.
    """

    j: int
    outcomes: tuple[int, ...]
    jump_times: tuple[float, ...]
    seed: int
    times: tuple[float, ...] = field(repr=False)
    _projectors: tuple[tuple[np.ndarray, ...], ...] = field(repr=False, compare=False)

    @property
    def x_values(self) -> dict[tuple[float, int], int]:
        out = {}
        for t, cells, chosen in zip(self.times, self._projectors, self.outcomes):
            for c in range(len(cells)):
                out[(t, c)] = int(c == chosen)
        return out

    def x(self, t: float, cell: int) -> int:
        return int(self.outcomes[self._index(t)] == cell)

    def cell_at(self, t: float) -> int:
        return self.outcomes[self._index(t)]

    def projector_at(self, t: float) -> np.ndarray:
        """Projector of the occupied cell at ``t``; ``KeyError`` if ``t`` was not sampled."""
        return self._projectors[self._index(t)][self.cell_at(t)]

    def _index(self, t: float) -> int:
        try:
            return self.times.index(float(t))
        except ValueError:
            raise KeyError(t) from None


class _Tree:
    """Memoized conditioned states keyed by outcome prefix."""

    def __init__(self, model: SystemModel, rho0: np.ndarray, times, parts, tol):
        self.model = model
        self.times = times
        self.parts = parts
        self.tol = tol
        self.rho0 = rho0
        self.nodes: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
        self.states: dict[tuple[int, ...], np.ndarray] = {(): rho0}

    def _state(self, prefix: tuple[int, ...]) -> np.ndarray:
        st = self.states.get(prefix)
        if st is None:
            rho_t, _ = self.node(prefix[:-1])
            p = self.parts[len(prefix) - 1][prefix[-1]]
            m = p @ rho_t @ p
            m = m / np.real(np.trace(m))
            st = 0.5 * (m + m.conj().T)
            self.states[prefix] = st
        return st

    def node(self, prefix: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        nd = self.nodes.get(prefix)
        if nd is None:
            i = len(prefix)
            prev = self.times[i - 1] if i else 0.0
            rho_t = self.model.evolve(self._state(prefix), self.times[i] - prev)
            ps = np.array([max(0.0, float(np.real(np.trace(p @ rho_t @ p)))) for p in self.parts[i]])
            total = ps.sum()
            if total <= self.tol.div:
                raise ValueError(f"total cell probability {total:.3g} at t={self.times[i]!r}")
            nd = (rho_t, ps / total)
            self.nodes[prefix] = nd
        return nd

    def draw(self, seed: int) -> tuple[int, ...]:
        prefix: tuple[int, ...] = ()
        for i in range(len(self.times)):
            _, ps = self.node(prefix)
            u = _uniform(seed, i)
            acc = 0.0
            chosen = None
            for c, p in enumerate(ps):
                if p <= 0.0:
                    continue
                acc += p
                chosen = c
                if u < acc:
                    break
            prefix = prefix + (chosen,)
        return prefix


def _record(j: int, seed: int, outcome: tuple[int, ...], times, parts) -> TrialRecord:
    jumps = tuple(times[i] for i in range(1, len(times)) if outcome[i] != outcome[i - 1])
    return TrialRecord(j, outcome, jumps, seed, times, parts)


def _prepare(ens: Ensemble, model: SystemModel, spec: HistorySpec):
    if ens.rho0.dim != model.dim:
        raise ValueError(f"ensemble dimension {ens.rho0.dim} does not match model dimension {model.dim}")
    parts = spec.resolve(model)
    return parts, _Tree(model, np.asarray(ens.rho0.matrix), spec.times, parts, model.tol)


def sample_history(ens: Ensemble, model: SystemModel, spec: HistorySpec, seed: int) -> TrialRecord:
    """Draw one trial using ``seed`` directly as its stream seed."""
    parts, tree = _prepare(ens, model, spec)
    seed = int(seed) & _MASK
    return _record(0, seed, tree.draw(seed), spec.times, parts)


def worker_count(requested: int | None = None) -> int:
    """Workers to use: ``requested`` (default 1) capped by ``HVT_THREADS`` when set."""
    n = 1 if requested is None else int(requested)
    cap = os.environ.get("HVT_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"HVT_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def sample_trials(ens: Ensemble, model: SystemModel, spec: HistorySpec, n_trials: int,
                  seed: int, workers: int | None = None) -> list[TrialRecord]:
    """Draw ``n_trials`` trials; the result does not depend on ``workers``."""
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    parts, _ = _prepare(ens, model, spec)
    rho0 = np.asarray(ens.rho0.matrix)
    n_workers = min(worker_count(workers), n_trials)

    def run(lo: int, hi: int) -> list[TrialRecord]:
        tree = _Tree(model, rho0, spec.times, parts, model.tol)
        out = []
        for j in range(lo, hi):
            s = trial_seed(seed, j)
            out.append(_record(j, s, tree.draw(s), spec.times, parts))
        return out

    if n_workers == 1:
        return run(0, n_trials)
    bounds = np.linspace(0, n_trials, n_workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        chunks = list(pool.map(lambda k: run(bounds[k], bounds[k + 1]), range(n_workers)))
    return [r for chunk in chunks for r in chunk]


def jump_count(trial: TrialRecord, t: float) -> int:
    """Number of jumps at or before ``t``."""
    return sum(1 for tj in trial.jump_times if tj <= t)


@dataclass(frozen=True)
class EmpiricalStats:
    n_trials: int
    mean: float
    std_error: float
    target: float | None = None
    z_score: float | None = None

    def to_dict(self) -> dict:
        return {"n_trials": self.n_trials, "mean": self.mean, "std_error": self.std_error,
                "target": self.target, "z_score": self.z_score}


def _target_fn(target: Any) -> Callable[[TrialRecord], float]:
    if callable(target):
        return target
    if isinstance(target, tuple) and len(target) == 2:
        t, cell = target
        return lambda tr: tr.x(t, cell)
    if isinstance(target, (int, float)):
        return lambda tr: jump_count(tr, float(target))
    raise TypeError("target must be a callable, a (time, cell) pair or a jump time")


def empirical_expectation(trials: Sequence[TrialRecord], target: Any,
                          exact: float | None = None) -> EmpiricalStats:
    """Sample mean and standard error of a per-trial value.

    ``target`` is a callable on trials, a ``(time, cell)`` pair selecting a
    logical variable, or a time ``t`` selecting the jump count ``n(t)``.
    ``exact`` is an optional predicted value used for the z-score.
    """
    if not trials:
        raise ValueError("empty trial set")
    if len(trials) < 2:
        raise ValueError("at least two trials are needed for a standard error")
    fn = _target_fn(target)
    vals = np.array([float(fn(tr)) for tr in trials])
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    z = None
    if exact is not None:
        if se > 0:
            z = (mean - exact) / se
        else:
            z = 0.0 if abs(mean - exact) <= 1e-12 else math.copysign(math.inf, mean - exact)
    return EmpiricalStats(len(vals), mean, se, None if exact is None else float(exact), z)


def expected_jump_count(ens: Ensemble, model: SystemModel, spec: HistorySpec, t: float) -> float:
    """``<n(t)>`` from the chain-operator history probabilities."""
    table = history_probabilities(model, ens.rho0, spec.family())
    times = spec.times
    total = 0.0
    for outcome, p in table.items():
        n = sum(1 for i in range(1, len(times)) if outcome[i] != outcome[i - 1] and times[i] <= t)
        total += p * n
    return total


def history_chi_square(trials: Sequence[TrialRecord], ens: Ensemble, model: SystemModel,
                       spec: HistorySpec, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Pearson chi-square of history frequencies against ``Tr[K rho0 K^dagger]``.

    Histories with expected count below ``min_expected`` are pooled into one
    bin.  Returns ``(statistic, p_value, degrees_of_freedom)``.
    """
    table = history_probabilities(model, ens.rho0, spec.family())
    n = len(trials)
    counts: dict[tuple[int, ...], int] = {}
    for tr in trials:
        counts[tr.outcomes] = counts.get(tr.outcomes, 0) + 1
    probs = {k: max(0.0, v) for k, v in table.items()}
    norm = sum(probs.values())
    obs, exp = [], []
    pool_o, pool_e = 0.0, 0.0
    for k, p in probs.items():
        e = n * p / norm
        if e < min_expected:
            pool_o += counts.get(k, 0)
            pool_e += e
        else:
            obs.append(counts.get(k, 0))
            exp.append(e)
    if pool_e > 0:
        obs.append(pool_o)
        exp.append(pool_e)
    elif pool_o > 0:
        return math.inf, 0.0, max(1, len(obs) - 1)
    if len(obs) < 2:
        return 0.0, 1.0, 0
    res = _stats.chisquare(np.array(obs, float), np.array(exp, float))
    return float(res.statistic), float(res.pvalue), len(obs) - 1


def trials_to_csv(trials: Sequence[TrialRecord]) -> str:
    """``trial,time,cell,n`` rows, one per trial and time, LF line endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "time", "cell", "n"])
    for tr in trials:
        for t, c in zip(tr.times, tr.outcomes):
            w.writerow([tr.j, format(t, ".17g"), c, jump_count(tr, t)])
    return buf.getvalue()
