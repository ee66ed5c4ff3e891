"""Acceptance criteria, one test per criterion.

Each criterion is timed against its budget. Results are collected in RESULTS and
printed as one PASS/FAIL line each at the end of the session (see conftest.py).
Running this file directly with python3 prints the same lines.
"""
import math
import os
import pathlib
import time

import numpy as np
import pytest

from hvt.cli import load_scenario, parse_scenario
from hvt.compatibility import compat_check
from hvt.probability import Ensemble
from hvt.propositions import ElementaryProposition
from hvt.qcore import DensityOperator, SystemModel
from hvt.quantities import Grid, build_quantity, classical_ok, robertson_bound, variance
from hvt.scenarios import (
    decay_toy,
    gleason_demo,
    light_quantum,
    singlet_chsh,
    singlet_joint,
    singlet_model,
)
from hvt.trials import history_chi_square, sample_trials, trials_to_csv

from conftest import random_density, random_unit

import test_probability
import test_propositions
import test_qcore
import test_trials

EXAMPLE = pathlib.Path(__file__).resolve().parents[1] / "scenarios" / "driven_qubit.json"
RESULTS: dict[int, tuple[bool, str]] = {}


def criterion_1():
    model, ens = singlet_model()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        u1, u2 = rng.normal(size=3), rng.normal(size=3)
        u1 /= np.linalg.norm(u1)
        u2 /= np.linalg.norm(u2)
        dot = float(u1 @ u2)
        for s1 in (True, False):
            for s2 in (True, False):
                sign = 1 if s1 == s2 else -1
                p = singlet_joint(model, ens, u1, u2, s1, s2)
                worst = max(worst, abs(p - (1 - sign * dot) / 4))
    return worst < 1e-12, f"100 direction pairs, worst joint error {worst:.2e}"


def criterion_2():
    # the sampling part of the scenario belongs to criterion 3
    rep = singlet_chsh(n_trials=10)
    chsh = rep.notes["chsh"]
    pair = rep.notes["failing_pair"]
    allowed = (sorted(["o(a,↑)₁", "o(c,↑)₁"]), sorted(["o(b,↑)₂", "o(d,↑)₂"]))
    ok = abs(chsh - 2 * math.sqrt(2)) < 1e-12 and pair in allowed
    return ok, f"CHSH {chsh!r}, gate refused with pair {pair}"


def criterion_3():
    rep = singlet_chsh(n_trials=10_000)
    rows = rep.tables["deterministic_sampling"]["rows"]
    violations = sum(r[2] for r in rows)
    cond = [c for c in rep.checks if c.description.startswith("Pr(")]
    worst = max(abs(c.actual - 1.0) for c in cond)
    ok = all(r[1] == 10_000 for r in rows) and violations == 0 and worst < 1e-9 and len(cond) == 8
    return ok, f"{len(rows)} directions x 10^4 trials, {violations} violations, conditional error {worst:.2e}"


def criterion_4():
    rng = np.random.default_rng(404)
    worst, bad = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(2, 17))
        k = int(rng.integers(2, 5))
        r = int(rng.integers(1, n))
        q = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))[0]
        support, rest = q[:, :r], q[:, r:]
        rho = support @ random_density(rng, r) @ support.conj().T
        atoms = []
        for j in range(k):
            extra = int(rng.integers(0, n - r + 1))
            cols = support
            if extra:
                mix = np.linalg.qr(rng.normal(size=(n - r, extra)) + 1j * rng.normal(size=(n - r, extra)))[0]
                cols = np.column_stack([support, rest @ mix])
            atoms.append(ElementaryProposition.from_vectors(f"S{j}", cols))
        model = SystemModel.build(np.zeros((n, n)))
        rep = compat_check(model, DensityOperator(rho), atoms)
        worst = max(worst, rep.worst_residual)
        bad += not rep.compatible
    return bad == 0 and worst < 1e-10, f"1000 instances, {bad} incompatible, worst residual {worst:.2e}"


def criterion_5():
    rng = np.random.default_rng(505)
    worst = 0.0
    models = {n: SystemModel.build(np.zeros((n, n))) for n in range(2, 9)}
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        phi1, phi2 = random_unit(rng, n), random_unit(rng, n)
        rho = random_density(rng, n)
        atoms = [ElementaryProposition.from_vectors("a", phi1), ElementaryProposition.from_vectors("b", phi2)]
        got = compat_check(models[n], DensityOperator(rho), atoms).worst_residual
        r11 = np.vdot(phi1, rho @ phi1).real
        r22 = np.vdot(phi2, rho @ phi2).real
        want = abs(np.vdot(phi1, phi2)) ** 2 * abs(r11 - r22)
        worst = max(worst, abs(got - want))
    return worst < 1e-10, f"1000 rank-one pairs, worst deviation {worst:.2e}"


def criterion_6():
    sc = load_scenario(parse_scenario(EXAMPLE.read_text(encoding="utf-8")))
    first = sample_trials(sc.ensemble, sc.model, sc.history, 100_000, 42, workers=1)
    again = sample_trials(sc.ensemble, sc.model, sc.history, 100_000, 42, workers=os.cpu_count())
    same = trials_to_csv(first).encode() == trials_to_csv(again).encode()
    _, p, dof = history_chi_square(first, sc.ensemble, sc.model, sc.history)
    return p > 0.001 and same, f"N=10^5, chi-square p={p:.4f} (dof {dof}), rerun byte-identical={same}"


def criterion_7():
    rep = decay_toy()
    ratio = rep.check("fitted rate relative to golden-rule rate").actual
    return abs(ratio - 1.0) < 0.10, f"fitted/golden-rule rate ratio {ratio:.4f}"


def criterion_8():
    fock = light_quantum("fock1")
    worst = max(abs(a - i) for _, a, i in fock.tables["probabilities"]["rows"])
    coh = light_quantum("coherent", alpha=1.0)
    errs = [r[3] for r in coh.tables["ratio_drift"]["rows"]]
    monotone = all(a > b for a, b in zip(errs, errs[1:]))
    ok = worst < 1e-12 and monotone and errs[-1] < 0.05
    return ok, f"Fock max |absorbed - ionized| {worst:.2e}, coherent drift errors {[f'{e:.1e}' for e in errs]}"


def criterion_9():
    model = SystemModel.build(np.zeros((2, 2)))
    ens = Ensemble(DensityOperator.from_ket([1, 0]))
    sx = np.array([[0, 1], [1, 0]]) / 2
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    bound = robertson_bound(ens, model, sx, sy)
    gap = abs(variance(ens, model, sx) * variance(ens, model, sy) - bound ** 2)
    half = Grid((-0.5, 0.0, 0.5))
    fx, fy = build_quantity(model, sx, half, "S_x"), build_quantity(model, sy, half, "S_y")
    # bound |<[Sx, Sy]>|/2 = 1/4; grid products 1/4 (equality) and 5/2 (ten times)
    at_equality = classical_ok(fx, fy, ens)
    coarse = (build_quantity(model, sx, Grid((-2.5, 0.0, 2.5)), "S_x"),
              build_quantity(model, sy, Grid((-1.0, 0.0, 1.0)), "S_y"))
    at_ten = classical_ok(*coarse, ens)
    ok = gap < 1e-12 and not at_equality and at_ten
    return ok, f"|var product - bound^2| {gap:.2e}, ok at equality={at_equality}, ok at 10x={at_ten}"


def criterion_10():
    s = 1 / math.sqrt(2)
    mixed = gleason_demo([s, s], [[1, 0], [0, 1]])
    same = gleason_demo([s, s], [[s, s], [s, s]])
    ok = mixed.notes["mean_overlap"] < 1 and mixed.notes["contradiction"] and same.notes["consistent"]
    return ok, (f"superposition vs basis mean overlap {mixed.notes['mean_overlap']:.3f}, "
                f"all-equal consistent={same.notes['consistent']}")


PROPERTY_SUITES = (
    ("projector laws", test_propositions.test_projector_laws),
    ("one-hot sampling", test_trials.test_one_hot_sampling),
    ("marginalization", test_probability.test_marginalization_over_later_partition),
    ("exclusivity additivity", test_probability.test_exclusivity_additivity),
    ("unitary group law", test_qcore.test_unitary_group_law),
)


def criterion_11():
    cases = []
    for name, fn in PROPERTY_SUITES:
        n = fn._hypothesis_internal_use_settings.max_examples
        fn()
        cases.append(f"{name} ({n})")
    ok = all(fn._hypothesis_internal_use_settings.max_examples >= 500 for _, fn in PROPERTY_SUITES)
    return ok, "; ".join(cases)


CRITERIA = {
    1: (criterion_1, 1.0),
    2: (criterion_2, 1.0),
    3: (criterion_3, 5.0),
    4: (criterion_4, 60.0),
    5: (criterion_5, 10.0),
    6: (criterion_6, 30.0),
    7: (criterion_7, 60.0),
    8: (criterion_8, 60.0),
    9: (criterion_9, 1.0),
    10: (criterion_10, 1.0),
    11: (criterion_11, 120.0),
}


def run_criterion(k: int) -> tuple[bool, str]:
    fn, budget = CRITERIA[k]
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as e:  # a crash is a failure, reported like any other
        ok, detail = False, f"raised {type(e).__name__}: {e}"
    elapsed = time.perf_counter() - start
    in_time = elapsed < budget
    line = f"{detail}; {elapsed:.2f} s of {budget:g} s budget"
    if not in_time:
        line += " (over budget)"
    RESULTS[k] = (ok and in_time, line)
    return RESULTS[k]


def summary_lines() -> list[str]:
    return [f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}" for k, (ok, detail) in sorted(RESULTS.items())]


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    ok, detail = run_criterion(k)
    print(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
    assert ok, detail


if __name__ == "__main__":
    for k in sorted(CRITERIA):
        run_criterion(k)
    print("\n".join(summary_lines()))
