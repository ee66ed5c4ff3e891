import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from hvt.compatibility import (
    chain,
    classify,
    compat_check,
    compat_residuals,
    consistency_check,
    history_probabilities,
    resolve_partition,
)
from hvt.propositions import ElementaryProposition
from hvt.qcore import DensityOperator, SystemModel

from conftest import random_density, random_hermitian, random_subspace_projector, random_unit

SPIN0 = SystemModel.build(np.zeros((2, 2)))
UP_X = ElementaryProposition.from_vectors("o(↑x)", [1, 1])
UP_Y = ElementaryProposition.from_vectors("o(↑y)", [1, 1j])
RHO_X = DensityOperator.from_ket(np.array([1, 1]) / np.sqrt(2))


def test_spin_pair_residual_quarter():
    rep = compat_check(SPIN0, RHO_X, [UP_X, UP_Y])
    assert rep.verdict == "incompatible"
    assert rep.worst_residual == pytest.approx(0.25, abs=1e-12)
    assert rep.classification == "n/a"
    assert rep.failing_pair == (0, 1)


def test_spin_pair_type_ii_under_mixed_state():
    rep = compat_check(SPIN0, DensityOperator.maximally_mixed(2), [UP_X, UP_Y])
    assert (rep.verdict, rep.classification) == ("compatible", "type_ii")


def test_commuting_set_is_type_i():
    model = SystemModel.build(np.diag([0.0, 1.0, 2.0]))
    atoms = [ElementaryProposition("A", (0, 1)), ElementaryProposition("B", (1, 2))]
    rep = compat_check(model, DensityOperator.maximally_mixed(3), atoms)
    assert (rep.verdict, rep.classification) == ("compatible", "type_i")
    assert classify(atoms, model) == "type_i"


def test_classify_refuses_incompatible_set():
    with pytest.raises(ValueError, match="needs a compatible set"):
        classify([UP_X, UP_Y], SPIN0, RHO_X)


def test_report_serialization_keys():
    d = compat_check(SPIN0, RHO_X, [UP_X, UP_Y]).to_dict()
    assert list(d) == ["order", "subset", "worst_residual", "verdict", "classification", "sampled"]


def test_needs_two_atoms():
    with pytest.raises(ValueError, match="at least two"):
        compat_check(SPIN0, RHO_X, [UP_X])


def test_relative_residual_reported():
    rep = compat_check(SPIN0, RHO_X, [UP_X, UP_Y])
    # listed order K = Px Py gives Tr[K rho K^dagger] = 1/4; the residual is also 1/4
    assert rep.worst_relative_residual == pytest.approx(1.0, abs=1e-12)


def test_large_sets_are_sampled():
    model = SystemModel.build(np.diag(np.arange(8.0)))
    atoms = [ElementaryProposition(f"A{k}", (k, 7)) for k in range(7)]
    rep = compat_check(model, DensityOperator.maximally_mixed(8), atoms, n_samples=20)
    assert rep.sampled
    assert rep.compatible


def test_sampled_scan_is_seeded():
    mats = [random_subspace_projector(np.random.default_rng(k), 3, 1) for k in range(7)]
    rho = random_density(np.random.default_rng(9), 3)
    a = compat_residuals(mats, rho, max_exhaustive=3, n_samples=5, seed=4)[0]
    b = compat_residuals(mats, rho, max_exhaustive=3, n_samples=5, seed=4)[0]
    assert a == b


def test_stop_at_first_marks_not_applicable():
    rep = compat_check(SPIN0, RHO_X, [UP_X, UP_Y], stop_at_first=True)
    assert rep.verdict == "incompatible" and rep.classification == "n/a"


def test_triple_fails_where_pairs_pass():
    # every pair among {↑z, ↓z, ↑x} passes against |↑y>, the triple does not
    up_z = ElementaryProposition("o(↑z)", None, 0.0, np.diag([1.0, 0.0]))
    dn_z = ElementaryProposition("o(↓z)", None, 0.0, np.diag([0.0, 1.0]))
    rho = DensityOperator.from_ket(np.array([1, 1j]) / np.sqrt(2))
    for a, b in itertools.combinations([up_z, dn_z, UP_X], 2):
        assert compat_check(SPIN0, rho, [a, b]).compatible
    rep = compat_check(SPIN0, rho, [up_z, dn_z, UP_X])
    assert rep.verdict == "incompatible"
    assert rep.order == 3
    # oracle: Tr[Pz+ Px Pz- rho ...] = 1/8, reorderings with adjacent z cells vanish
    assert rep.worst_residual == pytest.approx(0.125, abs=1e-12)


def second_order_oracle(phi1, phi2, rho):
    o = abs(np.vdot(phi1, phi2)) ** 2
    r11 = np.real(np.vdot(phi1, rho @ phi1))
    r22 = np.real(np.vdot(phi2, rho @ phi2))
    return o * abs(r11 - r22)


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_second_order_formula(seed, n):
    rng = np.random.default_rng(seed)
    phi1, phi2 = random_unit(rng, n), random_unit(rng, n)
    rho = random_density(rng, n)
    model = SystemModel.build(np.zeros((n, n)))
    atoms = [ElementaryProposition.from_vectors("a", phi1), ElementaryProposition.from_vectors("b", phi2)]
    rep = compat_check(model, rho, atoms)
    assert abs(rep.worst_residual - second_order_oracle(phi1, phi2, rho)) < 1e-10


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), k=st.integers(2, 4))
def test_always_true_propositions_are_compatible(seed, n, k):
    rng = np.random.default_rng(seed)
    support_rank = int(rng.integers(1, n))
    support = random_subspace_projector(rng, n, support_rank)
    w = np.linalg.eigh(support)[1][:, -support_rank:]
    g = rng.normal(size=(support_rank, support_rank)) + 1j * rng.normal(size=(support_rank, support_rank))
    rho = w @ (g @ g.conj().T) @ w.conj().T
    rho /= np.trace(rho).real
    atoms = []
    comp_basis = np.linalg.eigh(support)[1][:, : n - support_rank]
    for j in range(k):
        extra = int(rng.integers(0, n - support_rank + 1))
        cols = [w]
        if extra:
            mix = comp_basis @ np.linalg.qr(rng.normal(size=(n - support_rank, extra))
                                            + 1j * rng.normal(size=(n - support_rank, extra)))[0]
            cols.append(mix)
        atoms.append(ElementaryProposition.from_vectors(f"S{j}", np.column_stack(cols)))
    model = SystemModel.build(np.zeros((n, n)))
    rep = compat_check(model, DensityOperator(rho), atoms)
    assert rep.compatible
    assert rep.worst_residual < 1e-10


def test_chain_orders_latest_leftmost():
    model = SystemModel.build(np.diag([0.5, -0.5]), np.array([[0.5, 0.2], [0.2, -0.5]]))
    a = ElementaryProposition("A", (0,), 2.0)
    b = ElementaryProposition("B", (1,), 1.0)
    k = chain(model, [b, a]).matrix
    oracle = a.partial(model).matrix @ b.partial(model).matrix
    assert np.allclose(k, oracle, atol=1e-14)
    assert [t for _, t in chain(model, [b, a]).factors] == [2.0, 1.0]


def test_resolve_partition_validation():
    model = SystemModel.build(np.diag([0.0, 1.0, 2.0]))
    with pytest.raises(ValueError, match="overlap"):
        resolve_partition(model, [[0, 1], [1, 2]])
    with pytest.raises(ValueError, match="not exhaustive"):
        resolve_partition(model, [[0], [1]])
    with pytest.raises(ValueError, match="no cells"):
        resolve_partition(model, [])


def explicit_history_probability(h, rho, times, cells_per_time, outcome, dim):
    k = np.eye(dim, dtype=complex)
    for t, cells, c in zip(times, cells_per_time, outcome):
        u = scipy.linalg.expm(-1j * t * h)
        p = np.zeros((dim, dim))
        for i in cells[c]:
            p[i, i] = 1.0
        k = (u.conj().T @ p @ u) @ k
    return float(np.real(np.trace(k @ rho @ k.conj().T)))


def test_history_probabilities_match_explicit_products(rng):
    h0 = np.diag([0.0, 1.0, 2.0])
    h = h0 + 0.3 * random_hermitian(rng, 3)
    model = SystemModel.build(h0, h)
    rho = random_density(rng, 3)
    cells = [[[0], [1, 2]], [[0, 1], [2]], [[0], [1], [2]]]
    times = [0.4, 1.1, 2.0]
    table = history_probabilities(model, rho, list(zip(times, cells)))
    assert len(table) == 12
    for outcome, p in table.items():
        assert p == pytest.approx(explicit_history_probability(h, rho, times, cells, outcome, 3), abs=1e-12)
    assert sum(table.values()) == pytest.approx(1.0, abs=1e-12)


def test_consistency_for_stationary_dynamics():
    model = SystemModel.build(np.diag([0.0, 1.0, 2.0]))
    rho = DensityOperator.maximally_mixed(3)
    rep = consistency_check(model, rho, [(0.0, [[0], [1, 2]]), (1.0, [[0, 1], [2]])])
    assert rep.consistent
    assert rep.all_pairs_compatible


def test_consistency_fails_for_driven_qubit():
    model = SystemModel.build(np.diag([0.5, -0.5]), np.array([[0.5, 0.4], [0.4, -0.5]]))
    rho = DensityOperator.from_ket([1 / np.sqrt(2), 1 / np.sqrt(2)])
    rep = consistency_check(model, rho, [(0.0, [[0], [1]]), (1.0, [[0], [1]])])
    assert not rep.consistent
    assert rep.max_overlap > 1e-3
