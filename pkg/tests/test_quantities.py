import math

import numpy as np
import pytest

from hvt.probability import Ensemble
from hvt.qcore import DensityOperator, SystemModel, tensor_product
from hvt.quantities import (
    GateRefusal,
    Grid,
    build_quantity,
    cell_expectation,
    classical_ok,
    gated_arithmetic,
    instantaneous_value,
    robertson_bound,
    variance,
)
from hvt.trials import HistorySpec, sample_trials

SX = np.array([[0, 1], [1, 0]]) / 2
SY = np.array([[0, -1j], [1j, 0]]) / 2
SZ = np.array([[1, 0], [0, -1]]) / 2
SPIN0 = SystemModel.build(np.zeros((2, 2)))
UP_Z = Ensemble(DensityOperator.from_ket([1, 0]))
HALF = Grid((-0.5, 0.0, 0.5))


def test_grid_validation():
    with pytest.raises(ValueError, match="include 0"):
        Grid((1.0, 2.0))
    with pytest.raises(ValueError, match="strictly increasing"):
        Grid((0.0, 0.0))
    with pytest.raises(ValueError, match="finite"):
        Grid(())
    with pytest.raises(ValueError, match="spacing must be positive"):
        Grid.uniform(0.0, -1, 1)
    with pytest.raises(ValueError, match="must contain 0"):
        Grid.uniform(1.0, 1, 3)


def test_grid_cells():
    g = Grid.uniform(0.5, -2, 3)
    assert g.anchors == (-1.0, -0.5, 0.0, 0.5, 1.0, 1.5)
    assert g.index_range == (-2, 3)
    assert g.anchor(-2) == -1.0
    assert g.bounds(0) == (-0.25, 0.25)
    assert g.bounds(-2) == (-1.25, -0.75)
    assert g.cell_of(0.3) == 1
    assert g.cell_of(0.25) == 1
    assert g.cell_of(2.0) is None
    with pytest.raises(ValueError, match="outside"):
        g.anchor(4)


def test_single_anchor_grid():
    g = Grid((0.0,))
    assert g.min_interval == math.inf
    assert g.bounds(0) == (-math.inf, math.inf)
    assert g.cell_of(1e300) == 0


def test_grid_from_spec():
    assert Grid.from_spec({"uniform": {"delta": 1, "i_min": 0, "i_max": 2}}).anchors == (0.0, 1.0, 2.0)
    with pytest.raises(ValueError, match="needs 'anchors' or 'uniform'"):
        Grid.from_spec({})


def test_build_quantity_requires_commutation():
    model = SystemModel.build(np.diag([0.5, -0.5]))
    with pytest.raises(ValueError, match="does not commute with h0"):
        build_quantity(model, SX, HALF, "S_x")


def test_build_quantity_requires_grid_range():
    with pytest.raises(ValueError, match="outside the grid range"):
        build_quantity(SPIN0, 3 * SZ, HALF, "F")


def test_build_quantity_cells_in_degenerate_space():
    q = build_quantity(SPIN0, SX, HALF, "S_x")
    assert q.cells == [-1, 1]
    up = q.cell_propositions[1].projector(SPIN0)
    assert np.allclose(up, np.array([[1, 1], [1, 1]]) / 2, atol=1e-12)


def test_instantaneous_value_from_trial():
    h0 = np.diag([1.0, 0.0, -1.0])
    model = SystemModel.build(h0)
    q = build_quantity(model, h0, Grid.uniform(1.0, -1, 1), "E")
    ens = Ensemble(DensityOperator(np.diag([0.2, 0.3, 0.5])))
    spec = HistorySpec((0.0,), ([[0], [1], [2]],))
    trials = sample_trials(ens, model, spec, 50, seed=3)
    for tr in trials:
        v = instantaneous_value(q, tr, 0.0)
        # sorted basis: index 0 is energy -1
        assert v.value == [-1.0, 0.0, 1.0][tr.cell_at(0.0)]
    with pytest.raises(ValueError, match="no outcome at t=1.0"):
        instantaneous_value(q, trials[0], 1.0)


def test_coarse_trial_cell_cannot_resolve_fine_quantity():
    h0 = np.diag([1.0, 0.0, -1.0])
    model = SystemModel.build(h0)
    q = build_quantity(model, h0, Grid.uniform(1.0, -1, 1), "E")
    spec = HistorySpec((0.0,), ([[0, 1], [2]],))
    tr = sample_trials(Ensemble(DensityOperator.maximally_mixed(3)), model, spec, 20, seed=1)
    coarse = [t for t in tr if t.cell_at(0.0) == 0][0]
    with pytest.raises(ValueError, match="does not resolve"):
        instantaneous_value(q, coarse, 0.0)


def test_gate_refuses_spin_sum():
    sx = build_quantity(SPIN0, SX, HALF, "S_x", {1: "o(↑x)", -1: "o(↓x)"})
    sy = build_quantity(SPIN0, SY, HALF, "S_y", {1: "o(↑y)", -1: "o(↓y)"})
    with pytest.raises(GateRefusal, match=r"add\(S_x, S_y\) refused") as info:
        gated_arithmetic("add", sx, sy, UP_Z)
    assert info.value.pair == ("o(↑x)", "o(↑y)")
    assert info.value.residual > 1e-9


def test_gate_rejects_unknown_op():
    sx = build_quantity(SPIN0, SX, HALF, "S_x")
    with pytest.raises(ValueError, match="unknown operation"):
        gated_arithmetic("sub", sx, sx, UP_Z)


def test_gate_allows_commuting_product():
    model = SystemModel.build(np.zeros((4, 4)), subsystem_dims=(2, 2))
    a = build_quantity(model, tensor_product(2 * SZ, np.eye(2)), Grid((-1.0, 0.0, 1.0)), "A")
    b = build_quantity(model, tensor_product(np.eye(2), 2 * SX), Grid((-1.0, 0.0, 1.0)), "B")
    ket = tensor_product([1, 0], [1, 0])
    ens = Ensemble(DensityOperator.from_ket(ket))
    ab = gated_arithmetic("mul", a, b, ens)
    probs = {tuple(sorted(o.items())): p for o, _, p in ab.table}
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)
    # A = +1 with certainty, B = +-1 with probability 1/2 each
    assert probs[(("A", 1), ("B", 1))] == pytest.approx(0.5, abs=1e-12)
    assert ab.reachable_values == [-1.0, 1.0]
    assert len(ab.partition()) == 4
    spec = HistorySpec((0.0,), (tuple(c.projector(model) for c in ab.partition()),))
    for tr in sample_trials(ens, model, spec, 30, seed=5):
        assert ab.value_of(tr, 0.0) in (-1.0, 1.0)


def test_gate_composes_nested_results():
    model = SystemModel.build(np.diag([0.0, 1.0, 2.0]))
    f = build_quantity(model, np.diag([0.0, 1.0, 2.0]), Grid.uniform(1.0, 0, 2), "F")
    s = gated_arithmetic("add", f, f, Ensemble(DensityOperator.maximally_mixed(3)))
    s2 = gated_arithmetic("mul", s, f, Ensemble(DensityOperator.maximally_mixed(3)))
    assert s2.values == [0.0, 2.0, 8.0]


def test_robertson_equality_for_spin_up_z():
    vx = variance(UP_Z, SPIN0, SX)
    vy = variance(UP_Z, SPIN0, SY)
    bound = robertson_bound(UP_Z, SPIN0, SX, SY)
    assert vx * vy == pytest.approx(1 / 16, abs=1e-12)
    assert bound ** 2 == pytest.approx(1 / 16, abs=1e-12)


def test_classical_ok_boundary():
    tight = build_quantity(SPIN0, SX, HALF, "S_x"), build_quantity(SPIN0, SY, HALF, "S_y")
    assert not classical_ok(*tight, UP_Z)
    assert classical_ok(*tight, UP_Z, factor=1.0)
    wide = (build_quantity(SPIN0, SX, Grid((-2.5, 0.0, 2.5)), "S_x"),
            build_quantity(SPIN0, SY, Grid((-1.0, 0.0, 1.0)), "S_y"))
    assert classical_ok(*wide, UP_Z)
    with pytest.raises(ValueError, match="factor must be positive"):
        classical_ok(*wide, UP_Z, factor=0.0)


def test_cell_expectation_matches_trace():
    h0 = np.diag([1.0, 0.0, -1.0])
    model = SystemModel.build(h0)
    q = build_quantity(model, h0, Grid.uniform(1.0, -1, 1), "E")
    ens = Ensemble(DensityOperator(np.diag([0.2, 0.3, 0.5])))
    assert cell_expectation(ens, q) == pytest.approx(0.2 - 0.5, abs=1e-12)
