"""Stationary-state proposition calculus on finite-dimensional models."""

from .compatibility import (
    ChainOperator,
    CompatReport,
    chain,
    classify,
    compat_check,
    consistency_check,
    history_probabilities,
)
from .probability import (
    Ensemble,
    IncompatibleError,
    MisdetectionModel,
    apply_misdetection,
    condition_ensemble,
    conditional,
    is_deterministic,
    is_exclusive,
    is_independent,
    joint,
    joint_spread,
)
from .propositions import (
    And,
    ElementaryProposition,
    Not,
    Or,
    characteristic,
    exclusivity_check,
    heisenberg,
    parse_expr,
    pretty,
    projector,
)
from .qcore import (
    DEFAULT_TOL,
    DensityOperator,
    Ket,
    SystemModel,
    Tolerances,
    evolve_density,
    hermitian_eig,
    load_system,
    partial_trace,
    tensor_product,
    unitary_evolution,
)
from .quantities import (
    GateRefusal,
    Grid,
    Quantity,
    build_quantity,
    classical_ok,
    gated_arithmetic,
    instantaneous_value,
    robertson_bound,
    variance,
)
from .trials import (
    HistorySpec,
    TrialRecord,
    empirical_expectation,
    jump_count,
    sample_history,
    sample_trials,
)

from .scenarios import SCENARIOS, ScenarioReport

__version__ = "0.1.0"
