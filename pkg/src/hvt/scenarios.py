"""Worked examples, each producing a :class:`ScenarioReport`.

Every check records the expected value, the computed value, the tolerance
and a provenance note saying where the expected value comes from (a closed
form, or an independent oracle computed here by a different route).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .compatibility import compat_check
from .probability import (
    Ensemble,
    MisdetectionModel,
    apply_misdetection,
    condition_ensemble,
    conditional,
    is_deterministic,
    joint,
)
from .propositions import ElementaryProposition
from .qcore import DensityOperator, Ket, SystemModel, tensor_product
from .quantities import GateRefusal, Grid, build_quantity, gated_arithmetic
from .trials import HistorySpec, empirical_expectation, sample_trials

__all__ = [
    "Check",
    "ScenarioReport",
    "SCENARIOS",
    "spin_degenerate",
    "singlet_chsh",
    "entangled_pair",
    "decay_toy",
    "cat_chain",
    "gleason_demo",
    "light_quantum",
    "spin_up",
    "to_jsonable",
    "dumps_json",
]

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


# -- report plumbing ----------------------------------------------------------------

def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays, complex numbers and tuples to JSON-ready values.

    Complex values become ``[re, im]``; non-finite floats become strings.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps_json(obj: Any) -> str:
    """Deterministic JSON text; floats use the shortest round-trip repr (at most 17 digits)."""
    return json.dumps(to_jsonable(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


@dataclass(frozen=True)
class Check:
    description: str
    expected: Any
    actual: Any
    passed: bool
    provenance: str
    tolerance: float | None = None

    def to_dict(self) -> dict:
        return {"description": self.description, "expected": self.expected, "actual": self.actual,
                "tolerance": self.tolerance, "pass": self.passed, "provenance": self.provenance}


@dataclass
class ScenarioReport:
    name: str
    tables: dict[str, dict] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    notes: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add_table(self, name: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        self.tables[name] = {"columns": list(columns), "rows": [list(r) for r in rows]}

    def close(self, description: str, expected: float, actual: float, tol: float,
              provenance: str) -> Check:
        ok = bool(np.isfinite(actual) and abs(actual - expected) <= tol)
        return self._add(Check(description, expected, actual, ok, provenance, tol))

    def expect(self, description: str, expected: Any, actual: Any, provenance: str) -> Check:
        return self._add(Check(description, expected, actual, bool(expected == actual), provenance))

    def _add(self, c: Check) -> Check:
        self.checks.append(c)
        return c

    def check(self, description: str) -> Check:
        for c in self.checks:
            if c.description == description:
                return c
        raise KeyError(description)

    def to_dict(self) -> dict:
        return {"name": self.name, "tables": self.tables,
                "checks": [c.to_dict() for c in self.checks], "notes": self.notes}

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def table_csv(self, name: str) -> str:
        t = self.tables[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(t["columns"])
        for row in t["rows"]:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v
                        for v in to_jsonable(row)])
        return buf.getvalue()


# -- spin helpers -------------------------------------------------------------------

def spin_up(u: Sequence[float]) -> np.ndarray:
    """Unit ket with spin up along the unit vector ``u``."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    m = u[0] * SIGMA_X + u[1] * SIGMA_Y + u[2] * SIGMA_Z
    w, v = np.linalg.eigh(m)
    k = v[:, 1]
    return k * np.exp(-1j * np.angle(k[np.argmax(np.abs(k))]))


def _sigma(u: Sequence[float]) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    return u[0] * SIGMA_X + u[1] * SIGMA_Y + u[2] * SIGMA_Z


def _local(op: np.ndarray, site: int) -> np.ndarray:
    eye = np.eye(2)
    return tensor_product(op, eye) if site == 0 else tensor_product(eye, op)


def _spin_prop(label: str, u, up: bool, site: int | None, time: float = 0.0) -> ElementaryProposition:
    k = spin_up(u if up else -np.asarray(u, dtype=float))
    p = np.outer(k, k.conj())
    if site is not None:
        p = _local(p, site)
    return ElementaryProposition(label, None, time, p)


SUB = {0: "₁", 1: "₂"}


def _site_label(name: str, up: bool, site: int) -> str:
    return f"o({name},{'↑' if up else '↓'}){SUB[site]}"


# -- spin in zero field -------------------------------------------------------------

def spin_degenerate(seed: int = 7) -> ScenarioReport:
    """Spin one-half with ``h0 = 0``: compatibility sets and instantaneous values."""
    rep = ScenarioReport("spin_degenerate")
    model = SystemModel.build(np.zeros((2, 2)), name="spin_degenerate")
    ex, ey, ez = (1.0, 0, 0), (0, 1.0, 0), (0, 0, 1.0)
    upx = _spin_prop("o(↑x)", ex, True, None)
    dnx = _spin_prop("o(↓x)", ex, False, None)
    upy = _spin_prop("o(↑y)", ey, True, None)
    either_x = ElementaryProposition("o(↑x)∨o(↓x)", None, 0.0, np.eye(2))
    either_y = ElementaryProposition("o(↑y)∨o(↓y)", None, 0.0, np.eye(2))

    rng = np.random.default_rng(seed)
    g = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho_rand = g @ g.conj().T
    states = {
        "I/2": DensityOperator.maximally_mixed(2),
        "|↑x⟩⟨↑x|": DensityOperator.from_ket(spin_up(ex)),
        "random": DensityOperator(rho_rand / np.trace(rho_rand)),
    }
    rows = []
    for name, rho in states.items():
        r = compat_check(model, rho, [upx, dnx, either_x, either_y])
        rows.append(["{o(↑x), o(↓x), o(↑x)∨o(↓x), o(↑y)∨o(↓y)}", name, r.verdict,
                     r.classification, r.worst_residual])
        rep.expect(f"four-proposition set compatible under rho={name}", "compatible", r.verdict,
                   "orthogonal and always-true occupation propositions")

    rho_x = states["|↑x⟩⟨↑x|"]
    r = compat_check(model, rho_x, [upx, upy])
    rows.append(["{o(↑x), o(↑y)}", "|↑x⟩⟨↑x|", r.verdict, r.classification, r.worst_residual])
    # closed form |<x|y>|^2 (rho_xx - rho_yy) evaluated directly
    vx, vy = spin_up(ex), spin_up(ey)
    formula = abs(np.vdot(vx, vy)) ** 2 * abs(
        np.real(np.vdot(vx, rho_x.matrix @ vx)) - np.real(np.vdot(vy, rho_x.matrix @ vy)))
    rep.expect("pair {o(↑x), o(↑y)} under |↑x⟩⟨↑x| is incompatible", "incompatible", r.verdict,
               "second-order formula |<phi1|phi2>|^2 (rho11 - rho22) = 1/4")
    rep.close("pair residual equals second-order formula", formula, r.worst_residual, 1e-12,
              "closed form |<up_x|up_y>|^2 (1 - 1/2) = 0.25")
    r2 = compat_check(model, states["I/2"], [upx, upy])
    rows.append(["{o(↑x), o(↑y)}", "I/2", r2.verdict, r2.classification, r2.worst_residual])
    rep.expect("pair {o(↑x), o(↑y)} under I/2 is compatible of type II", ("compatible", "type_ii"),
               (r2.verdict, r2.classification), "equal diagonal elements, non-commuting projectors")
    rep.add_table("compatibility", ["set", "rho", "verdict", "classification", "worst_residual"], rows)

    ens_z = Ensemble(DensityOperator.from_ket([1, 0]), "|↑z⟩")
    grid = Grid((-0.5, 0.0, 0.5))
    quantities = {}
    vrows = []
    for axis, u, sig in (("x", ex, SIGMA_X), ("y", ey, SIGMA_Y), ("z", ez, SIGMA_Z)):
        q = build_quantity(model, sig / 2, grid, f"S_{axis}",
                           {1: f"o(↑{axis})", -1: f"o(↓{axis})"})
        quantities[axis] = q
        for cell in sorted(q.cell_propositions, reverse=True):
            vrows.append([f"S_{axis}", q.cell_propositions[cell].label, q.value(cell)])
    rep.add_table("instantaneous_values", ["quantity", "occupied_cell", "value"], vrows)
    refused, msg = False, ""
    try:
        gated_arithmetic("add", quantities["x"], quantities["y"], ens_z, 0.0)
    except GateRefusal as e:
        refused, msg = True, str(e)
    rep.expect("simultaneous S_x and S_y values refused by the gate", True, refused,
               "non-commuting cell projectors fail the compatibility rule")
    rep.notes["gate_log"] = msg
    return rep


# -- singlet and CHSH ---------------------------------------------------------------

SQ2 = math.sqrt(2.0)
CHSH_DIRECTIONS = {
    "a": np.array([0.0, 0.0, 1.0]),
    "b": -np.array([1.0, 0.0, 1.0]) / SQ2,
    "c": np.array([1.0, 0.0, 0.0]),
    "d": np.array([-1.0, 0.0, 1.0]) / SQ2,
}
SINGLET = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / SQ2


def singlet_model() -> tuple[SystemModel, Ensemble]:
    model = SystemModel.build(np.zeros((4, 4)), subsystem_dims=(2, 2), name="singlet")
    return model, Ensemble(DensityOperator.from_ket(SINGLET), "singlet")


def singlet_joint(model: SystemModel, ens: Ensemble, u1, u2, s1: bool, s2: bool,
                  t: float = 0.0) -> float:
    """Joint probability of spin outcomes ``s1`` along ``u1`` (site 1) and ``s2`` along ``u2`` (site 2)."""
    a = _spin_prop("a", u1, s1, 0, t)
    b = _spin_prop("b", u2, s2, 1, t)
    return joint(ens, model, [a, b])


def singlet_chsh(n_trials: int = 10_000, seed: int = 2024) -> ScenarioReport:
    """Singlet joint law, correlators, CHSH value, deterministic relations and the CHSH gate."""
    rep = ScenarioReport("singlet_chsh")
    model, ens = singlet_model()
    dirs = CHSH_DIRECTIONS
    pairs = [("A", "a", "B", "b"), ("C", "c", "B", "b"), ("C", "c", "D", "d"), ("A", "a", "D", "d")]
    rows, corr = [], {}
    for n1, d1, n2, d2 in pairs:
        u1, u2 = dirs[d1], dirs[d2]
        dot = float(u1 @ u2)
        e = 0.0
        for s1 in (True, False):
            for s2 in (True, False):
                p = singlet_joint(model, ens, u1, u2, s1, s2)
                sign = 1 if s1 == s2 else -1
                expected = (1 - sign * dot) / 4
                e += sign * p
                rows.append([f"{n1}({d1})", f"{n2}({d2})", "↑" if s1 else "↓", "↑" if s2 else "↓",
                             p, expected])
                rep.close(f"joint {n1}({d1}){'↑' if s1 else '↓'} {n2}({d2}){'↑' if s2 else '↓'}",
                          expected, p, 1e-12, "singlet joint law (1 ∓ u1·u2)/4")
        corr[n1 + n2] = e
        rep.close(f"correlator <{n1}({d1}){n2}({d2})>", -dot, e, 1e-12,
                  "correlator -u1·u2 assembled from the four joints")
    rep.add_table("joint", ["site1", "site2", "outcome1", "outcome2", "joint", "closed_form"], rows)
    chsh = corr["AB"] + corr["CB"] + corr["CD"] - corr["AD"]
    rep.close("CHSH combination <AB> + <BC> + <CD> - <DA>", 2 * SQ2, chsh, 1e-12,
              "closed form 2*sqrt(2) for the four chosen directions")
    rep.notes["chsh"] = chsh

    # per-trial arithmetic gate
    grid = Grid((-1.0, 0.0, 1.0))
    quant = {}
    for name, d, site in (("A", "a", 0), ("B", "b", 1), ("C", "c", 0), ("D", "d", 1)):
        quant[name] = build_quantity(model, _local(_sigma(dirs[d]), site), grid, name,
                                     {1: _site_label(d, True, site), -1: _site_label(d, False, site)})
    products = {}
    for n1, _, n2, _ in pairs:
        products[n1 + n2] = gated_arithmetic("mul", quant[n1], quant[n2], ens, 0.0, f"{n1}{n2}")
    rep.expect("cross-site products A·B, C·B, C·D, A·D allowed", 4, len(products),
               "cross-site projectors commute")
    refusal = None
    try:
        s = gated_arithmetic("add", products["AB"], products["CB"], ens, 0.0)
        s = gated_arithmetic("add", s, products["CD"], ens, 0.0)
        gated_arithmetic("add", s, products["AD"], ens, 0.0)
    except GateRefusal as e:
        refusal = e
    allowed_pairs = [{_site_label("a", True, 0), _site_label("c", True, 0)},
                     {_site_label("b", True, 1), _site_label("d", True, 1)}]
    pair = set(refusal.pair) if refusal is not None and refusal.pair else None
    rep.expect("per-trial CHSH sum refused by the gate", True, refusal is not None,
               "same-site spin projectors along different directions fail compatibility")
    rep.expect("failing pair is a same-site pair of different directions", True,
               pair in allowed_pairs, "non-commuting pair inside the failing sub-chain")
    rep.notes["gate_log"] = str(refusal) if refusal else ""
    rep.notes["failing_pair"] = sorted(pair) if pair else None

    # deterministic relations at a common direction
    drows = []
    for d, u in dirs.items():
        up2 = _spin_prop(_site_label(d, True, 1), u, True, 1)
        dn1 = _spin_prop(_site_label(d, False, 0), u, False, 0)
        c1 = conditional(ens, model, dn1, up2)
        c2 = conditional(ens, model, up2, dn1)
        rep.close(f"Pr({dn1.label} | {up2.label})", 1.0, c1, 1e-9, "trace formula, common direction")
        rep.close(f"Pr({up2.label} | {dn1.label})", 1.0, c2, 1e-9, "trace formula, common direction")
        cells = [
            _spin_prop("uu", u, True, 0).projector(model) @ up2.projector(model),
            _spin_prop("ud", u, True, 0).projector(model) @ (np.eye(4) - up2.projector(model)),
            dn1.projector(model) @ up2.projector(model),
            dn1.projector(model) @ (np.eye(4) - up2.projector(model)),
        ]
        spec = HistorySpec((0.0,), (tuple(cells),))
        trials = sample_trials(ens, model, spec, n_trials, seed)
        x_up2 = lambda tr: int(tr.outcomes[0] in (0, 2))
        x_dn1 = lambda tr: int(tr.outcomes[0] in (2, 3))
        violations = sum(1 for tr in trials if x_up2(tr) != x_dn1(tr))
        m_prod = empirical_expectation(trials, lambda tr: x_up2(tr) * x_dn1(tr)).mean
        m_up2 = empirical_expectation(trials, x_up2).mean
        m_dn1 = empirical_expectation(trials, x_dn1).mean
        drows.append([d, n_trials, violations, m_prod, m_up2, m_dn1])
        rep.expect(f"zero violations of x{up2.label} = x{dn1.label} over {n_trials} trials", 0,
                   violations, "deterministic relation at a common direction")
        rep.expect(f"mean of product equals means of factors ({d})", True,
                   m_prod == m_up2 == m_dn1, "per-trial identity of the logical variables")
    rep.add_table("deterministic_sampling",
                  ["direction", "trials", "violations", "mean_product", "mean_up2", "mean_down1"], drows)
    return rep


# -- entangled pair -----------------------------------------------------------------

def entangled_pair(c: Sequence[complex]) -> ScenarioReport:
    """Schmidt-form state ``sum_chi c_chi |chi>|chi>`` with ``h0 = 0``."""
    c = np.asarray(c, dtype=complex)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("need at least two Schmidt coefficients")
    norm = float(np.sum(np.abs(c) ** 2))
    if abs(norm - 1.0) > 1e-10:
        raise ValueError(f"Schmidt coefficients are not normalized (sum |c|^2 = {norm:.15g})")
    n = c.size
    rep = ScenarioReport("entangled_pair")
    model = SystemModel.build(np.zeros((n * n, n * n)), subsystem_dims=(n, n), name="entangled_pair")
    psi = sum(c[k] * tensor_product(np.eye(n)[k], np.eye(n)[k]) for k in range(n))
    ens = Ensemble(DensityOperator.from_ket(psi), "entangled")
    eye = np.eye(n)

    def site(k: int, s: int) -> ElementaryProposition:
        p = np.outer(eye[k], eye[k])
        op = tensor_product(p, eye) if s == 0 else tensor_product(eye, p)
        return ElementaryProposition(f"o(φ{k + 1}){SUB[s]}", None, 0.0, op)

    rows = []
    for k1 in range(n):
        for k2 in range(n):
            p = joint(ens, model, [site(k1, 0), site(k2, 1)])
            expected = abs(c[k1]) ** 2 if k1 == k2 else 0.0
            rows.append([k1 + 1, k2 + 1, p, expected])
            rep.close(f"joint P({k1 + 1},{k2 + 1})", expected, p, 1e-12,
                      "closed form |c_chi|^2 delta delta")
    rep.add_table("joint", ["chi1", "chi2", "joint", "closed_form"], rows)
    mrows = []
    for k in range(n):
        a, b = site(k, 0), site(k, 1)
        pa, pb = joint(ens, model, a), joint(ens, model, b)
        weight = abs(c[k]) ** 2
        if weight > ens.rho0.tol.div:
            holds = bool(is_deterministic(ens, model, a, b))
            note = "conditionals equal one"
        else:
            # both logical variables vanish in every trial
            holds = pa <= ens.rho0.tol.div and pb <= ens.rho0.tol.div
            note = "trivial: both marginals zero"
        mrows.append([k + 1, pa, pb, holds, note])
        rep.expect(f"x{a.label} = x{b.label} deterministic", True, holds,
                   "Schmidt-form correlation, " + note)
    rep.add_table("marginals", ["chi", "marginal_1", "marginal_2", "deterministic", "note"], mrows)
    return rep


# -- decay toy ----------------------------------------------------------------------

@dataclass(frozen=True)
class DecayModel:
    """Emitter (raw index 0) coupled to an evenly spaced comb of bath modes."""

    model: SystemModel
    n_modes: int
    coupling: float
    detuning_span: float
    frequencies: np.ndarray

    @property
    def spacing(self) -> float:
        return self.detuning_span / self.n_modes

    @property
    def golden_rule_rate(self) -> float:
        """``2 pi g^2 rho`` with mode density ``rho = n_modes / span``."""
        return 2 * math.pi * self.coupling ** 2 / self.spacing

    @property
    def revival_time(self) -> float:
        return 2 * math.pi / self.spacing

    def bound(self, t: float = 0.0) -> ElementaryProposition:
        p = np.zeros((self.model.dim, self.model.dim))
        p[0, 0] = 1.0
        return ElementaryProposition("o(bound)", None, t, p)

    def scattering(self, t: float = 0.0) -> ElementaryProposition:
        p = np.eye(self.model.dim)
        p[0, 0] = 0.0
        return ElementaryProposition("o(scattering)", None, t, p)

    def initial(self) -> Ensemble:
        rho = np.zeros((self.model.dim, self.model.dim))
        rho[0, 0] = 1.0
        return Ensemble(DensityOperator(rho), "emitter excited")


def build_decay_model(n_modes: int = 64, coupling: float | None = None,
                      detuning_span: float = 1.0) -> DecayModel:
    """Single-excitation sector of an emitter and ``n_modes`` bath modes.

    Mode frequencies sit at the centres of ``n_modes`` equal bins spanning
    ``detuning_span`` around the emitter.  The default coupling makes the
    golden-rule rate three times the mode spacing.
    """
    if n_modes < 8:
        raise ValueError("n_modes must be at least 8")
    if detuning_span <= 0:
        raise ValueError("detuning_span must be positive")
    spacing = detuning_span / n_modes
    if coupling is None:
        coupling = spacing * math.sqrt(3.0 / (2 * math.pi))
    if coupling <= 0:
        raise ValueError("coupling must be positive")
    w = -detuning_span / 2 + (np.arange(n_modes) + 0.5) * spacing
    h0 = np.diag(np.concatenate([[0.0], w]))
    h = h0.copy()
    h[0, 1:] = coupling
    h[1:, 0] = coupling
    model = SystemModel.build(h0, h, name="decay_toy")
    return DecayModel(model, n_modes, float(coupling), float(detuning_span), w)


def integrate_survival(dm: DecayModel, times: Sequence[float]) -> np.ndarray:
    """Survival ``|c_e(t)|^2`` by direct integration of the amplitude equations."""
    n = dm.n_modes
    g, w = dm.coupling, dm.frequencies

    def rhs(_t, y):
        ce = y[0] + 1j * y[1]
        ck = y[2:2 + n] + 1j * y[2 + n:]
        dce = -1j * g * ck.sum()
        dck = -1j * (w * ck + g * ce)
        return np.concatenate([[dce.real, dce.imag], dck.real, dck.imag])

    y0 = np.zeros(2 + 2 * n)
    y0[0] = 1.0
    sol = solve_ivp(rhs, (0.0, float(max(times))), y0, t_eval=np.asarray(times, float),
                    rtol=1e-10, atol=1e-12, method="DOP853")
    return sol.y[0] ** 2 + sol.y[1] ** 2


def fit_rate(times: Sequence[float], survival: Sequence[float]) -> float:
    """Decay rate from a straight-line fit of ``log(survival)`` against time."""
    t = np.asarray(times, float)
    s = np.asarray(survival, float)
    keep = s > 1e-300
    slope, _ = np.polyfit(t[keep], np.log(s[keep]), 1)
    return -float(slope)


def decay_toy(n_modes: int = 64, coupling: float | None = None, detuning_span: float = 1.0,
              window: float | None = None, n_points: int = 200) -> ScenarioReport:
    """Emitter survival before the revival time, fitted against the golden-rule rate."""
    dm = build_decay_model(n_modes, coupling, detuning_span)
    gamma = dm.golden_rule_rate
    window = 3.0 / gamma if window is None else float(window)
    rep = ScenarioReport("decay_toy")
    rep.notes.update({"n_modes": n_modes, "coupling": dm.coupling, "detuning_span": detuning_span,
                      "golden_rule_rate": gamma, "revival_time": dm.revival_time, "window": window})
    within = window < dm.revival_time
    rep.expect("fit window ends before the revival time", True, within,
               "revival time 2*pi / mode spacing")
    if not within:
        rep.notes["flag"] = "window exceeds revival time"
    ens = dm.initial()
    times = np.linspace(0.0, window, n_points)
    survival = np.array([joint(ens, dm.model, dm.bound(t)) for t in times])
    ionized = np.array([joint(ens, dm.model, [dm.scattering(t), dm.bound(0.0)]) for t in times])
    gamma_fit = fit_rate(times, survival)
    oracle = integrate_survival(dm, times)
    rep.close("survival at t = 0", 1.0, float(survival[0]), 1e-12, "initial state is the emitter")
    rep.close("survival matches direct integration of the amplitude equations", 0.0,
              float(np.max(np.abs(survival - oracle))), 1e-7, "independent ODE integration oracle")
    rep.close("survival plus ionized probability equals one", 0.0,
              float(np.max(np.abs(survival + ionized - 1.0))), 1e-12, "exhaustive bound/scattering split")
    rep.expect("survival non-increasing before the revival time", True,
               bool(np.all(np.diff(survival) <= 1e-12)), "numerical monotonicity check")
    rep.close("fitted rate relative to golden-rule rate", 1.0, gamma_fit / gamma, 0.10,
              "golden-rule rate 2*pi*g^2*(mode density)")
    rep.notes["fitted_rate"] = gamma_fit
    rep.add_table("survival", ["t", "survival", "ionized", "ode_survival", "exp_golden", "exp_fit"],
                  [[float(t), float(s), float(i), float(o), math.exp(-gamma * t), math.exp(-gamma_fit * t)]
                   for t, s, i, o in zip(times, survival, ionized, oracle)])
    return rep


# -- cat chain ----------------------------------------------------------------------

def cat_chain(gamma: float = 0.05, p_tn: float = 0.1, p_fp: float = 0.02,
              times: Sequence[float] | None = None, n_modes: int = 64, n_trials: int = 2000,
              seed: int = 11) -> ScenarioReport:
    """Decay, detector output and cat linked by deterministic relations.

    The cat's two states are tagged onto the emitter: 'alive' is the
    emitter's excited state and 'dead' the same proposition as 'ionized'
    (scattering state now, bound state at time zero).  The detector output
    carries independent miss and false-alarm errors.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    spacing = gamma / 3.0
    coupling = math.sqrt(gamma * spacing / (2 * math.pi))
    dm = build_decay_model(n_modes, coupling, spacing * n_modes)
    model, ens = dm.model, dm.initial()
    if times is None:
        times = list(np.linspace(0.0, 3.0 / gamma, 7)[1:])
    times = sorted(float(t) for t in times)
    if times[-1] >= dm.revival_time:
        raise ValueError("times extend past the revival time of the bath")
    m = MisdetectionModel(p_tn, p_fp)
    rep = ScenarioReport("cat_chain")
    rep.notes.update({"gamma": gamma, "p_tn": p_tn, "p_fp": p_fp, "times": times})
    rows = []
    alive_curve = []
    for t in times:
        alive = joint(ens, model, dm.bound(t))
        dead = joint(ens, model, [dm.scattering(t), dm.bound(0.0)])
        observed = apply_misdetection(dead, m)
        alive_curve.append(alive)
        rows.append([t, alive, dead, observed, math.exp(-gamma * t)])
        rep.close(f"alive + dead = 1 at t={t:.6g}", 1.0, alive + dead, 1e-12,
                  "dead is the negation of alive given the bound state at time zero")
        rep.close(f"observed output at t={t:.6g}", (1 - p_tn) * dead + p_fp * (1 - dead), observed,
                  1e-15, "independent miss/false-alarm composition")
        rep.close(f"observed output near (1 - p_tn) P(ionized) + p_fp at t={t:.6g}",
                  (1 - p_tn) * dead + p_fp, observed, p_fp * dead + 1e-15,
                  "small-error approximation; differs by p_fp * P(ionized)")
    rep.add_table("chain", ["t", "alive", "dead", "output_observed", "exp_decay"], rows)
    rate = fit_rate([0.0] + times, [1.0] + alive_curve)
    rep.close("fitted survival rate relative to gamma", 1.0, rate / gamma, 0.10,
              "exponential decay law with the calibrated rate")

    t_last = times[-1]
    cond = condition_ensemble(ens, model, dm.bound(t_last))
    rho_t = cond.at(model, t_last).matrix
    target = np.zeros_like(rho_t)
    target[0, 0] = 1.0
    rep.close("conditioning on alive leaves the cat alive and the emitter excited", 0.0,
              float(np.linalg.norm(rho_t - target)), 1e-10, "projection onto the alive subspace")

    cells = (dm.bound().projector(model), dm.scattering().projector(model))
    spec = HistorySpec.repeated([0.0] + times, cells)
    trials = sample_trials(ens, model, spec, n_trials, seed)
    bad = 0
    for tr in trials:
        for t in times:
            x_alive = tr.x(t, 0)
            x_dead = tr.x(t, 1) * tr.x(0.0, 0)
            bad += x_alive * x_dead
    rep.expect("x(dead) x(alive) = 0 in every sampled trial", 0, bad, "exclusive occupation")
    st = empirical_expectation(trials, lambda tr: tr.x(t_last, 1) * tr.x(0.0, 0),
                               exact=float(rows[-1][2]))
    rep.expect("sampled dead fraction within 4 standard errors of the trace formula", True,
               abs(st.z_score) < 4, "trace formula for the dead proposition")
    rep.notes["sampled_dead"] = st.to_dict()
    return rep


# -- Gleason-style contradiction ------------------------------------------------------

def gleason_demo(psi: Any, candidates: Sequence[Any], weights: Sequence[float] | None = None) -> ScenarioReport:
    """Weighted mean of ``|<psi|Omega_k>|^2`` over candidate states.

    The hidden-state assumptions require the mean to equal one, which holds
    only if every candidate equals ``psi`` up to a phase.
    """
    psi = psi if isinstance(psi, Ket) else Ket(psi)
    cands = [c if isinstance(c, Ket) else Ket.normalize(c) for c in candidates]
    if not cands:
        raise ValueError("need at least one candidate")
    if any(c.dim != psi.dim for c in cands):
        raise ValueError("candidate dimension differs from psi")
    w = np.full(len(cands), 1.0 / len(cands)) if weights is None else np.asarray(weights, float)
    if w.shape != (len(cands),) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per candidate")
    w = w / w.sum()
    overlaps = np.array([abs(np.vdot(psi.amplitudes, c.amplitudes)) ** 2 for c in cands])
    mean = float(w @ overlaps)
    direct = 0.0
    for wk, c in zip(w, cands):
        amp = sum(np.conj(a) * b for a, b in zip(psi.amplitudes, c.amplitudes))
        direct += wk * (amp.real ** 2 + amp.imag ** 2)
    consistent = bool(np.all(np.abs(overlaps - 1.0) < 1e-10))
    rep = ScenarioReport("gleason_demo")
    rep.add_table("overlaps", ["candidate", "weight", "overlap"],
                  [[k, float(wk), float(o)] for k, (wk, o) in enumerate(zip(w, overlaps))])
    rep.close("weighted mean overlap matches direct sum", direct, mean, 1e-12, "arithmetic oracle")
    rep.notes.update({"mean_overlap": mean, "consistent": consistent,
                      "contradiction": not consistent})
    rep.expect("mean overlap equals one only when every overlap is one", consistent,
               abs(mean - 1.0) < 1e-10, "overlaps are at most one; the mean saturates only if all do")
    return rep


# -- light quantum ------------------------------------------------------------------

def coherent_cutoff(alpha: complex) -> int:
    a = abs(alpha)
    return int(math.ceil(a * a + 10 * a + 20))


def coherent_amplitudes(alpha: complex, n_max: int) -> tuple[np.ndarray, float]:
    """Truncated coherent-state amplitudes and the discarded tail mass."""
    n = np.arange(n_max + 1)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    a = abs(alpha)
    if a == 0:
        amps = np.zeros(n_max + 1, dtype=complex)
        amps[0] = 1.0
        return amps, 0.0
    mag = np.exp(-a * a / 2 + n * math.log(a) - 0.5 * log_fact)
    amps = mag * np.exp(1j * np.angle(alpha) * n)
    tail = max(0.0, 1.0 - float(np.sum(mag ** 2)))
    return amps, tail


@dataclass(frozen=True)
class LightModel:
    model: SystemModel
    n_max: int

    def _op(self, atom: np.ndarray | None, field_: np.ndarray | None) -> np.ndarray:
        a = np.eye(2) if atom is None else atom
        f = np.eye(self.n_max + 1) if field_ is None else field_
        return tensor_product(a, f)

    def atom(self, excited: bool, t: float) -> ElementaryProposition:
        p = np.diag([0.0, 1.0]) if excited else np.diag([1.0, 0.0])
        return ElementaryProposition("o(excited)" if excited else "o(ground)", None, t, self._op(p, None))

    def photons(self, n: int, t: float) -> ElementaryProposition:
        p = np.zeros((self.n_max + 1, self.n_max + 1))
        p[n, n] = 1.0
        return ElementaryProposition("o(vac)" if n == 0 else f"o({n})", None, t, self._op(None, p))

    def absorbed(self, t: float) -> list[ElementaryProposition]:
        return [self.photons(0, t), self.photons(1, 0.0)]

    def ionized(self, t: float) -> list[ElementaryProposition]:
        return [self.atom(True, t), self.atom(False, 0.0)]


def build_light_model(coupling: float, n_max: int, omega: float = 1.0) -> LightModel:
    """Two-level atom (ground, excited) times a mode truncated at ``n_max`` photons, resonant RWA."""
    nf = n_max + 1
    a = np.diag(np.sqrt(np.arange(1, nf)), 1)
    sp = np.array([[0.0, 0.0], [1.0, 0.0]])  # raises ground -> excited
    h0 = omega * (tensor_product(np.eye(2), a.T @ a) + tensor_product(sp @ sp.T, np.eye(nf)))
    hint = coupling * (tensor_product(sp, a) + tensor_product(sp.T, a.T))
    return LightModel(SystemModel.build(h0, h0 + hint, (2, nf), name="light_quantum"), n_max)


def light_quantum(field_mode: str = "fock1", coupling: float = 0.05, t_max: float = 1.0,
                  alpha: complex = 1.0, n_max: int | None = None, n_times: int = 11) -> ScenarioReport:
    """Absorption versus ionization probabilities for a Fock or coherent field.

    ``field_mode`` is ``"fock1"`` (one photon) or ``"coherent"`` (amplitude
    ``alpha``).  For the coherent field the ratio P(absorbed)/P(ionized) is
    also evaluated at ``coupling * t`` shrinking by one and two decades.
    """
    if field_mode not in ("fock1", "coherent"):
        raise ValueError("field_mode must be 'fock1' or 'coherent'")
    rep = ScenarioReport("light_quantum")
    if field_mode == "fock1":
        n_max = 2 if n_max is None else n_max
        amps = np.zeros(n_max + 1, dtype=complex)
        amps[1] = 1.0
        tail = 0.0
    else:
        need = coherent_cutoff(alpha)
        n_max = need if n_max is None else n_max
        amps, tail = coherent_amplitudes(alpha, n_max)
        if tail >= 1e-8:
            raise ValueError(f"truncation too small: tail mass {tail:.3g} at n_max={n_max}")
        amps = amps / np.linalg.norm(amps)
    lm = build_light_model(coupling, n_max)
    psi0 = tensor_product(np.array([1.0, 0.0]), amps)
    ens = Ensemble(DensityOperator.from_ket(psi0), field_mode)
    rep.notes.update({"field_mode": field_mode, "coupling": coupling, "t_max": t_max,
                      "n_max": n_max, "tail_mass": tail})

    def probs(t: float) -> tuple[float, float]:
        return joint(ens, lm.model, lm.absorbed(t)), joint(ens, lm.model, lm.ionized(t))

    rows = []
    for t in np.linspace(0.0, t_max, n_times):
        pa, pi = probs(float(t))
        rows.append([float(t), pa, pi])
    rep.add_table("probabilities", ["t", "absorbed", "ionized"], rows)
    if field_mode == "fock1":
        diff = max(abs(pa - pi) for _, pa, pi in rows)
        rep.close("P(absorbed) = P(ionized) for a one-photon field", 0.0, diff, 1e-12,
                  "closed two-state subspace {|ground,1>, |excited,0>}")
        return rep
    target = math.exp(-abs(alpha) ** 2)
    rep.notes["vacuum_overlap"] = target
    if abs(alpha) == 0:
        rep.close("P(ionized) stays zero for the vacuum", 0.0, max(pi for _, _, pi in rows), 1e-15,
                  "no excitation available")
        return rep
    drift = []
    for k in range(3):
        t = t_max * 10.0 ** (-k)
        pa, pi = probs(t)
        ratio = pa / pi
        drift.append([coupling * t, ratio, target, abs(ratio / target - 1.0)])
    rep.add_table("ratio_drift", ["coupling_t", "ratio", "vacuum_overlap", "relative_error"], drift)
    errs = [r[3] for r in drift]
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    rep.notes["monotone_convergence"] = monotone
    rep.expect("relative error shrinks monotonically with coupling*t", True, monotone,
               "first-order factorization becomes exact as coupling*t -> 0")
    rep.close("ratio P(absorbed)/P(ionized) at the smallest coupling*t", 1.0, drift[-1][1] / target,
              0.05, "vacuum overlap exp(-|alpha|^2)")
    return rep


SCENARIOS: dict[str, Callable[..., ScenarioReport]] = {
    "spin_degenerate": spin_degenerate,
    "singlet_chsh": singlet_chsh,
    "entangled_pair": lambda: entangled_pair([math.sqrt(0.3), math.sqrt(0.7)]),
    "decay_toy": decay_toy,
    "cat_chain": cat_chain,
    "gleason_demo": lambda: gleason_demo([math.sqrt(0.5), math.sqrt(0.5)], [[1, 0], [0, 1]]),
    "light_quantum": light_quantum,
    "light_quantum_coherent": lambda: light_quantum("coherent", alpha=1.0),
}
