"""Dense linear algebra and model primitives.

Everything here works on small dense complex matrices (dimension up to a few
hundred).  Values are immutable after construction: arrays handed out by the
classes below are read-only views, so models and states can be shared freely
between threads.

Units are natural (hbar = 1); Hamiltonian entries are energies and times are
their inverses.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "Tolerances",
    "DEFAULT_TOL",
    "Ket",
    "DensityOperator",
    "StationaryBasis",
    "SystemModel",
    "as_matrix",
    "tensor_product",
    "partial_trace",
    "hermitian_eig",
    "unitary_evolution",
    "evolve_density",
    "load_system",
]


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds shared by every module.

    Thresholds marked relative are compared against ``max(1, ||A||_F)``.
    """

    herm: float = 1e-10  # relative
    trace: float = 1e-10
    orth: float = 1e-10
    eig: float = 1e-10  # relative
    unit: float = 1e-10
    norm: float = 1e-10
    psd: float = 1e-9
    proj: float = 1e-10
    comm: float = 1e-10  # relative
    compat: float = 1e-9
    det: float = 1e-9
    div: float = 1e-12
    op: float = 1e-10
    eps: float = 1e-300

    def override(self, overrides: Mapping[str, float] | None) -> "Tolerances":
        """Return a copy with the named thresholds replaced."""
        if not overrides:
            return self
        names = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(overrides) - names)
        if unknown:
            raise ValueError(f"unknown tolerance name(s): {', '.join(unknown)}")
        values = {}
        for key, val in overrides.items():
            val = float(val)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"tolerance {key!r} must be a finite non-negative number")
            values[key] = val
        return dataclasses.replace(self, **values)


DEFAULT_TOL = Tolerances()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def _entry(x: Any, name: str) -> complex:
    if isinstance(x, (list, tuple)) and len(x) == 2 and all(isinstance(v, (int, float)) for v in x):
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, (int, float, complex, np.number)):
        return complex(x)
    raise ValueError(f"{name}: ragged or non-numeric entries")


def _mixed_entries(a: Any, name: str) -> np.ndarray:
    """Rows mixing plain numbers and ``[re, im]`` pairs."""
    try:
        rows = [[_entry(x, name) for x in row] for row in a]
    except TypeError:
        raise ValueError(f"{name}: ragged or non-numeric entries") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{name}: ragged or non-numeric entries")
    return np.array(rows, dtype=complex)


def as_matrix(a: Any, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D complex array.

    Accepts nested sequences of numbers or of ``[re, im]`` pairs.
    """
    try:
        arr = np.asarray(a)
    except ValueError:
        arr = None
    if arr is None or arr.dtype == object:
        arr = _mixed_entries(a, name)
    if arr.ndim == 3 and arr.shape[-1] == 2 and not np.iscomplexobj(arr):
        arr = arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    arr = arr.astype(complex)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    return arr


def _hermiticity_defect(h: np.ndarray) -> float:
    scale = max(1.0, float(np.linalg.norm(h)))
    return float(np.linalg.norm(h - h.conj().T)) / scale


def _require_hermitian(h: np.ndarray, tol: float, name: str) -> None:
    if h.shape[0] != h.shape[1]:
        raise ValueError(f"{name}: matrix must be square, got {h.shape}")
    defect = _hermiticity_defect(h)
    if defect > tol:
        raise ValueError(f"{name}: not Hermitian (relative defect {defect:.3g})")


@dataclass(frozen=True, eq=False)
class Ket:
    """A state vector.  ``normalized=True`` enforces unit norm."""

    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        v = np.asarray(self.amplitudes)
        if v.ndim == 3 or (v.ndim == 2 and v.shape[-1] == 2 and not np.iscomplexobj(v)):
            v = v[..., 0] + 1j * v[..., 1]
        v = np.asarray(v, dtype=complex).reshape(-1)
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError("ket amplitudes must be finite and non-empty")
        if self.normalized and abs(np.linalg.norm(v) - 1.0) > DEFAULT_TOL.norm:
            raise ValueError(f"ket is not normalized (norm {np.linalg.norm(v):.15g})")
        object.__setattr__(self, "amplitudes", _frozen(v))

    @classmethod
    def normalize(cls, amplitudes: Any) -> "Ket":
        v = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(v / n)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, positive semidefinite, unit-trace matrix.

    Validation runs on construction.  Internal code that already knows the
    result is valid (a conjugation of a valid state) uses :meth:`trusted`.
    """

    matrix: np.ndarray
    tol: Tolerances = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self) -> None:
        m = as_matrix(self.matrix, "density")
        _require_hermitian(m, self.tol.herm, "density")
        tr = np.trace(m)
        if abs(tr - 1.0) > self.tol.trace:
            raise ValueError(f"density: trace is {tr.real:.15g}, expected 1")
        lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
        if lo < -self.tol.psd:
            raise ValueError(f"density: not positive semidefinite (min eigenvalue {lo:.3g})")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def trusted(cls, matrix: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> "DensityOperator":
        """Wrap ``matrix`` without re-validating it."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "matrix", _frozen(matrix))
        object.__setattr__(obj, "tol", tol)
        return obj

    @classmethod
    def from_ket(cls, ket: Any) -> "DensityOperator":
        if not isinstance(ket, Ket):
            ket = Ket(ket)
        return ket.density()

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim) / dim)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


@dataclass(frozen=True, eq=False)
class StationaryBasis:
    """Eigenvalues (ascending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def vector(self, k: int) -> np.ndarray:
        return self.eigenvectors[:, k]

    def eigenspaces(self, atol: float = 1e-9) -> list[list[int]]:
        """Group basis indices into (numerically) degenerate blocks."""
        vals = self.eigenvalues
        if vals.size == 0:
            return []
        scale = max(1.0, float(np.max(np.abs(vals))))
        blocks = [[0]]
        for k in range(1, vals.size):
            if vals[k] - vals[blocks[-1][-1]] <= atol * scale:
                blocks[-1].append(k)
            else:
                blocks.append([k])
        return blocks


def tensor_product(a: Any, b: Any) -> np.ndarray:
    """Kronecker product; kets may be passed as 1-D arrays."""
    return np.kron(np.asarray(a), np.asarray(b))


def partial_trace(rho: DensityOperator, dims: Sequence[int], keep: int | Sequence[int]) -> DensityOperator:
    """Reduce ``rho`` onto the subsystem(s) in ``keep``.

    Parameters
    ----------
    rho : DensityOperator
        State on the full space.
    dims : sequence of int
        Subsystem dimensions; their product must equal ``rho.dim``.
    keep : int or sequence of int
        Subsystem index (or indices, kept in ascending order).
    """
    dims = [int(d) for d in dims]
    if not dims or any(d < 1 for d in dims):
        raise ValueError("dims must be positive integers")
    if int(np.prod(dims)) != rho.dim:
        raise ValueError(f"dims {dims} do not match density dimension {rho.dim}")
    keep_list = sorted({keep} if isinstance(keep, (int, np.integer)) else set(keep))
    if not keep_list or any(k < 0 or k >= len(dims) for k in keep_list):
        raise ValueError(f"keep index out of range for {len(dims)} subsystems")
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    traced = [k for k in range(n) if k not in keep_list]
    # trace out from the highest axis down so remaining axis numbers stay valid
    for k in sorted(traced, reverse=True):
        m = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + m)
    d = int(np.prod([dims[k] for k in keep_list]))
    out = t.reshape(d, d)
    return DensityOperator.trusted(0.5 * (out + out.conj().T), rho.tol)


def _fix_phases(v: np.ndarray) -> np.ndarray:
    # make the largest-magnitude component of each column real and positive
    idx = np.argmax(np.abs(v) > np.abs(v).max(axis=0) * (1 - 1e-9), axis=0)
    ph = v[idx, np.arange(v.shape[1])]
    ph = ph / np.abs(ph)
    return v / ph


def hermitian_eig(h: Any, tol: Tolerances = DEFAULT_TOL) -> StationaryBasis:
    """Eigendecomposition of a Hermitian matrix with a deterministic phase convention.

    Raises ``ValueError`` for non-Hermitian input or if the reconstruction
    residual exceeds ``tol.eig`` (relative to the Frobenius norm).
    """
    h = as_matrix(h, "h")
    _require_hermitian(h, tol.herm, "h")
    hs = 0.5 * (h + h.conj().T)
    vals, vecs = np.linalg.eigh(hs)
    vecs = _fix_phases(vecs)
    recon = vecs @ np.diag(vals) @ vecs.conj().T
    scale = max(1.0, float(np.linalg.norm(hs)))
    if np.linalg.norm(hs - recon) > tol.eig * scale:
        raise ValueError("eigendecomposition failed the reconstruction check")
    vals = np.array(vals, dtype=float)
    vals.setflags(write=False)
    return StationaryBasis(vals, _frozen(vecs))


def _exp_from_eig(vals: np.ndarray, vecs: np.ndarray, t: float) -> np.ndarray:
    return (vecs * np.exp(-1j * t * vals)) @ vecs.conj().T


def unitary_evolution(h: Any, t: float, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """``exp(-i t h)`` computed from the eigendecomposition of ``h``."""
    h = as_matrix(h, "h")
    _require_hermitian(h, tol.herm, "h")
    vals, vecs = np.linalg.eigh(0.5 * (h + h.conj().T))
    return _exp_from_eig(vals, vecs, float(t))


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Finite Hilbert space with a free Hamiltonian ``h0`` and total Hamiltonian ``h``.

    The stationary basis is the eigenbasis of ``h0`` and is frozen at
    construction; proposition index sets refer to its column order.
    """

    subsystem_dims: tuple[int, ...]
    h0: np.ndarray
    h: np.ndarray
    basis: StationaryBasis = field(init=False)
    tol: Tolerances = DEFAULT_TOL
    name: str = ""

    def __post_init__(self) -> None:
        h0 = as_matrix(self.h0, "h0")
        h = as_matrix(self.h, "h")
        _require_hermitian(h0, self.tol.herm, "h0")
        _require_hermitian(h, self.tol.herm, "h")
        if h0.shape != h.shape:
            raise ValueError(f"h0 shape {h0.shape} differs from h shape {h.shape}")
        dims = tuple(int(d) for d in self.subsystem_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError("subsystem_dims must be positive integers")
        if int(np.prod(dims)) != h0.shape[0]:
            raise ValueError(
                f"product of subsystem_dims {list(dims)} = {int(np.prod(dims))} "
                f"does not match matrix dimension {h0.shape[0]}"
            )
        object.__setattr__(self, "subsystem_dims", dims)
        object.__setattr__(self, "h0", _frozen(0.5 * (h0 + h0.conj().T)))
        object.__setattr__(self, "h", _frozen(0.5 * (h + h.conj().T)))
        object.__setattr__(self, "basis", hermitian_eig(self.h0, self.tol))
        vals, vecs = np.linalg.eigh(self.h)
        object.__setattr__(self, "_h_eig", (vals, vecs))

    @classmethod
    def build(cls, h0: Any, h: Any = None, subsystem_dims: Sequence[int] | None = None,
              tol: Tolerances = DEFAULT_TOL, name: str = "") -> "SystemModel":
        """Convenience constructor; ``h`` defaults to ``h0`` and dims to one factor."""
        h0 = as_matrix(h0, "h0")
        h = h0 if h is None else h
        dims = (h0.shape[0],) if subsystem_dims is None else tuple(subsystem_dims)
        return cls(dims, h0, h, tol=tol, name=name)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def unitary(self, t: float) -> np.ndarray:
        """``exp(-i t h)`` for the total Hamiltonian."""
        vals, vecs = self._h_eig
        return _exp_from_eig(vals, vecs, float(t))

    def heisenberg(self, op: np.ndarray, t: float) -> np.ndarray:
        """``U(t)^dagger op U(t)``."""
        if t == 0:
            return np.asarray(op, dtype=complex)
        u = self.unitary(t)
        return u.conj().T @ op @ u

    def evolve(self, rho_matrix: np.ndarray, t: float) -> np.ndarray:
        """``U(t) rho U(t)^dagger`` on a raw matrix."""
        if t == 0:
            return np.asarray(rho_matrix, dtype=complex)
        u = self.unitary(t)
        return u @ rho_matrix @ u.conj().T


def evolve_density(rho: DensityOperator, model: SystemModel, t: float) -> DensityOperator:
    """Schrodinger-picture evolution ``U(t) rho U(t)^dagger``."""
    if rho.dim != model.dim:
        raise ValueError(f"density dimension {rho.dim} does not match model dimension {model.dim}")
    out = model.evolve(rho.matrix, t)
    return DensityOperator.trusted(0.5 * (out + out.conj().T), rho.tol)


def load_system(spec: Mapping[str, Any], tol: Tolerances | None = None) -> SystemModel:
    """Build a :class:`SystemModel` from a scenario mapping.

    Required keys are ``h0``; ``h`` defaults to ``h0`` and ``subsystem_dims``
    to a single factor.  Matrix entries may be numbers or ``[re, im]`` pairs.
    """
    if "h0" not in spec:
        raise ValueError("/h0: required matrix is missing")
    if tol is None:
        tol = DEFAULT_TOL.override(spec.get("tolerances"))
    h0 = as_matrix(spec["h0"], "h0")
    h = as_matrix(spec["h"], "h") if spec.get("h") is not None else h0
    dims = spec.get("subsystem_dims") or [h0.shape[0]]
    return SystemModel(tuple(dims), h0, h, tol=tol, name=str(spec.get("name", "")))
