"""Piecewise-constant time evolution, gate metrics and trajectory analysis."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    DEFAULT_CHARGE_LEVELS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    ControlSequence,
    DeviceParams,
    build_drift,
    build_extended,
    computational_indices,
    control_generators,
)


class NumericalError(RuntimeError):
    """Raised when an eigensolver or a matrix function fails."""


def expm_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i h t)`` via the eigendecomposition of the Hermitian generator."""
    try:
        lam, w = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigh failed for {h.shape} generator:\n{h!r}") from exc
    return (w * np.exp(-1j * t * lam)) @ w.conj().T


@dataclass
class SliceSpectra:
    """Eigendecompositions of all slice Hamiltonians of a sequence.

    Holds everything needed for propagators and their exact derivatives.
    """

    eigvals: np.ndarray  # (N, d)
    eigvecs: np.ndarray  # (N, d, d)
    dt: float

    @property
    def phases(self) -> np.ndarray:
        return np.exp(-1j * self.dt * self.eigvals)

    def propagators(self) -> np.ndarray:
        w = self.eigvecs
        return np.einsum("kij,kj,klj->kil", w, self.phases, w.conj())


def slice_hamiltonians(
    drift: np.ndarray, generators: np.ndarray, offset: np.ndarray, amplitudes: np.ndarray
) -> np.ndarray:
    """``drift + sum_nu (offset_nu + amplitudes[k, nu]) generators[nu]`` for every slice."""
    total = amplitudes + offset[None, :]
    return drift[None] + np.einsum("kn,nij->kij", total, generators)


def diagonalize_slices(hamiltonians: np.ndarray, dt: float) -> SliceSpectra:
    try:
        lam, w = np.linalg.eigh(hamiltonians)
    except np.linalg.LinAlgError as exc:
        bad = [k for k, h in enumerate(hamiltonians) if not np.all(np.isfinite(h))]
        raise NumericalError(f"eigh failed on slice Hamiltonians (non-finite slices: {bad})") from exc
    return SliceSpectra(lam, w, dt)


def chain_product(propagators: np.ndarray) -> np.ndarray:
    """Time-ordered product ``U_N ... U_1``, reduced strictly in slice order."""
    d = propagators.shape[-1]
    u = np.eye(d, dtype=complex)
    for p in propagators:
        u = p @ u
    return u


def forward_products(propagators: np.ndarray) -> np.ndarray:
    """Cumulative products ``X_k = U_k ... U_1`` with ``X_0 = 1``, shape (N+1, d, d)."""
    n, d, _ = propagators.shape
    out = np.empty((n + 1, d, d), dtype=complex)
    out[0] = np.eye(d)
    for k in range(n):
        out[k + 1] = propagators[k] @ out[k]
    return out


def slice_propagators(params: DeviceParams, seq: ControlSequence) -> np.ndarray:
    _check_sequence(params, seq)
    hams = slice_hamiltonians(
        build_drift(params), control_generators(params), np.asarray(params.ng0), seq.amplitudes
    )
    return diagonalize_slices(hams, seq.dt).propagators()


def propagate(params: DeviceParams, seq: ControlSequence) -> tuple[np.ndarray, np.ndarray]:
    """Total propagator of the pseudo-spin model and the per-slice factors.

    Returns ``(U_T, slices)`` with ``U_T = slices[N-1] @ ... @ slices[0]``.
    """
    slices = slice_propagators(params, seq)
    return chain_product(slices), slices


def extended_slice_propagators(
    params: DeviceParams, seq: ControlSequence, charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS
) -> np.ndarray:
    _check_sequence(params, seq)
    totals = seq.total_charges(params)
    hams = np.array([build_extended(params, ng, charge_levels) for ng in totals])
    return diagonalize_slices(hams, seq.dt).propagators()


def propagate_extended(
    params: DeviceParams, seq: ControlSequence, charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS
) -> tuple[np.ndarray, np.ndarray]:
    slices = extended_slice_propagators(params, seq, charge_levels)
    return chain_product(slices), slices


def _check_sequence(params, seq):
    if seq.n_qubits != params.n_qubits:
        raise ValueError(
            f"sequence drives {seq.n_qubits} qubits but the device has {params.n_qubits}"
        )


def trace_fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """Global-phase invariant overlap ``|tr(v^dagger u)| / dim``."""
    return float(abs(np.vdot(v, u)) / u.shape[0])


def frobenius_distance(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.linalg.norm(u - v))


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol))


# -- reduced states ---------------------------------------------------------


def reduced_density_matrix(psi: np.ndarray, qubit: int, n_qubits: int | None = None) -> np.ndarray:
    """Single-qubit density matrix of ``psi`` after tracing out all other qubits."""
    psi = np.asarray(psi, dtype=complex)
    if n_qubits is None:
        n_qubits = int(round(np.log2(psi.size)))
    if psi.size != 2**n_qubits:
        raise ValueError(f"state of size {psi.size} is not a {n_qubits}-qubit state")
    t = np.moveaxis(psi.reshape((2,) * n_qubits), qubit, 0).reshape(2, -1)
    return t @ t.conj().T


def reduced_bloch(psi: np.ndarray, qubit: int, n_qubits: int | None = None) -> np.ndarray:
    """Bloch vector ``(<X>, <Y>, <Z>)`` of one qubit of a pure state."""
    rho = reduced_density_matrix(psi, qubit, n_qubits)
    return np.real([np.trace(rho @ s) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


# -- Weyl chamber -----------------------------------------------------------

# Columns are the magic (Bell) basis (|00>+|11>, i(|00>-|11>), |01>-|10>, i(|01>+|10>))/sqrt2.
# In this basis local gates are real orthogonal and XX, YY, ZZ are diagonal.
MAGIC = np.array(
    [[1, 1j, 0, 0], [0, 0, 1, 1j], [0, 0, -1, 1j], [1, -1j, 0, 0]], dtype=complex
) / np.sqrt(2)


def canonicalize_weyl(c: Sequence[float]) -> np.ndarray:
    """Fold ``(c1, c2, c3)`` into ``pi/2 >= c1 >= c2 >= c3 >= 0``.

    Uses the local-equivalence moves ``c_j -> c_j + pi``, permutations and sign
    flips of two coordinates.  The final ``c3 -> |c3|`` identifies a gate class
    with its mirror image.
    """
    half = np.pi / 2
    c = np.asarray(c, dtype=float)
    c = c - np.pi * np.round(c / np.pi)  # into [-pi/2, pi/2]
    c = c[np.argsort(-np.abs(c))]
    if c[0] < 0:
        c[0], c[2] = -c[0], -c[2]
    if c[1] < 0:
        c[1], c[2] = -c[1], -c[2]
    c = np.abs(c)
    c[np.isclose(c, half, atol=1e-12)] = half
    return c


def weyl_coordinates(u: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Nonlocal coordinates of a two-qubit gate, ``u ~ k1 exp(i/2 (c1 XX + c2 YY + c3 ZZ)) k2``.

    CNOT maps to ``(pi/2, 0, 0)`` and SWAP to ``(pi/2, pi/2, pi/2)``.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValueError(f"expected a 4x4 gate, got {u.shape}")
    if not is_unitary(u, atol=atol):
        raise ValueError("weyl_coordinates requires a unitary matrix")
    u = u / np.linalg.det(u) ** 0.25
    ub = MAGIC.conj().T @ u @ MAGIC
    theta = np.angle(np.linalg.eigvals(ub.T @ ub))
    # det(u) = 1 forces the eigenphases to sum to a multiple of 2 pi.
    k = int(np.round(theta.sum() / (2 * np.pi)))
    theta[np.argmax(theta) if k > 0 else np.argmin(theta)] -= 2 * np.pi * k
    # eigenphases are (c1-c2+c3, -c1+c2+c3, -c1-c2-c3, c1+c2-c3) in some order
    c1 = (theta[0] + theta[3]) / 2
    c2 = (theta[1] + theta[3]) / 2
    c3 = (theta[0] + theta[1]) / 2
    return canonicalize_weyl((c1, c2, c3))


def canonical_gate(c: Sequence[float]) -> np.ndarray:
    """``exp(i/2 (c1 XX + c2 YY + c3 ZZ))``."""
    h = sum(ci * np.kron(s, s) for ci, s in zip(c, (SIGMA_X, SIGMA_Y, SIGMA_Z)))
    return expm_hermitian(h, -0.5)


# -- speed limits -----------------------------------------------------------


@dataclass(frozen=True)
class DurationBounds:
    """Minimal durations (ps) of the elementary rotations a gate must contain."""

    t_zz: tuple[float, ...]
    t_x: tuple[float, ...]

    @property
    def sequential_x(self) -> float:
        """One pi/2 x-rotation per qubit, run back to back."""
        return float(sum(self.t_x))

    @property
    def two_pulse_x(self) -> float:
        """Two pi/2 x-rotations on the slowest qubit, the infimum quoted for CNOT."""
        return 2.0 * float(max(self.t_x))


def duration_bounds(params: DeviceParams) -> DurationBounds:
    """pi/2 rotation times: ``1/(2 E_m)`` under the coupling, ``1/(4 E_J)`` under each sigma_x drift."""
    # energies in GHz -> times in ns; report ps
    t_zz = tuple(1e3 / (2 * em) for em in params.em)
    t_x = tuple(1e3 / (4 * ej) for ej in params.ej)
    return DurationBounds(t_zz=t_zz, t_x=t_x)


# -- trajectories -----------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_slices + 1, dim)
    n_qubits: int
    extended: bool = False
    charge_levels: tuple[int, ...] | None = None
    bloch: np.ndarray | None = field(default=None, repr=False)  # (n_times, n_qubits, 3)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory time grid must be strictly increasing")
        if len(self.times) != len(self.states):
            raise ValueError("one state per time point is required")

    def computational_states(self) -> np.ndarray:
        if not self.extended:
            return self.states
        idx = computational_indices(self.n_qubits, self.charge_levels)
        return self.states[:, idx]

    def leakage(self) -> np.ndarray:
        """Population outside the computational subspace at each time."""
        inside = np.sum(np.abs(self.computational_states()) ** 2, axis=1)
        return np.clip(1.0 - inside, 0.0, 1.0)

    def to_csv(self, path: str | Path) -> None:
        """Rows of ``t_ps, re/im amplitudes..., bx1, by1, bz1, ...``."""
        dim = self.states.shape[1]
        header = ["t_ps"]
        for i in range(dim):
            header += [f"re{i}", f"im{i}"]
        bloch = self.bloch
        if bloch is not None:
            for q in range(bloch.shape[1]):
                header += [f"bx{q + 1}", f"by{q + 1}", f"bz{q + 1}"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t))]
                for a in self.states[k]:
                    row += [repr(float(a.real)), repr(float(a.imag))]
                if bloch is not None:
                    row += [repr(float(v)) for v in bloch[k].ravel()]
                writer.writerow(row)


def simulate_trajectory(
    params: DeviceParams,
    seq: ControlSequence,
    initial: np.ndarray,
    extended: bool = False,
    charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS,
) -> Trajectory:
    """States at every slice boundary for a computational initial state.

    In extended mode the initial state is embedded into the charge basis and
    evolved under the full charge Hamiltonian.
    """
    psi = np.asarray(initial, dtype=complex)
    n = params.n_qubits
    if psi.shape != (2**n,):
        raise ValueError(f"initial state must have {2**n} amplitudes")
    if not np.isclose(np.linalg.norm(psi), 1.0, atol=1e-12):
        raise ValueError("initial state must be normalized")
    if extended:
        levels = tuple(charge_levels)
        idx = computational_indices(n, levels)
        full = np.zeros(len(levels) ** n, dtype=complex)
        full[idx] = psi
        psi = full
        slices = extended_slice_propagators(params, seq, levels)
    else:
        levels = None
        slices = slice_propagators(params, seq)
    states = np.empty((seq.n_slices + 1, psi.size), dtype=complex)
    states[0] = psi
    for k, p in enumerate(slices):
        states[k + 1] = p @ states[k]
    traj = Trajectory(seq.times, states, n, extended, levels)
    if not extended:
        traj.bloch = np.array([[reduced_bloch(s, q, n) for q in range(n)] for s in states])
    return traj


def weyl_trajectory(params: DeviceParams, seq: ControlSequence) -> np.ndarray:
    """``(t_ps, c1, c2, c3)`` rows for the cumulative propagator at each slice boundary."""
    if params.n_qubits != 2:
        raise ValueError("Weyl coordinates are defined for two qubits")
    cumulative = forward_products(slice_propagators(params, seq))
    coords = np.array([weyl_coordinates(u) for u in cumulative])
    return np.column_stack([seq.times, coords])


def write_weyl_csv(rows: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ps", "c1", "c2", "c3"])
        for r in rows:
            writer.writerow([repr(float(v)) for v in r])


def canonical_states(n_qubits: int) -> dict[str, np.ndarray]:
    """Computational basis states labelled by bit strings."""
    out = {}
    for k, bits in enumerate(itertools.product("01", repeat=n_qubits)):
        v = np.zeros(2**n_qubits, dtype=complex)
        v[k] = 1.0
        out["".join(bits)] = v
    return out


def bell_states() -> dict[str, np.ndarray]:
    s = 1 / np.sqrt(2)
    return {
        "phi+": np.array([s, 0, 0, s], dtype=complex),
        "phi-": np.array([s, 0, 0, -s], dtype=complex),
        "psi+": np.array([0, s, s, 0], dtype=complex),
        "psi-": np.array([0, s, -s, 0], dtype=complex),
    }
