"""Hamiltonians for linear chains of capacitively coupled Josephson charge qubits.

Energies are given as E/h in GHz and times in ps.  All matrices returned by
this module are in angular units (rad/ps), so that ``expm(-1j * H * t)`` with
``t`` in ps is the propagator.

Basis ordering is big-endian: qubit 0 is the most significant tensor factor.
Pseudo-spin convention: ``|0>`` is the island with no excess Cooper pair,
``sigma_z = |0><0| - |1><1|`` and the excess-charge number operator on the
computational subspace is ``n = (1 - sigma_z) / 2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

GHZ_TO_RAD_PER_PS = 2.0 * np.pi * 1e-3

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])

DEFAULT_CHARGE_LEVELS = (-1, 0, 1, 2)


class ConfigError(ValueError):
    """Invalid device or run configuration."""


@dataclass(frozen=True)
class DeviceParams:
    """Device energies of an N-qubit nearest-neighbour charge-qubit chain.

    Parameters
    ----------
    ec, ej : sequence of float
        Per-qubit charging and Josephson energies E/h in GHz.
    em : sequence of float
        Coupling energies E_m/h in GHz, one per adjacent pair (length N - 1).
    ng0 : sequence of float
        Static gate-charge offsets, dimensionless, in [0, 1].
    strict : bool
        If False, zero energies are accepted (decoupled or E_J -> 0 limits).
    """

    ec: tuple[float, ...]
    ej: tuple[float, ...]
    em: tuple[float, ...]
    ng0: tuple[float, ...]
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        for name in ("ec", "ej", "em", "ng0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        n = len(self.ec)
        if n < 1:
            raise ConfigError("at least one qubit is required")
        if len(self.ej) != n or len(self.ng0) != n:
            raise ConfigError(
                f"ec, ej and ng0 must all have length n_qubits={n} "
                f"(got {len(self.ec)}, {len(self.ej)}, {len(self.ng0)})"
            )
        if len(self.em) != n - 1:
            raise ConfigError(f"em must have length n_qubits - 1 = {n - 1}, got {len(self.em)}")
        for name in ("ec", "ej", "em"):
            values = getattr(self, name)
            if any(not np.isfinite(v) or v < 0 or (self.strict and v == 0) for v in values):
                raise ConfigError(f"{name} energies must be strictly positive, got {values}")
        if any(not 0.0 <= v <= 1.0 for v in self.ng0):
            raise ConfigError(f"ng0 offsets must lie in [0, 1], got {self.ng0}")

    @property
    def n_qubits(self) -> int:
        return len(self.ec)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def neighbours(self, qubit: int) -> list[tuple[int, float]]:
        """(neighbour index, coupling energy) pairs of ``qubit`` in the chain."""
        out = []
        if qubit > 0:
            out.append((qubit - 1, self.em[qubit - 1]))
        if qubit < self.n_qubits - 1:
            out.append((qubit + 1, self.em[qubit]))
        return out

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "ec_ghz": list(self.ec),
            "ej_ghz": list(self.ej),
            "em_ghz": list(self.em),
            "ng0": list(self.ng0),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceParams":
        """Build from the JSON schema ``{n_qubits, ec_ghz, ej_ghz, em_ghz, ng0}``."""
        missing = [k for k in ("n_qubits", "ec_ghz", "ej_ghz", "em_ghz", "ng0") if k not in data]
        if missing:
            raise ConfigError(f"device block is missing key(s): {', '.join(missing)}")
        params = cls(ec=data["ec_ghz"], ej=data["ej_ghz"], em=data["em_ghz"], ng0=data["ng0"])
        if int(data["n_qubits"]) != params.n_qubits:
            raise ConfigError(
                f"n_qubits={data['n_qubits']} does not match {params.n_qubits} entries in ec_ghz"
            )
        return params

    @classmethod
    def from_json(cls, path: str | Path) -> "DeviceParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


#: Two-qubit parameter set of the CNOT experiment (energies in GHz).
CNOT_PARAMS = DeviceParams(ec=(140.2, 162.2), ej=(10.9, 9.9), em=(23.0,), ng0=(0.24, 0.26))

#: Three-qubit chain used for the Toffoli gate.
TOFFOLI_PARAMS = DeviceParams(
    ec=(140.2, 120.9, 184.3), ej=(10.9, 9.9, 9.4), em=(23.0, 23.0), ng0=(0.24, 0.26, 0.28)
)


@dataclass
class ControlSequence:
    """Piecewise-constant gate-charge deviations on a uniform time grid.

    ``amplitudes[k, nu]`` is the deviation of qubit ``nu``'s gate charge from
    its static offset during slice ``k``, i.e. on ``[k*dt, (k+1)*dt)``.
    """

    amplitudes: np.ndarray
    dt: float

    def __post_init__(self):
        self.amplitudes = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        if self.amplitudes.ndim != 2:
            raise ValueError("amplitudes must be a (n_slices, n_qubits) matrix")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        self.dt = float(self.dt)

    @property
    def n_slices(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def duration(self) -> float:
        return self.n_slices * self.dt

    @property
    def times(self) -> np.ndarray:
        """Slice boundaries ``0, dt, ..., T`` (length n_slices + 1)."""
        return np.arange(self.n_slices + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_slices) + 0.5) * self.dt

    def total_charges(self, params: DeviceParams) -> np.ndarray:
        return self.amplitudes + np.asarray(params.ng0)[None, :]

    def reversed(self) -> "ControlSequence":
        return ControlSequence(self.amplitudes[::-1].copy(), self.dt)

    def concatenate(self, other: "ControlSequence") -> "ControlSequence":
        if not np.isclose(self.dt, other.dt):
            raise ValueError("cannot concatenate sequences with different dt")
        return ControlSequence(np.vstack([self.amplitudes, other.amplitudes]), self.dt)

    @classmethod
    def zeros(cls, n_slices: int, n_qubits: int, dt: float) -> "ControlSequence":
        return cls(np.zeros((n_slices, n_qubits)), dt)


def embed(op: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Kronecker-embed a single-site operator at position ``qubit``."""
    d = op.shape[0]
    factors = [np.eye(d)] * n_qubits
    factors[qubit] = op
    return reduce(np.kron, factors)


def _embed_pair(op_a, op_b, qubit_a, n_qubits):
    d = op_a.shape[0]
    factors = [np.eye(d)] * n_qubits
    factors[qubit_a] = op_a
    factors[qubit_a + 1] = op_b
    return reduce(np.kron, factors)


def assert_hermitian(h: np.ndarray, rtol: float = 1e-12) -> None:
    scale = max(np.linalg.norm(h), 1.0)
    if np.linalg.norm(h - h.conj().T) > rtol * scale:
        raise ValueError("matrix is not Hermitian")


def build_drift(params: DeviceParams) -> np.ndarray:
    """Static pseudo-spin Hamiltonian of the chain.

    Qubit ``nu`` carries ``-(sum_adj E_m/4 + E_c/2) sigma_z - (E_J/2) sigma_x``;
    each adjacent pair adds ``+E_m/4 sigma_z sigma_z``.
    """
    n = params.n_qubits
    h = np.zeros((2**n, 2**n))
    for nu in range(n):
        em_sum = sum(em for _, em in params.neighbours(nu))
        h -= (em_sum / 4 + params.ec[nu] / 2) * embed(SIGMA_Z, nu, n)
        h -= params.ej[nu] / 2 * embed(SIGMA_X, nu, n)
    for i, em in enumerate(params.em):
        h += em / 4 * _embed_pair(SIGMA_Z, SIGMA_Z, i, n)
    return GHZ_TO_RAD_PER_PS * h


def control_generators(params: DeviceParams) -> np.ndarray:
    """Derivatives of the control Hamiltonian with respect to each gate charge.

    Returns an array of shape ``(n_qubits, 2**n, 2**n)`` in rad/ps.  Moving
    ``n_g,nu`` shifts its own sigma_z by ``E_c,nu`` and each neighbour's
    sigma_z by ``E_m / 2``.
    """
    n = params.n_qubits
    gens = np.zeros((n, 2**n, 2**n))
    for nu in range(n):
        gens[nu] += params.ec[nu] * embed(SIGMA_Z, nu, n)
        for other, em in params.neighbours(nu):
            gens[nu] += em / 2 * embed(SIGMA_Z, other, n)
    return GHZ_TO_RAD_PER_PS * gens


def build_control(params: DeviceParams, delta_ng: Sequence[float]) -> np.ndarray:
    """Control Hamiltonian at total gate charges ``ng0 + delta_ng``."""
    delta_ng = np.asarray(delta_ng, dtype=float)
    if delta_ng.shape != (params.n_qubits,):
        raise ValueError(f"expected {params.n_qubits} gate-charge deviations, got {delta_ng.shape}")
    total = np.asarray(params.ng0) + delta_ng
    return np.tensordot(total, control_generators(params), axes=1)


def build_total(params: DeviceParams, delta_ng: Sequence[float]) -> np.ndarray:
    return build_drift(params) + build_control(params, delta_ng)


def _validate_levels(charge_levels: Sequence[int]) -> tuple[int, ...]:
    levels = tuple(int(c) for c in charge_levels)
    if list(levels) != list(range(levels[0], levels[0] + len(levels))):
        raise ValueError(f"charge levels must be contiguous ascending integers, got {charge_levels}")
    if 0 not in levels or 1 not in levels:
        raise ValueError("charge levels must contain 0 and 1")
    return levels


def computational_indices(n_qubits: int, charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS) -> np.ndarray:
    """Indices of the ``{0, 1}^N`` charge states inside the extended basis.

    Returned in computational order, so ``U_ext[np.ix_(idx, idx)]`` is the
    projected propagator in the same ordering as the pseudo-spin model.
    """
    levels = _validate_levels(charge_levels)
    m = len(levels)
    i0, i1 = levels.index(0), levels.index(1)
    idx = []
    for bits in np.ndindex(*(2,) * n_qubits):
        k = 0
        for b in bits:
            k = k * m + (i1 if b else i0)
        idx.append(k)
    return np.array(idx)


def extended_charge_operators(n_qubits: int, charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS) -> np.ndarray:
    """Excess-charge number operators ``n_nu`` on the extended space."""
    levels = _validate_levels(charge_levels)
    n_op = np.diag(np.array(levels, dtype=float))
    return np.array([embed(n_op, nu, n_qubits) for nu in range(n_qubits)])


def build_extended(
    params: DeviceParams,
    total_ng: Sequence[float] | None = None,
    charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS,
) -> np.ndarray:
    """Charge-basis Hamiltonian with ``len(charge_levels)`` states per island.

    ``H = sum E_c (n - n_g)^2 + sum_pairs E_m (n_a - n_ga)(n_b - n_gb)
    - sum (E_J/2)(|n><n+1| + h.c.)``.  On ``{0, 1}`` per island this equals the
    pseudo-spin ``build_drift + build_control`` up to a multiple of identity.

    ``total_ng`` defaults to the static offsets.
    """
    levels = _validate_levels(charge_levels)
    n = params.n_qubits
    ng = np.asarray(params.ng0 if total_ng is None else total_ng, dtype=float)
    if ng.shape != (n,):
        raise ValueError(f"expected {n} gate charges, got {ng.shape}")
    m = len(levels)
    eye = np.eye(m**n)
    charges = extended_charge_operators(n, levels)
    hop = np.diag(np.ones(m - 1), 1)
    hop = hop + hop.T
    h = np.zeros((m**n, m**n))
    for nu in range(n):
        shifted = charges[nu] - ng[nu] * eye
        h += params.ec[nu] * shifted @ shifted
        h -= params.ej[nu] / 2 * embed(hop, nu, n)
    for i, em in enumerate(params.em):
        h += em * (charges[i] - ng[i] * eye) @ (charges[i + 1] - ng[i + 1] * eye)
    return GHZ_TO_RAD_PER_PS * h


def extended_control_generators(
    params: DeviceParams, charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS
) -> np.ndarray:
    """``dH_ext / dn_g,nu`` with the identity part dropped, in rad/ps.

    The exact derivative is ``-2 E_c (n_nu - n_g,nu) - sum_adj E_m (n_adj - n_g,adj)``;
    the gate-charge dependent part is proportional to identity and does not
    drive transitions.
    """
    n = params.n_qubits
    charges = extended_charge_operators(n, charge_levels)
    gens = np.zeros_like(charges)
    for nu in range(n):
        gens[nu] -= 2 * params.ec[nu] * charges[nu]
        for other, em in params.neighbours(nu):
            gens[nu] -= em * charges[other]
    return GHZ_TO_RAD_PER_PS * gens
