"""Characterisation of optimised pulses.

Harmonic envelopes, spectra, leakage into higher charge states of the
islands and transition matrix elements of the charge Hamiltonian.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .dynamics import bell_states, canonical_states, chain_product, extended_slice_propagators, propagate
from .model import (
    DEFAULT_CHARGE_LEVELS,
    GHZ_TO_RAD_PER_PS,
    ControlSequence,
    DeviceParams,
    build_extended,
    computational_indices,
    extended_control_generators,
)

# -- harmonic envelopes -----------------------------------------------------


@dataclass
class HarmonicFit:
    """Sum-of-cosines envelope per control channel.

    ``n_g(t) = sum_j a_j cos(2 pi omega_j t / T + phi_j) / scale``.  The
    leading term of each channel is the constant offset (``omega = phi = 0``).
    With the default ``scale = 100`` amplitudes are in percent of a Cooper
    pair.  ``chi2`` holds the sum of squared residuals per channel, in the
    gate-charge units of the fitted sequence.
    """

    amplitudes: list[np.ndarray]
    frequencies: list[np.ndarray]
    phases: list[np.ndarray]
    duration: float
    chi2: list[float] = field(default_factory=list)
    scale: float = 100.0

    def __post_init__(self):
        self.amplitudes = [np.asarray(a, dtype=float) for a in self.amplitudes]
        self.frequencies = [np.asarray(w, dtype=float) for w in self.frequencies]
        self.phases = [np.asarray(p, dtype=float) for p in self.phases]
        for a, w, p in zip(self.amplitudes, self.frequencies, self.phases):
            if not (a.shape == w.shape == p.shape) or a.size == 0:
                raise ValueError("each channel needs matching, non-empty a, omega, phi lists")

    @property
    def n_channels(self) -> int:
        return len(self.amplitudes)

    @property
    def n_terms(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.amplitudes)

    def canonical(self) -> "HarmonicFit":
        """Equivalent fit with ``omega >= 0``, ``a >= 0`` for the oscillating
        terms and ``phi`` in ``[0, 2 pi)``, terms sorted by frequency."""
        amps, freqs, phases = [], [], []
        for a, w, p in zip(self.amplitudes, self.frequencies, self.phases):
            a, w, p = a.copy(), w.copy(), p.copy()
            neg = w < 0
            w[neg], p[neg] = -w[neg], -p[neg]
            flip = a < 0
            flip[0] = False
            a[flip], p[flip] = -a[flip], p[flip] + np.pi
            p = np.mod(p, 2 * np.pi)
            p[0] = 0.0
            order = np.concatenate([[0], 1 + np.argsort(w[1:], kind="stable")])
            amps.append(a[order])
            freqs.append(w[order])
            phases.append(p[order])
        return HarmonicFit(amps, freqs, phases, self.duration, list(self.chi2), self.scale)

    def to_dict(self) -> dict:
        return {
            "duration_ps": self.duration,
            "scale": self.scale,
            "channels": [
                {"a": a.tolist(), "omega": w.tolist(), "phi": p.tolist(), "chi2": c}
                for a, w, p, c in zip(self.amplitudes, self.frequencies, self.phases, self._chi2_list())
            ],
        }

    def _chi2_list(self):
        return list(self.chi2) + [None] * (self.n_channels - len(self.chi2))

    @classmethod
    def from_dict(cls, data: dict) -> "HarmonicFit":
        chans = data["channels"]
        chi2 = [c.get("chi2") for c in chans]
        return cls(
            [c["a"] for c in chans],
            [c["omega"] for c in chans],
            [c["phi"] for c in chans],
            float(data["duration_ps"]),
            [] if any(c is None for c in chi2) else chi2,
            float(data.get("scale", 100.0)),
        )


#: Envelope coefficients (percent of a Cooper pair) tabulated for the 55 ps CNOT pulse.
CNOT_ENVELOPE_55PS = HarmonicFit(
    amplitudes=[
        [-4.4647, -4.5071, 6.5080, 14.5596, -14.2523, -6.1681],
        [-17.4138, -23.7277, -10.0067, -8.5767, -15.5114, -19.2964, -8.4275],
    ],
    frequencies=[
        [0.0, 0.0130, 3.2896, 3.3968, 3.5523, 3.6477],
        [0.0, 0.4400, 1.2108, 1.9001, 2.5745, 2.8057, 2.9355],
    ],
    phases=[
        [0.0, 9.3846, -0.7031, 2.1083, 1.6296, 4.4777],
        [0.0, 1.7869, 2.5555, 3.3284, 4.6400, 7.0698, 9.8117],
    ],
    duration=55.0,
    chi2=[0.008231, 0.003668],
)


def _envelope(t, a, w, p, duration):
    return np.cos(2 * np.pi * np.outer(t, w) / duration + p) @ a


def eval_harmonics(fit: HarmonicFit, t: np.ndarray | float) -> np.ndarray:
    """Gate-charge envelope at times ``t`` (ps); shape ``(len(t), n_channels)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cols = [_envelope(t, a, w, p, fit.duration) for a, w, p in zip(fit.amplitudes, fit.frequencies, fit.phases)]
    return np.column_stack(cols) / fit.scale


def harmonic_sequence(fit: HarmonicFit, n_slices: int) -> ControlSequence:
    """Piecewise-constant sequence sampling the envelope at slice midpoints."""
    dt = fit.duration / n_slices
    return ControlSequence(eval_harmonics(fit, (np.arange(n_slices) + 0.5) * dt), dt)


def _dft_peaks(y: np.ndarray, duration: float, n_peaks: int, pad: int = 16) -> np.ndarray:
    """Frequencies (cycles per duration) of the largest local maxima of |DFT|."""
    m = pad * y.size
    mag = np.abs(np.fft.rfft(y - y.mean(), n=m))
    cycles = np.arange(mag.size) * y.size / m
    interior = (mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])
    idx = 1 + np.flatnonzero(interior)
    idx = idx[np.argsort(-mag[idx])][:n_peaks]
    out = cycles[idx]
    if out.size < n_peaks:
        out = np.concatenate([out, np.linspace(0.5, y.size / 4, n_peaks - out.size)])
    return out


def _fit_channel(t, y, duration, n_terms, n_starts, rng):
    """Best least-squares ``(a, omega, phi, chi2)`` for one channel."""
    k = n_terms - 1

    def model(theta):
        m = (theta.size - 1) // 3
        a0, a, w, p = theta[0], theta[1 : m + 1], theta[m + 1 : 2 * m + 1], theta[2 * m + 1 :]
        return a0 + _envelope(t, a, w, p, duration)

    def residual(theta):
        return model(theta) - y

    def linear_amplitudes(w, p):
        basis = np.column_stack([np.ones_like(t), np.cos(2 * np.pi * np.outer(t, w) / duration + p)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return coef

    def polish(theta, budget):
        sol = least_squares(residual, theta, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=budget)
        return sol.x, float(np.sum(sol.fun**2))

    def refine(w, p):
        return polish(np.concatenate([linear_amplitudes(w, p), w, p]), 4000)

    if k == 0:
        a0 = float(np.mean(y))
        return np.array([a0]), np.zeros(1), np.zeros(1), float(np.sum((y - a0) ** 2))

    starts = []
    peaks = _dft_peaks(y, duration, k)
    starts.append((peaks, np.zeros(k)))
    # greedy: add one harmonic at a time, seeded from the residual spectrum
    w_acc, p_acc = np.zeros(0), np.zeros(0)
    for _ in range(k):
        coef = linear_amplitudes(w_acc, p_acc)
        basis = np.column_stack([np.ones_like(t), np.cos(2 * np.pi * np.outer(t, w_acc) / duration + p_acc)])
        resid = y - basis @ coef
        w_new = _dft_peaks(resid, duration, 1)
        w_acc = np.concatenate([w_acc, w_new])
        p_acc = np.concatenate([p_acc, [0.0]])
        if w_acc.size < k:
            theta, _ = refine(w_acc, p_acc)
            kk = w_acc.size
            w_acc, p_acc = theta[kk + 1 : 2 * kk + 1], theta[2 * kk + 1 :]
    starts.append((w_acc, p_acc))
    for _ in range(n_starts):
        jitter = peaks * (1 + 0.1 * rng.standard_normal(k)) + 0.2 * rng.standard_normal(k)
        starts.append((np.abs(jitter), rng.uniform(0, 2 * np.pi, k)))

    candidates = []
    for w0, p0 in starts:
        for phase_seed in (p0, p0 + np.pi / 2):
            candidates.append(refine(np.asarray(w0, float), np.asarray(phase_seed, float)))
    # screening runs stop on a small budget; slow valleys need a longer polish
    candidates.sort(key=lambda c: c[1])
    polished = [polish(theta, 50_000) for theta, _ in candidates[:3]]
    theta, chi2 = min(polished + candidates[:1], key=lambda c: c[1])
    a = np.concatenate([[theta[0]], theta[1 : k + 1]])
    w = np.concatenate([[0.0], theta[k + 1 : 2 * k + 1]])
    p = np.concatenate([[0.0], theta[2 * k + 1 :]])
    return a, w, p, chi2


def fit_harmonics(
    seq: ControlSequence,
    n_terms: int | Sequence[int],
    scale: float = 100.0,
    n_starts: int = 8,
    seed: int = 0,
) -> HarmonicFit:
    """Fit a sum-of-cosines envelope to each channel of ``seq``.

    Samples are taken at slice midpoints.  ``n_terms`` counts the constant
    term, so ``(6, 7)`` means 5 and 6 oscillating harmonics.  Several starts
    (DFT peaks, greedy residual peaks, jittered peaks) are refined by
    Levenberg-Marquardt and the lowest chi-square wins.
    """
    if np.isscalar(n_terms):
        n_terms = [int(n_terms)] * seq.n_qubits
    n_terms = [int(n) for n in n_terms]
    if len(n_terms) != seq.n_qubits:
        raise ValueError(f"need one term count per channel ({seq.n_qubits})")
    if min(n_terms) < 1:
        raise ValueError("n_terms must be >= 1")
    if 3 * max(n_terms) - 2 > seq.n_slices:
        raise ValueError(
            f"{max(n_terms)} terms need {3 * max(n_terms) - 2} parameters but the pulse has only {seq.n_slices} slices"
        )
    rng = np.random.default_rng(seed)
    t = seq.midpoints
    amps, freqs, phases, chi2 = [], [], [], []
    for ch, n in enumerate(n_terms):
        a, w, p, c = _fit_channel(t, seq.amplitudes[:, ch], seq.duration, n, n_starts, rng)
        amps.append(a * scale)
        freqs.append(w)
        phases.append(p)
        chi2.append(c)
    return HarmonicFit(amps, freqs, phases, seq.duration, chi2, scale).canonical()


# -- spectra ----------------------------------------------------------------


@dataclass
class Spectrum:
    """Orthonormal DFT of the zero-padded, zero-order-hold sampled pulse.

    ``freqs_ghz`` follows ``numpy.fft.fftfreq`` ordering; ``coefficients`` has
    shape ``(n_freqs, n_channels)``.  ``samples`` are the time-domain values
    the transform was taken of.
    """

    freqs_ghz: np.ndarray
    coefficients: np.ndarray
    samples: np.ndarray
    sample_dt: float

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)

    def one_sided(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-negative frequencies (sorted) and their magnitudes."""
        keep = self.freqs_ghz >= 0
        order = np.argsort(self.freqs_ghz[keep])
        return self.freqs_ghz[keep][order], self.magnitudes[keep][order]

    def magnitude_at(self, freq_ghz: float | np.ndarray, channel: int) -> np.ndarray:
        f, mag = self.one_sided()
        return np.interp(np.abs(freq_ghz), f, mag[:, channel], right=0.0)

    def energy(self) -> np.ndarray:
        return np.sum(self.magnitudes**2, axis=0)

    def time_energy(self) -> np.ndarray:
        return np.sum(self.samples**2, axis=0)


def spectrum(seq: ControlSequence, oversample: int = 4, pad_factor: int = 8) -> Spectrum:
    """Magnitude spectrum of the piecewise-constant deviations in GHz."""
    samples = np.repeat(seq.amplitudes, oversample, axis=0)
    n = samples.shape[0] * pad_factor
    padded = np.zeros((n, seq.n_qubits))
    padded[: samples.shape[0]] = samples
    sdt = seq.dt / oversample
    coeffs = np.fft.fft(padded, axis=0, norm="ortho")
    freqs = np.fft.fftfreq(n, d=sdt) * 1e3  # 1/ps -> GHz
    return Spectrum(freqs, coeffs, padded, sdt)


# -- leakage ----------------------------------------------------------------


@dataclass
class LeakageReport:
    """Leakage of a pulse into charge states outside ``{0, 1}`` per island."""

    projected_fidelity: float
    computational_fidelity: float
    times: np.ndarray
    canonical_leakage: dict[str, np.ndarray]
    bell_leakage: dict[str, np.ndarray]
    charge_levels: tuple[int, ...]

    @property
    def max_canonical_leakage(self) -> float:
        return max(float(v.max()) for v in self.canonical_leakage.values())

    @property
    def max_bell_leakage(self) -> float:
        if not self.bell_leakage:
            return 0.0
        return max(float(v.max()) for v in self.bell_leakage.values())

    def to_dict(self) -> dict:
        return {
            "charge_levels": list(self.charge_levels),
            "projected_fidelity": self.projected_fidelity,
            "computational_fidelity": self.computational_fidelity,
            "max_canonical_leakage": self.max_canonical_leakage,
            "max_bell_leakage": self.max_bell_leakage,
            "per_state_max": {
                k: float(v.max()) for k, v in {**self.canonical_leakage, **self.bell_leakage}.items()
            },
        }


def leakage_report(
    params: DeviceParams,
    seq: ControlSequence,
    target: np.ndarray,
    charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS,
) -> LeakageReport:
    """Run the pulse on the extended charge space and measure leakage.

    The projected fidelity is ``|tr(U_target^dagger P U_ext P)| / 2^N``; leakage
    curves record the population outside the computational subspace at every
    slice boundary, for each computational basis state and (two qubits) each
    Bell state.
    """
    levels = tuple(charge_levels)
    n = params.n_qubits
    idx = computational_indices(n, levels)
    slices = extended_slice_propagators(params, seq, levels)
    u_ext = chain_product(slices)
    projected = u_ext[np.ix_(idx, idx)]
    target = np.asarray(target)
    proj_fid = float(abs(np.vdot(target, projected)) / target.shape[0])
    u_comp, _ = propagate(params, seq)
    comp_fid = float(abs(np.vdot(target, u_comp)) / target.shape[0])

    inits = {"canonical": canonical_states(n), "bell": bell_states() if n == 2 else {}}
    # evolve all initial states together: columns are states
    curves = {}
    for group, states in inits.items():
        if not states:
            curves[group] = {}
            continue
        labels = list(states)
        psi = np.zeros((len(levels) ** n, len(labels)), dtype=complex)
        psi[idx] = np.column_stack([states[l] for l in labels])
        pops = [np.sum(np.abs(psi[idx]) ** 2, axis=0)]
        for p in slices:
            psi = p @ psi
            pops.append(np.sum(np.abs(psi[idx]) ** 2, axis=0))
        leak = np.clip(1.0 - np.array(pops), 0.0, 1.0)
        curves[group] = {l: leak[:, i] for i, l in enumerate(labels)}
    return LeakageReport(proj_fid, comp_fid, seq.times, curves["canonical"], curves["bell"], levels)


# -- transition spectroscopy ------------------------------------------------

WORKING = "working"
ALLOWED = "allowed-leakage"
FORBIDDEN = "forbidden"
MIXED = "mixed"


@dataclass(frozen=True)
class Transition:
    channel: int
    initial: int
    final: int
    freq_ghz: float
    element: float
    kind: str
    initial_charges: tuple[int, ...]
    final_charges: tuple[int, ...]

    @property
    def label(self) -> str:
        a = ",".join(map(str, self.initial_charges))
        b = ",".join(map(str, self.final_charges))
        return f"ch{self.channel}:({a})->({b})"


@dataclass
class TransitionTable:
    rows: list[Transition]
    total_ng: tuple[float, ...]
    charge_levels: tuple[int, ...]
    energies_ghz: np.ndarray

    def of_kind(self, kind: str) -> list[Transition]:
        return [r for r in self.rows if r.kind == kind]

    def max_element(self, kind: str) -> float:
        rows = self.of_kind(kind)
        return max((r.element for r in rows), default=0.0)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "initial", "final", "freq_ghz", "element", "kind", "label"])
            for r in self.rows:
                w.writerow([r.channel, r.initial, r.final, repr(r.freq_ghz), repr(r.element), r.kind, r.label])


def _classify(ci, cf, wi, wf):
    if wi <= 0.5 or wf <= 0.5:
        return MIXED
    comp_i = all(c in (0, 1) for c in ci)
    comp_f = all(c in (0, 1) for c in cf)
    if comp_i and comp_f:
        return WORKING
    steps = sum(abs(a - b) for a, b in zip(ci, cf))
    return ALLOWED if steps == 1 else FORBIDDEN


def transition_table(
    params: DeviceParams,
    total_ng: Sequence[float],
    charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS,
) -> TransitionTable:
    """Normalised control matrix elements between all eigenstate pairs.

    For each channel the element is ``|<f| dH/dn_g,nu |i>| / E_c,nu`` and each
    pair is classified from the dominant bare charge configuration of both
    eigenstates: working (both within ``{0,1}^N``), allowed leakage (one
    charge moved) or forbidden (two or more charges moved).  Pairs where a
    state has no configuration above 50 % weight are marked mixed.
    """
    levels = tuple(charge_levels)
    n = params.n_qubits
    h = build_extended(params, total_ng, levels)
    lam, vecs = np.linalg.eigh(h)
    energies = lam / GHZ_TO_RAD_PER_PS
    configs = list(np.ndindex(*(len(levels),) * n))
    weights = np.abs(vecs) ** 2
    dom = np.argmax(weights, axis=0)
    dom_w = weights[dom, np.arange(vecs.shape[1])]
    charges = [tuple(levels[i] for i in configs[k]) for k in dom]
    gens = extended_control_generators(params, levels) / GHZ_TO_RAD_PER_PS

    rows = []
    for ch in range(n):
        elem = np.abs(vecs.conj().T @ gens[ch] @ vecs) / params.ec[ch]
        for i in range(len(lam)):
            for f in range(i + 1, len(lam)):
                rows.append(
                    Transition(
                        channel=ch,
                        initial=i,
                        final=f,
                        freq_ghz=float(energies[f] - energies[i]),
                        element=float(elem[f, i]),
                        kind=_classify(charges[i], charges[f], dom_w[i], dom_w[f]),
                        initial_charges=charges[i],
                        final_charges=charges[f],
                    )
                )
    return TransitionTable(rows, tuple(float(x) for x in total_ng), levels, energies)


def spectral_overlap(spec: Spectrum, table: TransitionTable) -> np.ndarray:
    """Pulse spectral weight at each transition frequency times its matrix element."""
    return np.array([spec.magnitude_at(r.freq_ghz, r.channel) * r.element for r in table.rows])


def transition_sweep(
    params: DeviceParams,
    ng1_values: Sequence[float],
    ng2_values: Sequence[float],
    charge_levels: Sequence[int] = DEFAULT_CHARGE_LEVELS,
) -> list[tuple[float, float, str, float, float]]:
    """Rows ``(ng1, ng2, transition_id, freq_ghz, element)`` over a two-qubit gate-charge grid."""
    if params.n_qubits != 2:
        raise ValueError("the gate-charge sweep is defined for two qubits")
    out = []
    for g1 in ng1_values:
        for g2 in ng2_values:
            table = transition_table(params, (g1, g2), charge_levels)
            for r in table.rows:
                out.append((float(g1), float(g2), r.label, r.freq_ghz, r.element))
    return out


def write_sweep_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ng1", "ng2", "transition_id", "freq_ghz", "element"])
        for r in rows:
            w.writerow([repr(r[0]), repr(r[1]), r[2], repr(r[3]), repr(r[4])])
