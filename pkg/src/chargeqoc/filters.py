"""Rational pulse-shaping filters driven by a short rectangular current.

A transfer function is kept in pole/residue form,
``Z(s) = d + sum_i r_i / (s - s_i)``, with poles in 1/ps.  Complex poles are
stored once (upper half plane) together with their residue, so the conjugate
partner is implied and the impulse response is real by construction.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import NumericalError, propagate, trace_fidelity
from .model import ConfigError, ControlSequence, DeviceParams

# -- transfer functions -----------------------------------------------------


@dataclass(frozen=True)
class TransferFunction:
    """Strictly stable or marginal rational function in residue form.

    Attributes
    ----------
    pair_poles, pair_residues : ndarray of complex
        One representative per conjugate pair, ``Im(s) > 0``.
    real_poles, real_residues : ndarray of float
        Poles on the negative real axis.
    direct : float
        Constant (feed-through) term.
    """

    pair_poles: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    pair_residues: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    real_poles: np.ndarray = field(default_factory=lambda: np.zeros(0))
    real_residues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    direct: float = 0.0

    def __post_init__(self):
        pp = np.asarray(self.pair_poles, complex).ravel()
        pr = np.asarray(self.pair_residues, complex).ravel()
        rp = np.asarray(self.real_poles, float).ravel()
        rr = np.asarray(self.real_residues, float).ravel()
        if pp.shape != pr.shape or rp.shape != rr.shape:
            raise ConfigError("every pole needs exactly one residue")
        flip = pp.imag < 0
        pp = np.where(flip, pp.conj(), pp)
        pr = np.where(flip, pr.conj(), pr)
        for name, value in (("pair_poles", pp), ("pair_residues", pr), ("real_poles", rp), ("real_residues", rr)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "direct", float(self.direct))

    @classmethod
    def from_poles(cls, poles, residues, direct: float = 0.0, tol: float = 1e-9) -> "TransferFunction":
        """Group a flat pole/residue list into real poles and conjugate pairs.

        Poles with ``|Im s| <= tol * max(1, |s|)`` count as real.  Each remaining
        pole must have a conjugate partner whose residue is the conjugate one.
        """
        poles = np.asarray(poles, complex).ravel()
        residues = np.asarray(residues, complex).ravel()
        if poles.shape != residues.shape:
            raise ConfigError("poles and residues differ in length")
        scale = np.maximum(1.0, np.abs(poles))
        is_real = np.abs(poles.imag) <= tol * scale
        if np.any(np.abs(residues[is_real].imag) > tol * np.maximum(1.0, np.abs(residues[is_real]))):
            raise ConfigError("real pole with complex residue gives a complex impulse response")
        upper = np.flatnonzero(~is_real & (poles.imag > 0))
        lower = list(np.flatnonzero(~is_real & (poles.imag < 0)))
        if len(upper) != len(lower):
            raise ConfigError("complex poles must come in conjugate pairs")
        for i in upper:
            j = min(lower, key=lambda k: abs(poles[k] - poles[i].conj()))
            if abs(poles[j] - poles[i].conj()) > tol * scale[i] or abs(residues[j] - residues[i].conj()) > tol * max(
                1.0, abs(residues[i])
            ):
                raise ConfigError(f"pole {poles[i]} lacks a conjugate partner with conjugate residue")
            lower.remove(j)
        return cls(poles[upper], residues[upper], poles[is_real].real, residues[is_real].real, direct)

    @property
    def n_pairs(self) -> int:
        return self.pair_poles.size

    @property
    def n_real(self) -> int:
        return self.real_poles.size

    @property
    def poles(self) -> np.ndarray:
        """All poles: each pair as ``(s, conj(s))``, then the real poles."""
        pairs = np.column_stack([self.pair_poles, self.pair_poles.conj()]).ravel()
        return np.concatenate([pairs, self.real_poles.astype(complex)])

    @property
    def residues(self) -> np.ndarray:
        pairs = np.column_stack([self.pair_residues, self.pair_residues.conj()]).ravel()
        return np.concatenate([pairs, self.real_residues.astype(complex)])

    @property
    def real_mask(self) -> np.ndarray:
        return np.r_[np.zeros(2 * self.n_pairs, bool), np.ones(self.n_real, bool)]

    def is_stable(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.poles.real <= tol))

    def __call__(self, s):
        s = np.asarray(s, complex)
        out = np.full(s.shape, self.direct, complex)
        for p, r in zip(self.poles, self.residues):
            out = out + r / (s - p)
        return out

    def frequency_response(self, freqs_ghz) -> np.ndarray:
        """``Z(i omega)`` at frequencies given in GHz."""
        return self(2j * np.pi * 1e-3 * np.asarray(freqs_ghz, float))

    def impulse_response(self, t) -> np.ndarray:
        """Regular part of the impulse response, ``sum_i r_i exp(s_i t)`` for ``t >= 0``."""
        t = np.asarray(t, float)
        out = np.zeros(t.shape)
        for p, r in zip(self.pair_poles, self.pair_residues):
            out += 2 * np.real(r * np.exp(p * t))
        for p, r in zip(self.real_poles, self.real_residues):
            out += r * np.exp(p * t)
        return np.where(t >= 0, out, 0.0)

    def __add__(self, other: "TransferFunction") -> "TransferFunction":
        return TransferFunction(
            np.r_[self.pair_poles, other.pair_poles],
            np.r_[self.pair_residues, other.pair_residues],
            np.r_[self.real_poles, other.real_poles],
            np.r_[self.real_residues, other.real_residues],
            self.direct + other.direct,
        )

    def scaled(self, factor: float) -> "TransferFunction":
        return TransferFunction(
            self.pair_poles, factor * self.pair_residues, self.real_poles, factor * self.real_residues, factor * self.direct
        )

    def to_dict(self) -> dict:
        d = {
            "poles": [[float(p.real), float(p.imag)] for p in self.poles],
            "residues": [[float(r.real), float(r.imag)] for r in self.residues],
        }
        if self.direct:
            d["direct"] = self.direct
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransferFunction":
        try:
            poles = [complex(re, im) for re, im in d["poles"]]
            residues = [complex(re, im) for re, im in d["residues"]]
        except KeyError as exc:
            raise ConfigError(f"transfer function is missing key {exc.args[0]!r}") from None
        # JSON floats round-trip exactly, so conjugate partners match bit for bit.
        return cls.from_poles(poles, residues, d.get("direct", 0.0), tol=1e-12)

    @classmethod
    def constant(cls, value: float) -> "TransferFunction":
        return cls(direct=value)


# -- waveforms --------------------------------------------------------------


@dataclass
class Waveform:
    """Uniformly sampled real signal.

    Sample ``j`` sits at ``t_j = j dt``.  When a waveform is used as filter
    input it is read as piecewise constant, ``x(t) = samples[j]`` on
    ``[t_j, t_{j+1})``.
    """

    dt: float
    samples: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, float).ravel()
        if not self.dt > 0:
            raise ConfigError("waveform grid spacing must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("waveform samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    def integral(self) -> float:
        return float(self.samples.sum() * self.dt)

    def shifted(self, n: int) -> "Waveform":
        """Delay by ``n`` samples, keeping the length."""
        out = np.zeros_like(self.samples)
        if n < self.n_samples:
            out[n:] = self.samples[: self.n_samples - n]
        return Waveform(self.dt, out)

    def spectrum(self, pad_factor: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """One-sided magnitude of the continuous-time Fourier transform.

        Returns ``(freqs_ghz, |X(f)|)`` with ``X`` scaled so that ``X(0)`` is the
        integral of the signal.
        """
        n = pad_factor * self.n_samples
        coeffs = np.fft.rfft(self.samples, n) * self.dt
        freqs = np.fft.rfftfreq(n, self.dt) * 1e3
        # zero-order hold: each sample is a box of width dt
        hold = np.sinc(freqs * 1e-3 * self.dt)
        return freqs, np.abs(coeffs) * hold


def rect_pulse(duration: float, amplitude: float, dt: float, n_samples: int) -> Waveform:
    """Rectangle of the given length starting at ``t = 0``.

    A final partial cell carries the fractional amplitude, so the area is
    exactly ``duration * amplitude`` whenever the rectangle fits the grid.
    """
    if duration < 0:
        raise ConfigError("rectangle duration must be non-negative")
    samples = np.zeros(n_samples)
    full = int(np.floor(duration / dt + 1e-9))
    samples[: min(full, n_samples)] = amplitude
    rest = duration / dt - full
    if rest > 1e-9 and full < n_samples:
        samples[full] = amplitude * rest
    return Waveform(dt, samples, degenerate=duration == 0 or amplitude == 0)


def _pole_responses(poles: np.ndarray, x: np.ndarray, dt: float) -> np.ndarray:
    """Output of ``1 / (s - p)`` for each pole, driven by piecewise-constant ``x``.

    Returns an ``(n_samples, n_poles)`` complex array sampled at ``t_j``.  The
    kernel is the difference of exact step responses ``expm1(p tau) / p``.
    """
    n = x.size
    tau = np.arange(n + 1)[:, None] * dt
    p = poles[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(p == 0, tau, np.expm1(p * tau) / np.where(p == 0, 1, p))
    kernel = np.diff(step, axis=0)
    out = np.empty((n, poles.size), complex)
    for i in range(poles.size):
        out[:, i] = np.r_[0.0, np.convolve(x, kernel[:, i])[: n - 1]]
    return out


def apply_transfer(tf: TransferFunction, signal: Waveform) -> Waveform:
    """Exact response of ``tf`` to a piecewise-constant input.

    The output is sampled at the input grid points.  A direct term passes the
    input through with a one-sample delay, matching the sampling of the
    dynamic part.
    """
    if np.any(tf.poles.real > 0):
        raise ConfigError("transfer function has a pole in the right half plane")
    x = signal.samples
    y = np.zeros(x.size)
    if tf.n_pairs:
        resp = _pole_responses(tf.pair_poles, x, signal.dt)
        y += 2 * np.real(resp @ tf.pair_residues)
    if tf.n_real:
        resp = _pole_responses(tf.real_poles.astype(complex), x, signal.dt)
        y += np.real(resp) @ tf.real_residues
    if tf.direct:
        y[1:] += tf.direct * x[:-1]
    return Waveform(signal.dt, y)


# -- fitting ----------------------------------------------------------------


@dataclass
class TransferFit:
    """Result of :func:`fit_transfer`.

    ``residual`` is the relative squared error ``||y - target||^2 / ||target||^2``;
    ``history`` lists it after every accepted pole update of the winning start.
    """

    tf: TransferFunction
    residual: float
    history: list[float]
    start: int
    converged: bool


def _unpack_poles(theta, n_pairs, n_real):
    # rates outside [1e-9, 1e3] per ps are irrelevant on ps-scale grids
    rates = np.exp(np.clip(theta[: n_pairs + n_real], -20.0, 7.0))
    omegas = np.abs(theta[n_pairs + n_real :])
    return -rates[:n_pairs] + 1j * omegas, -rates[n_pairs:]


def _design_matrix(theta, n_pairs, n_real, x, dt):
    pair, real = _unpack_poles(theta, n_pairs, n_real)
    cols = []
    if n_pairs:
        resp = _pole_responses(pair, x, dt)
        cols += [2 * resp.real, -2 * resp.imag]
    if n_real:
        cols.append(_pole_responses(real.astype(complex), x, dt).real)
    return np.hstack(cols), pair, real


def _solve_residues(theta, n_pairs, n_real, x, y, dt):
    a, pair, real = _design_matrix(theta, n_pairs, n_real, x, dt)
    if not np.all(np.isfinite(a)):
        return np.full(y.size, np.inf), None
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    res = a @ coef - y
    pair_res = coef[:n_pairs] + 1j * coef[n_pairs : 2 * n_pairs]
    return res, TransferFunction(pair, pair_res, real, coef[2 * n_pairs :])


def _levenberg_marquardt(theta, fun, max_iter, tol):
    """Damped Gauss-Newton on a residual function with a finite-difference Jacobian."""
    r = fun(theta)
    cost = r @ r
    history = [cost]
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        h = 1e-6 * np.maximum(1.0, np.abs(theta))
        jac = np.empty((r.size, theta.size))
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h[k]
            jac[:, k] = (fun(theta + e) - fun(theta - e)) / (2 * h[k])
        jtj = jac.T @ jac
        g = jac.T @ r
        improved = False
        while lam < 1e12:
            step = np.linalg.solve(jtj + lam * (np.diag(np.diag(jtj)) + 1e-12 * np.eye(theta.size)), -g)
            trial = theta + step
            r_trial = fun(trial)
            c_trial = r_trial @ r_trial
            if np.isfinite(c_trial) and c_trial < cost:
                improved = True
                decrease = cost - c_trial
                theta, r, cost = trial, r_trial, c_trial
                history.append(cost)
                lam = max(lam / 3, 1e-12)
                break
            lam *= 4
        if not improved or decrease <= tol * max(cost, 1e-300) or cost < 1e-30:
            converged = True
            break
    return theta, cost, history, converged


def _spectral_peaks(y, dt, count, pad=8):
    """Angular frequencies (rad/ps) of the strongest local maxima of ``|FFT(y)|``."""
    if count == 0:
        return np.zeros(0)
    n = pad * y.size
    mag = np.abs(np.fft.rfft(y - y.mean(), n))
    omega = 2 * np.pi * np.fft.rfftfreq(n, dt)
    peaks = [k for k in range(1, mag.size - 1) if mag[k] >= mag[k - 1] and mag[k] > mag[k + 1]]
    peaks = sorted(peaks, key=lambda k: -mag[k])[:count]
    out = list(omega[peaks])
    step = 2 * np.pi / (y.size * dt)
    while len(out) < count:
        out.append(step * (len(out) + 1))
    return np.sort(np.array(out))


def fit_transfer(
    signal: Waveform,
    target: Waveform,
    n_pairs: int,
    n_real: int,
    n_starts: int = 4,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> TransferFit:
    """Fit poles and residues so that ``apply_transfer(tf, signal)`` matches ``target``.

    Residues enter linearly and are eliminated by least squares for every
    trial pole set (variable projection).  Pole locations are moved by a
    Levenberg-Marquardt loop in the coordinates ``Re s = -exp(alpha)``,
    ``Im s = omega``, which keeps every pole in the left half plane and every
    complex pole paired with its conjugate.  Start 0 places the pair
    frequencies on the strongest spectral peaks of the target, start 1 on
    the harmonics of the window, later starts jitter the peaks.  The lowest
    residual wins, ties going to the earlier start.
    """
    if n_pairs < 0 or n_real < 0 or n_pairs + n_real < 1:
        raise ConfigError("need at least one pole")
    if signal.n_samples != target.n_samples or not np.isclose(signal.dt, target.dt):
        raise ConfigError("target must live on the input grid")
    x, y, dt = signal.samples, target.samples, signal.dt
    norm = y @ y
    if norm == 0:
        raise ConfigError("target waveform is identically zero")
    window = y.size * dt
    rng = np.random.default_rng(seed)
    peaks = _spectral_peaks(y, dt, n_pairs)
    harmonics = 2 * np.pi / window * np.arange(1, n_pairs + 1)
    base_rate = 2.0 / window
    real_rates = base_rate * np.geomspace(1.0, 20.0, n_real) if n_real > 1 else np.full(n_real, base_rate)

    def fun(theta):
        return _solve_residues(theta, n_pairs, n_real, x, y, dt)[0] / np.sqrt(norm)

    best = None
    for k in range(n_starts):
        if k == 0:
            omegas, rates = peaks, np.full(n_pairs, base_rate)
        elif k == 1:
            omegas, rates = harmonics, np.full(n_pairs, base_rate)
        else:
            omegas = peaks * np.exp(0.2 * rng.standard_normal(n_pairs))
            rates = base_rate * np.exp(rng.standard_normal(n_pairs))
        theta0 = np.r_[np.log(rates), np.log(real_rates), omegas]
        theta, cost, history, converged = _levenberg_marquardt(theta0, fun, max_iter, tol)
        if best is None or cost < best[1]:
            best = (theta, cost, history, k, converged)
    theta, cost, history, k, converged = best
    tf = _solve_residues(theta, n_pairs, n_real, x, y, dt)[1]
    return TransferFit(tf, float(cost), [float(h) for h in history], k, converged)


# -- stages -----------------------------------------------------------------

LCR = "LCR"
RC = "RC"


@dataclass(frozen=True)
class Stage:
    """One filter section.

    ``frequency_ghz`` is the resonance ``Im(s) / 2 pi`` (zero for RC stages),
    ``damping`` is ``-Re(s)`` in 1/ps, ``gain`` and ``phase`` are modulus and
    argument of the residue.
    """

    kind: str
    frequency_ghz: float
    damping: float
    gain: float
    phase: float

    @property
    def pole(self) -> complex:
        return complex(-self.damping, 2 * np.pi * 1e-3 * self.frequency_ghz)

    @property
    def residue(self) -> complex:
        return self.gain * np.exp(1j * self.phase)


def realize_stages(tf: TransferFunction) -> list[Stage]:
    """One LCR stage per conjugate pair and one RC stage per real pole.

    Stages are ordered by resonance frequency, highest first, then by damping.
    """
    stages = [
        Stage(LCR, float(p.imag / (2 * np.pi) * 1e3), float(-p.real), float(abs(r)), float(np.angle(r)))
        for p, r in zip(tf.pair_poles, tf.pair_residues)
    ]
    stages += [
        Stage(RC, 0.0, float(-p), float(abs(r)), 0.0 if r >= 0 else float(np.pi))
        for p, r in zip(tf.real_poles, tf.real_residues)
    ]
    return sorted(stages, key=lambda s: (-s.frequency_ghz, s.damping))


def stages_to_transfer(stages: Sequence[Stage], direct: float = 0.0) -> TransferFunction:
    """Inverse of :func:`realize_stages`."""
    lcr = [s for s in stages if s.kind == LCR]
    rc = [s for s in stages if s.kind == RC]
    return TransferFunction(
        [s.pole for s in lcr],
        [s.residue for s in lcr],
        [s.pole.real for s in rc],
        [s.residue.real for s in rc],
        direct,
    )


STAGE_FIELDS = ("kind", "frequency_ghz", "damping_per_ps", "gain", "phase_rad")


def write_stages_csv(stages: Sequence[Stage], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAGE_FIELDS)
        for s in stages:
            w.writerow([s.kind, repr(s.frequency_ghz), repr(s.damping), repr(s.gain), repr(s.phase)])


def read_stages_csv(path: str | Path) -> list[Stage]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        Stage(r["kind"], float(r["frequency_ghz"]), float(r["damping_per_ps"]), float(r["gain"]), float(r["phase_rad"]))
        for r in rows
    ]


def write_pole_table(tf: TransferFunction, path: str | Path) -> None:
    """Pole map rows ``re_s, im_s, abs_residue``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["re_s", "im_s", "abs_residue"])
        for p, r in zip(tf.poles, tf.residues):
            w.writerow([repr(float(p.real)), repr(float(p.imag)), repr(float(abs(r)))])


# -- four-pole cascade ------------------------------------------------------


@dataclass(frozen=True)
class FourPole:
    """Reciprocal two-port given by its impedance entries ``Z11, Z12 = Z21, Z22``."""

    z11: TransferFunction
    z12: TransferFunction
    z22: TransferFunction

    @classmethod
    def pass_through(cls) -> "FourPole":
        """Ideal sample: unit transfer, no input impedance."""
        return cls(TransferFunction.constant(0.0), TransferFunction.constant(1.0), TransferFunction.constant(1.0))


@dataclass
class _RootForm:
    """``gain * prod(s - zeros) / prod(s - poles)``."""

    gain: complex
    zeros: np.ndarray
    poles: np.ndarray

    def __mul__(self, other):
        return _RootForm(self.gain * other.gain, np.r_[self.zeros, other.zeros], np.r_[self.poles, other.poles])

    def inverse(self):
        if self.gain == 0:
            raise NumericalError("division by an identically vanishing impedance")
        return _RootForm(1 / self.gain, self.poles, self.zeros)


def _root_form(tf: TransferFunction) -> _RootForm:
    poles = tf.poles
    numerator = tf.direct * np.polynomial.polynomial.polyfromroots(poles)
    for i in range(poles.size):
        numerator = np.polynomial.polynomial.polyadd(
            numerator, tf.residues[i] * np.polynomial.polynomial.polyfromroots(np.delete(poles, i))
        )
    numerator = np.trim_zeros(np.atleast_1d(numerator), "b")
    if numerator.size == 0:
        return _RootForm(0.0, np.zeros(0, complex), np.zeros(0, complex))
    return _RootForm(numerator[-1], np.polynomial.polynomial.polyroots(numerator), poles)


def _sum_root_forms(a: _RootForm, b: _RootForm) -> _RootForm:
    """``a + b`` over the common denominator ``prod(s - a.poles) prod(s - b.poles)``."""
    P = np.polynomial.polynomial
    num = P.polyadd(
        a.gain * P.polymul(P.polyfromroots(a.zeros), P.polyfromroots(b.poles)),
        b.gain * P.polymul(P.polyfromroots(b.zeros), P.polyfromroots(a.poles)),
    )
    num = np.atleast_1d(num)
    scale = np.max(np.abs(num)) if num.size else 0.0
    num = np.trim_zeros(np.where(np.abs(num) > 1e-14 * scale, num, 0), "b")
    if num.size == 0:
        return _RootForm(0.0, np.zeros(0, complex), np.r_[a.poles, b.poles])
    return _RootForm(num[-1], P.polyroots(num), np.r_[a.poles, b.poles])


def _cancel(form: _RootForm, tol: float) -> _RootForm:
    zeros = list(form.zeros)
    poles = []
    for p in form.poles:
        if zeros:
            k = int(np.argmin([abs(z - p) for z in zeros]))
            if abs(zeros[k] - p) <= tol * max(1.0, abs(p)):
                zeros.pop(k)
                continue
        poles.append(p)
    return _RootForm(form.gain, np.array(zeros, complex), np.array(poles, complex))


def _snap_and_pair(poles: np.ndarray, exact: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Clean up numerically found poles: snap to known ones, then pair conjugates.

    Returns ``(pair_poles, real_poles)`` with one ``Im > 0`` representative per pair.
    """
    poles = poles.astype(complex).copy()
    for i, p in enumerate(poles):
        if exact.size:
            k = int(np.argmin(np.abs(exact - p)))
            if abs(exact[k] - p) <= 1e3 * tol * max(1.0, abs(p)):
                poles[i] = exact[k]
    loose = 1e3 * tol
    is_real = np.abs(poles.imag) <= loose * np.maximum(1.0, np.abs(poles))
    real = np.sort(poles[is_real].real)
    upper = list(poles[~is_real & (poles.imag > 0)])
    lower = list(poles[~is_real & (poles.imag < 0)])
    if len(upper) != len(lower):
        raise NumericalError("cascade poles do not form conjugate pairs")
    pairs = []
    for p in upper:
        j = int(np.argmin([abs(q - p.conjugate()) for q in lower]))
        q = lower.pop(j)
        if abs(q - p.conjugate()) > loose * max(1.0, abs(p)):
            raise NumericalError(f"cascade pole {p} has no conjugate partner")
        pairs.append(0.5 * (p + q.conjugate()))
    pairs = np.array(pairs, complex)
    everything = np.r_[pairs, pairs.conj(), real]
    for i, p in enumerate(everything):
        others = np.delete(everything, i)
        if others.size and np.min(np.abs(others - p)) <= tol * max(1.0, abs(p)):
            raise NumericalError("cascade has a repeated pole; residue form does not apply")
    return pairs, real


def _fit_residues(fun, pairs: np.ndarray, real: np.ndarray, with_direct: bool) -> TransferFunction:
    """Real residues (and direct term) of ``fun`` for fixed poles by least squares.

    ``fun`` is sampled on a vertical line in the right half plane, where the
    partial-fraction basis is bounded; each pair contributes ``r/(s-p) + conj(r)/(s-conj p)``.
    """
    scale = max(1.0, float(np.max(np.abs(np.r_[pairs, real])))) if pairs.size + real.size else 1.0
    n_unknown = 2 * pairs.size + real.size + int(with_direct)
    omega = np.linspace(-1.5 * scale, 1.5 * scale, 4 * n_unknown + 16)
    s = 0.05 * scale + 1j * omega
    cols = []
    for p in pairs:
        a, b = 1 / (s - p), 1 / (s - p.conjugate())
        cols += [a + b, 1j * (a - b)]
    for p in real:
        cols.append(1 / (s - p))
    if with_direct:
        cols.append(np.ones_like(s))
    basis = np.column_stack(cols)
    values = fun(s)
    weights = 1.0 / np.maximum(np.abs(values), 1e-300 + 1e-12 * np.max(np.abs(values)))
    a = basis * weights[:, None]
    b = values * weights
    coef, *_ = np.linalg.lstsq(np.r_[a.real, a.imag], np.r_[b.real, b.imag], rcond=None)
    k = 2 * pairs.size
    residues = coef[0:k:2] + 1j * coef[1:k:2]
    real_res = coef[k : k + real.size]
    direct = float(coef[-1]) if with_direct else 0.0
    return TransferFunction(pairs, residues, real, real_res, direct)


def cascade_with_sample(filt: FourPole, sample: FourPole, tol: float = 1e-7) -> TransferFunction:
    """Transfer impedance of filter and sample in series.

    ``Z12 = Z12_sample Z12_filter / (Z22_filter + Z11_sample)``.  Poles come
    from the root form after cancelling common factors, snapped onto the
    exactly known input poles where they coincide; residues are then solved
    for against the exact expression, which keeps conjugate pairs exact.
    """
    denominator = _sum_root_forms(_root_form(filt.z22), _root_form(sample.z11))
    form = _root_form(sample.z12) * _root_form(filt.z12) * denominator.inverse()
    if form.gain == 0:
        return TransferFunction()
    form = _cancel(form, tol)
    if form.zeros.size > form.poles.size:
        raise NumericalError("cascade is improper: more zeros than poles")
    exact = np.r_[filt.z12.poles, sample.z12.poles, filt.z22.poles, sample.z11.poles]
    pairs, real = _snap_and_pair(form.poles, exact, tol)

    def exact_value(s):
        return sample.z12(s) * filt.z12(s) / (filt.z22(s) + sample.z11(s))

    tf = _fit_residues(exact_value, pairs, real, with_direct=form.zeros.size == form.poles.size)
    if not tf.is_stable(tol=1e-9):
        raise NumericalError("cascade with the sample is unstable")
    return tf


# -- end-to-end -------------------------------------------------------------


@dataclass
class FilterDesign:
    """Per-channel filters reproducing a gate-charge pulse from a rectangular drive."""

    input: Waveform
    targets: list[Waveform]
    fits: list[TransferFit]
    outputs: list[Waveform]
    filtered: ControlSequence
    fidelity: float

    @property
    def transfer_functions(self) -> list[TransferFunction]:
        return [f.tf for f in self.fits]

    def to_dict(self) -> dict:
        return {
            "fidelity": self.fidelity,
            "input_dt_ps": self.input.dt,
            "channels": [
                {"residual": f.residual, "start": f.start, "converged": f.converged, "transfer_function": f.tf.to_dict()}
                for f in self.fits
            ],
        }


def pulse_waveforms(seq: ControlSequence, sub_steps: int) -> list[Waveform]:
    """Sample every control channel on a grid ``sub_steps`` times finer than ``seq``."""
    fine = np.repeat(seq.amplitudes, sub_steps, axis=0)
    return [Waveform(seq.dt / sub_steps, fine[:, q]) for q in range(seq.n_qubits)]


def waveforms_to_sequence(outputs: Sequence[Waveform]) -> ControlSequence:
    """Piecewise-constant controls from grid samples, one cell per grid interval.

    Each cell takes the mean of its two end samples; the last cell holds the
    final sample.
    """
    cols = []
    for w in outputs:
        y = w.samples
        cols.append(np.r_[0.5 * (y[:-1] + y[1:]), y[-1]])
    return ControlSequence(np.column_stack(cols), outputs[0].dt)


def filtered_sequence(tfs: Sequence[TransferFunction], drive: Waveform) -> ControlSequence:
    return waveforms_to_sequence([apply_transfer(tf, drive) for tf in tfs])


def design_filters(
    params: DeviceParams,
    seq: ControlSequence,
    target: np.ndarray,
    n_pairs: int = 8,
    n_real: int = 2,
    rect_duration: float = 1.1,
    sub_steps: int = 10,
    n_starts: int = 4,
    seed: int = 0,
    sample: FourPole | None = None,
) -> FilterDesign:
    """Fit one filter per channel and score the gate produced by the filtered pulses.

    The drive is a unit rectangle of ``rect_duration`` ps on a grid
    ``sub_steps`` times finer than the control slices.  With ``sample`` given,
    every fitted filter is cascaded with it before the fidelity is evaluated,
    so the sample's own response degrades the pulse.
    """
    targets = pulse_waveforms(seq, sub_steps)
    drive = rect_pulse(rect_duration, 1.0, targets[0].dt, targets[0].n_samples)
    if drive.degenerate:
        raise ConfigError("rectangular drive has zero area")
    fits = [fit_transfer(drive, w, n_pairs, n_real, n_starts=n_starts, seed=seed) for w in targets]
    tfs = [f.tf for f in fits]
    if sample is not None:
        tfs = [cascade_with_sample(FourPole(TransferFunction.constant(0.0), tf, TransferFunction.constant(1.0)), sample) for tf in tfs]
    outputs = [apply_transfer(tf, drive) for tf in tfs]
    filtered = waveforms_to_sequence(outputs)
    u, _ = propagate(params, filtered)
    return FilterDesign(drive, targets, fits, outputs, filtered, trace_fidelity(u, target))


def write_transfer_json(tf: TransferFunction, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tf.to_dict(), indent=2, sort_keys=True) + "\n")


def read_transfer_json(path: str | Path) -> TransferFunction:
    return TransferFunction.from_dict(json.loads(Path(path).read_text()))
