"""Run configuration and artifact readers/writers.

Configs and reports are JSON, time series are CSV.  Writers format floats
with ``repr`` and sort JSON keys, so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .grape import OptimizationConfig, standard_targets
from .model import ConfigError, ControlSequence, DeviceParams


class ArtifactIOError(OSError):
    """A file could not be read or written."""


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc.strerror or exc}") from None


def _locate_key(text: str, key: str) -> int | None:
    """1-based line of the first ``"key":`` occurrence in a JSON document."""
    pattern = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return lineno
    return None


def read_json(path: str | Path) -> Any:
    """Parse a JSON file; syntax errors name the file, line and column."""
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(obj: Any, path: str | Path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_plain) + "\n"
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from None


# -- pulses -----------------------------------------------------------------


def write_pulse_csv(seq: ControlSequence, path: str | Path) -> None:
    """Rows ``t_ps, dng1, dng2, ...`` with ``t_ps`` the start of each slice."""
    header = ["t_ps"] + [f"dng{q + 1}" for q in range(seq.n_qubits)]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, row in zip(seq.times[:-1], seq.amplitudes):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from None


def read_table_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a numeric CSV file."""
    text = _read_text(path)
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} columns, found {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-numeric entry") from None
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def read_pulse_csv(path: str | Path, dt: float | None = None) -> ControlSequence:
    """Inverse of :func:`write_pulse_csv`.

    The slice width comes from the time column; a single-slice file needs
    ``dt``.
    """
    header, data = read_table_csv(path)
    if not header or header[0] != "t_ps" or len(header) < 2:
        raise ConfigError(f"{path}:1: header must be 't_ps, dng1, ...'")
    if data.shape[0] == 0:
        raise ConfigError(f"{path}: no pulse slices")
    t = data[:, 0]
    if data.shape[0] > 1:
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or steps[0] <= 0:
            raise ConfigError(f"{path}: time column is not a uniform increasing grid")
        dt = float(steps[0]) if dt is None else dt
    elif dt is None:
        raise ConfigError(f"{path}: a single-slice pulse needs an explicit slice width")
    return ControlSequence(data[:, 1:], dt)


# -- run configuration ------------------------------------------------------

ANALYSES = ("leakage", "harmonics", "spectrum", "transitions", "weyl", "bloch")


@dataclass
class RunConfig:
    """Everything one CLI invocation needs.

    The JSON document has the blocks ``device`` (the :class:`DeviceParams`
    schema), ``optimization``, ``analysis`` and ``filter``, plus the top-level
    keys ``output_dir`` and ``seed``.
    """

    device: DeviceParams
    target_name: str
    optimization: dict[str, Any]
    n_restarts: int = 1
    stop_at_goal: bool = False
    analysis: dict[str, Any] = field(default_factory=dict)
    filter: dict[str, Any] = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    source: str | None = None

    @property
    def target(self) -> np.ndarray:
        return standard_targets(self.target_name, self.device.n_qubits)

    def optimization_config(self, seed: int | None = None) -> OptimizationConfig:
        opts = dict(self.optimization)
        if "bounds" in opts and opts["bounds"] is not None:
            opts["bounds"] = tuple(opts["bounds"])
        return OptimizationConfig(target=self.target, rng_seed=self.seed if seed is None else seed, **opts)

    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.n_restarts)]


_OPT_KEYS = {
    "n_slices": "n_slices",
    "dt_ps": "dt",
    "method": "method",
    "step_size": "step_size",
    "backtrack_factor": "backtrack_factor",
    "min_step": "min_step",
    "max_iters": "max_iters",
    "fidelity_goal": "fidelity_goal",
    "gradient_tol": "gradient_tol",
    "init": "init",
    "init_amplitude": "init_amplitude",
    "symmetry": "symmetry",
    "bounds": "bounds",
    "smoothing": "smoothing",
    "smoothing_iters": "smoothing_iters",
}

_FILTER_KEYS = ("n_pairs", "n_real", "rect_duration_ps", "sub_steps", "n_starts")


def _where(text: str | None, key: str, path) -> str:
    line = _locate_key(text, key) if text else None
    return f"{path}:{line}" if line else str(path)


def parse_run_config(doc: Any, text: str | None = None, path: str | Path = "<config>") -> RunConfig:
    """Validate a parsed config document; errors carry the offending line when known."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    if "device" not in doc:
        raise ConfigError(f"{path}: missing key 'device'")
    if not isinstance(doc["device"], dict):
        raise ConfigError(f"{_where(text, 'device', path)}: device block must be an object")
    try:
        device = DeviceParams.from_dict(doc["device"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(text, 'device', path)}: {exc}") from None

    opt_doc = dict(doc.get("optimization", {}))
    target_name = str(opt_doc.pop("target", "cnot"))
    try:
        standard_targets(target_name, device.n_qubits)
    except KeyError:
        raise ConfigError(f"{_where(text, 'target', path)}: unknown target gate {target_name!r}") from None
    if standard_targets(target_name, device.n_qubits).shape[0] != device.dim:
        raise ConfigError(f"{_where(text, 'target', path)}: target {target_name!r} does not act on {device.n_qubits} qubits")
    n_restarts = int(opt_doc.pop("n_restarts", 1))
    stop_at_goal = bool(opt_doc.pop("stop_at_goal", False))
    if n_restarts < 1:
        raise ConfigError(f"{_where(text, 'n_restarts', path)}: n_restarts must be positive")
    unknown = set(opt_doc) - set(_OPT_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{_where(text, key, path)}: unknown optimization key {key!r}")
    optimization = {_OPT_KEYS[k]: v for k, v in opt_doc.items()}

    analysis = dict(doc.get("analysis", {}))
    unknown = set(analysis) - set(ANALYSES)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{_where(text, key, path)}: unknown analysis {key!r}")
    filt = dict(doc.get("filter", {}))
    unknown = set(filt) - set(_FILTER_KEYS)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{_where(text, key, path)}: unknown filter key {key!r}")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"{_where(text, 'seed', path)}: seed must be an integer")
    cfg = RunConfig(
        device, target_name, optimization, n_restarts, stop_at_goal, analysis, filt, str(doc.get("output_dir", "out")), seed, str(path)
    )
    try:
        cfg.optimization_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(text, 'optimization', path)}: {exc}") from None
    return cfg


def read_run_config(path: str | Path) -> RunConfig:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_run_config(doc, text, path)
