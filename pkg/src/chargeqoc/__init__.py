"""Optimal control of coupled Josephson charge qubits.

Pulse synthesis by exact-gradient ascent, leakage and spectral analysis of
the resulting pulses, and rational filters that shape them from a short
rectangular drive.
"""
from .dynamics import duration_bounds, propagate, trace_fidelity, weyl_coordinates
from .grape import OptimizationConfig, multi_start, optimize, standard_targets
from .model import CNOT_PARAMS, TOFFOLI_PARAMS, ConfigError, ControlSequence, DeviceParams

__all__ = [
    "CNOT_PARAMS",
    "TOFFOLI_PARAMS",
    "ConfigError",
    "ControlSequence",
    "DeviceParams",
    "OptimizationConfig",
    "duration_bounds",
    "multi_start",
    "optimize",
    "propagate",
    "standard_targets",
    "trace_fidelity",
    "weyl_coordinates",
]

__version__ = "0.1.0"
