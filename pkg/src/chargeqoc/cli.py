"""Command-line workflows: optimise, analyse, fit filters, simulate.

Exit codes: 0 success (including non-converged optimisations, which are
flagged in the report), 1 file I/O, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .artifacts import ANALYSES, ArtifactIOError, RunConfig, read_pulse_csv, read_run_config, write_json, write_pulse_csv
from .dynamics import (
    NumericalError,
    bell_states,
    canonical_states,
    duration_bounds,
    propagate,
    simulate_trajectory,
    trace_fidelity,
    weyl_coordinates,
    weyl_trajectory,
    write_weyl_csv,
)
from .filters import design_filters, realize_stages, write_pole_table, write_stages_csv, write_transfer_json
from .grape import multi_start, phase_aligned_distance
from .model import ConfigError, ControlSequence
from .pulses import ALLOWED, FORBIDDEN, fit_harmonics, leakage_report, spectral_overlap, spectrum, transition_table

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

logger = logging.getLogger("chargeqoc")


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.output_dir if cfg else "out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _require_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    cfg = read_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load_pulse(args, cfg: RunConfig) -> ControlSequence:
    seq = read_pulse_csv(args.pulse)
    if seq.n_qubits != cfg.device.n_qubits:
        raise ConfigError(f"{args.pulse}: {seq.n_qubits} control channels for a {cfg.device.n_qubits}-qubit device")
    return seq


def _final_metrics(cfg: RunConfig, seq: ControlSequence) -> dict:
    u, _ = propagate(cfg.device, seq)
    metrics = {
        "trace_fidelity": trace_fidelity(u, cfg.target),
        "frobenius_distance": phase_aligned_distance(u, cfg.target),
    }
    if cfg.device.n_qubits == 2:
        metrics["weyl"] = weyl_coordinates(u).tolist()
    return metrics


# -- commands ---------------------------------------------------------------


def cmd_optimize(args) -> int:
    cfg = _require_config(args)
    out = _out_dir(args, cfg)
    best, reports = multi_start(cfg.device, cfg.optimization_config(), cfg.seeds(), cfg.stop_at_goal)
    write_pulse_csv(best.sequence, out / "pulse.csv")
    bounds = duration_bounds(cfg.device)
    report = {
        "command": "optimize",
        "version": __version__,
        "target": cfg.target_name,
        "device": cfg.device.to_dict(),
        "best": best.to_dict(),
        "final": _final_metrics(cfg, best.sequence),
        "restarts": [
            {"seed": r.seed, "fidelity": r.fidelity, "iterations": r.iterations, "converged": r.converged}
            for r in reports
        ],
        "duration_bounds_ps": {
            "t_zz": list(bounds.t_zz),
            "t_x": list(bounds.t_x),
            "sequential_x": bounds.sequential_x,
            "two_pulse_x": bounds.two_pulse_x,
        },
    }
    write_json(report, out / "report.json")
    flag = "converged" if best.converged else "NOT converged"
    print(f"trace fidelity {best.fidelity:.12f} (seed {best.seed}, {best.iterations} iterations, {flag})")
    return EXIT_OK


def _parse_terms(text: str) -> list[int]:
    try:
        terms = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--harmonics expects comma-separated integers, got {text!r}") from None
    if not terms:
        raise ConfigError("--harmonics needs at least one term count")
    return terms


def cmd_analyze(args) -> int:
    cfg = _require_config(args)
    seq = _load_pulse(args, cfg)
    out = _out_dir(args, cfg)
    wanted = {name for name in ANALYSES if getattr(args, name)}
    harmonics = args.harmonics
    if not wanted:
        wanted = {name for name, on in cfg.analysis.items() if on}
        if harmonics is None and cfg.analysis.get("harmonics"):
            h = cfg.analysis["harmonics"]
            harmonics = ",".join(map(str, h)) if isinstance(h, list) else None
    if not wanted:
        wanted = set(ANALYSES)
    if cfg.device.n_qubits != 2:
        wanted.discard("weyl")
    summary: dict = {"command": "analyze", "final": _final_metrics(cfg, seq)}

    if "leakage" in wanted:
        rep = leakage_report(cfg.device, seq, cfg.target)
        write_json(rep.to_dict(), out / "leakage.json")
        summary["leakage"] = {
            "projected_fidelity": rep.projected_fidelity,
            "max_canonical_leakage": rep.max_canonical_leakage,
        }
    if "harmonics" in wanted:
        terms = _parse_terms(harmonics) if harmonics else [6] * seq.n_qubits
        if len(terms) == 1:
            terms = terms * seq.n_qubits
        fit = fit_harmonics(seq, terms, seed=cfg.seed)
        write_json(fit.to_dict(), out / "harmonics.json")
        summary["harmonics"] = {"n_terms": terms, "chi2": list(fit.chi2)}
    if "spectrum" in wanted:
        spec = spectrum(seq)
        f, mag = spec.one_sided()
        _write_rows(out / "spectrum.csv", ["freq_ghz"] + [f"mag{q + 1}" for q in range(seq.n_qubits)], np.column_stack([f, mag]))
        peak = [float(f[1 + np.argmax(mag[1:, q])]) for q in range(seq.n_qubits)]
        summary["spectrum"] = {"peak_freq_ghz": peak}
    if "transitions" in wanted:
        table = transition_table(cfg.device, cfg.device.ng0)
        table.to_csv(out / "transitions.csv")
        summary["transitions"] = {
            "max_allowed": table.max_element(ALLOWED),
            "max_forbidden": table.max_element(FORBIDDEN),
        }
        if "spectrum" in wanted:
            overlap = spectral_overlap(spec, table)
            rows = [[r.channel, r.freq_ghz, r.element, o] for r, o in zip(table.rows, overlap)]
            _write_rows(out / "overlap.csv", ["channel", "freq_ghz", "element", "overlap"], np.array(rows))
    if "weyl" in wanted:
        rows = weyl_trajectory(cfg.device, seq)
        write_weyl_csv(rows, out / "weyl.csv")
        summary["weyl"] = {"final": rows[-1, 1:].tolist()}
    if "bloch" in wanted:
        states = canonical_states(cfg.device.n_qubits)
        if cfg.device.n_qubits == 2:
            states.update(bell_states())
        for label, psi in states.items():
            simulate_trajectory(cfg.device, seq, psi).to_csv(out / f"bloch_{label}.csv")
        summary["bloch"] = {"states": sorted(states)}
    write_json(summary, out / "analysis.json")
    for key in ("leakage", "harmonics", "weyl"):
        if key in summary:
            print(f"{key}: {summary[key]}")
    return EXIT_OK


def _write_rows(path: Path, header: Sequence[str], rows: np.ndarray) -> None:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(rows)]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from None


def cmd_filter(args) -> int:
    cfg = _require_config(args)
    seq = _load_pulse(args, cfg)
    out = _out_dir(args, cfg)
    opts = cfg.filter

    def pick(flag, key, default):
        return flag if flag is not None else opts.get(key, default)

    design = design_filters(
        cfg.device,
        seq,
        cfg.target,
        n_pairs=pick(args.pairs, "n_pairs", 8),
        n_real=pick(args.real, "n_real", 2),
        rect_duration=pick(args.rect_ps, "rect_duration_ps", 1.1),
        sub_steps=pick(args.sub_steps, "sub_steps", 10),
        n_starts=pick(args.starts, "n_starts", 4),
        seed=cfg.seed,
    )
    for q, tf in enumerate(design.transfer_functions, start=1):
        write_transfer_json(tf, out / f"tf_q{q}.json")
        write_stages_csv(realize_stages(tf), out / f"stages_q{q}.csv")
        write_pole_table(tf, out / f"poles_q{q}.csv")
    write_pulse_csv(design.filtered, out / "filtered_pulse.csv")
    write_json({"command": "filter-fit", **design.to_dict()}, out / "filter_report.json")
    print(f"filtered fidelity: {design.fidelity:.6f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _require_config(args)
    seq = _load_pulse(args, cfg)
    out = _out_dir(args, cfg)
    states = canonical_states(cfg.device.n_qubits)
    if cfg.device.n_qubits == 2:
        states.update(bell_states())
    if args.initial is not None:
        if args.initial not in states:
            raise ConfigError(f"unknown initial state {args.initial!r}; choose from {', '.join(sorted(states))}")
        states = {args.initial: states[args.initial]}
    summary: dict = {"command": "simulate", "extended": args.extended, "final": _final_metrics(cfg, seq), "states": {}}
    for label, psi in states.items():
        traj = simulate_trajectory(cfg.device, seq, psi, extended=args.extended)
        traj.to_csv(out / f"trajectory_{label}.csv")
        summary["states"][label] = {"max_leakage": float(traj.leakage().max())}
    if cfg.device.n_qubits == 2:
        write_weyl_csv(weyl_trajectory(cfg.device, seq), out / "weyl.csv")
    write_json(summary, out / "simulate.json")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="run configuration JSON")
    parser.add_argument("--seed", type=int, default=default, help="base RNG seed (overrides the config)")
    parser.add_argument("--out", default=default, help="output directory (overrides the config)")
    parser.add_argument(
        "-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0,
        help="-v logs per-run results, -vv per-iteration fidelity",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chargeqoc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="synthesise a pulse for the configured target")
    _global_flags(p, suppress=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze", help="leakage, harmonic, spectral, transition and trajectory analyses")
    _global_flags(p, suppress=True)
    p.add_argument("--pulse", required=True, help="pulse CSV (t_ps, dng1, ...)")
    for name in ANALYSES:
        if name != "harmonics":
            p.add_argument(f"--{name}", action="store_true")
    p.add_argument("--harmonics", nargs="?", const="6", default=None, metavar="N1,N2", help="terms per channel")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("filter-fit", help="fit shaping filters and score the filtered gate")
    _global_flags(p, suppress=True)
    p.add_argument("--pulse", required=True)
    p.add_argument("--pairs", type=int, default=None, help="conjugate pole pairs per channel (default 8)")
    p.add_argument("--real", type=int, default=None, help="real poles per channel (default 2)")
    p.add_argument("--rect-ps", type=float, default=None, help="rectangular drive length in ps (default 1.1)")
    p.add_argument("--sub-steps", type=int, default=None, help="filter grid points per control slice (default 10)")
    p.add_argument("--starts", type=int, default=None, help="fit restarts per channel (default 4)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", help="state trajectories and Weyl path of a pulse")
    _global_flags(p, suppress=True)
    p.add_argument("--pulse", required=True)
    p.add_argument("--initial", default=None, help="initial state label, e.g. 00 or phi+")
    p.add_argument("--extended", action="store_true", help="evolve in the extended charge space")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except ArtifactIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # ConfigError and library argument checks
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
