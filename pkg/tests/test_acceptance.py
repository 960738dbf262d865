"""Acceptance suite: one or more tests per criterion.

Every test carries ``@pytest.mark.acceptance(n, title)``; the conftest hook
collects the outcomes and prints one PASS/FAIL line per criterion at the end
of the run.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from chargeqoc.artifacts import read_run_config
from chargeqoc.dynamics import duration_bounds, propagate, weyl_coordinates
from chargeqoc.filters import TransferFunction, apply_transfer, design_filters, fit_transfer, rect_pulse
from chargeqoc.grape import GateObjective, OptimizationConfig, multi_start, optimize, standard_targets
from chargeqoc.model import (
    CNOT_PARAMS,
    TOFFOLI_PARAMS,
    ControlSequence,
    DeviceParams,
    build_extended,
    build_total,
    computational_indices,
)
from chargeqoc.pulses import (
    ALLOWED,
    FORBIDDEN,
    HarmonicFit,
    fit_harmonics,
    harmonic_sequence,
    leakage_report,
    transition_table,
)
from conftest import CONFIGS
from oracles import (
    charge_hamiltonian,
    computational_block,
    finite_difference_gradient,
    gate_fidelity,
    interaction_gate,
    propagate_dense,
    pseudo_spin_hamiltonian_2q,
    random_su2,
    remove_trace,
    slice_hamiltonians_2q,
)

CNOT = standard_targets("cnot")
acceptance = pytest.mark.acceptance


# ---------------------------------------------------------------------------
# 1-3: synthesis and speed limits
# ---------------------------------------------------------------------------


@acceptance(1, "CNOT synthesis, 55 ps, best of 8")
def test_cnot_synthesis(cnot_run, record_property):
    best, reports = cnot_run
    wall = sum(r.wall_time for r in reports)
    record_property("detail", f"fidelity {best.fidelity:.12f}, {best.iterations} iterations, {wall:.0f} s total")
    assert best.fidelity >= 0.9999
    assert best.iterations <= 10_000
    assert best.sequence.duration == pytest.approx(55.0)
    assert wall <= 300.0


@acceptance(2, "infeasible at 30 ps")
def test_infeasible_duration(cnot_config, record_property):
    cfg = replace(cnot_config.optimization_config(), n_slices=50, dt=0.6)
    best, _ = multi_start(cnot_config.device, cfg, cnot_config.seeds())
    record_property("detail", f"best of 8 at T = {cfg.duration:.0f} ps: {best.fidelity:.6f}")
    assert best.fidelity < 0.99


@acceptance(3, "duration bounds")
def test_duration_bounds(record_property):
    b = duration_bounds(CNOT_PARAMS)
    record_property("detail", f"t_zz {b.t_zz[0]:.2f}, t_x {b.t_x[0]:.2f} / {b.t_x[1]:.2f} ps")
    assert b.t_zz[0] == pytest.approx(21.7, abs=0.1)
    assert b.t_x[0] == pytest.approx(22.9, abs=0.1)
    assert b.t_x[1] == pytest.approx(25.3, abs=0.1)


# ---------------------------------------------------------------------------
# 4: exact gradient vs finite differences of an independent propagator
# ---------------------------------------------------------------------------


@acceptance(4, "exact gradient vs finite differences")
def test_gradient_finite_differences(record_property):
    rng = np.random.default_rng(1)
    p = CNOT_PARAMS
    dt = 1.1
    obj = GateObjective(p, CNOT, dt)

    def oracle(amps):
        return gate_fidelity(propagate_dense(slice_hamiltonians_2q(p.ec, p.ej, p.em, p.ng0, amps), dt), CNOT)

    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        amps = rng.uniform(-0.3, 0.3, (10, 2))
        _, grad = obj.value_and_gradient(amps)
        fd = finite_difference_gradient(oracle, amps)
        worst = max(worst, float(np.max(np.abs(grad - fd) / np.abs(fd))))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"worst componentwise relative error {worst:.2e} ({elapsed:.1f} s)")
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# 5-6: extended charge space
# ---------------------------------------------------------------------------


@acceptance(5, "leakage of the converged CNOT pulse")
def test_leakage(cnot_pulse, record_property):
    rep = leakage_report(CNOT_PARAMS, cnot_pulse, CNOT)
    record_property(
        "detail", f"projected fidelity {rep.projected_fidelity:.5f}, max leakage {100 * rep.max_canonical_leakage:.3f} %"
    )
    assert rep.charge_levels == (-1, 0, 1, 2)
    assert rep.projected_fidelity > 0.99
    assert rep.max_canonical_leakage <= 0.01


@acceptance(6, "projection consistency")
def test_projection_consistency(record_property):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        ec = rng.uniform(50, 300, 2)
        ej = rng.uniform(1, 30, 2)
        em = rng.uniform(1, 50, 1)
        ng = rng.uniform(0, 1, 2)
        params = DeviceParams(ec=ec, ej=ej, em=em, ng0=rng.uniform(0, 1, 2))
        idx = computational_indices(2)
        block = build_extended(params, ng)[np.ix_(idx, idx)]
        spin = build_total(params, ng - np.array(params.ng0))
        ext_ref, states = charge_hamiltonian(ec, ej, em, ng)
        worst = max(
            worst,
            float(np.max(np.abs(remove_trace(block) - remove_trace(spin)))),
            float(np.max(np.abs(remove_trace(computational_block(ext_ref, states)) - remove_trace(spin)))),
            float(np.max(np.abs(remove_trace(pseudo_spin_hamiltonian_2q(ec, ej, em, ng)) - remove_trace(spin)))),
        )
    record_property("detail", f"max residual {worst:.1e} rad/ps over 100 draws")
    assert worst <= 1e-10


# ---------------------------------------------------------------------------
# 7-8: symmetries and invariants
# ---------------------------------------------------------------------------


@acceptance(7, "time-reversal symmetry")
def test_time_reversal(record_property):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        seq = ControlSequence(rng.uniform(-0.4, 0.4, (int(rng.integers(1, 60)), 2)), float(rng.uniform(0.2, 2.0)))
        u, _ = propagate(CNOT_PARAMS, seq)
        ur, _ = propagate(CNOT_PARAMS, seq.reversed())
        worst = max(worst, float(np.max(np.abs(ur - u.T))))
    record_property("detail", f"max |U(reversed) - U^T| {worst:.1e}")
    assert worst <= 1e-10


@acceptance(7, "time-reversal symmetry")
def test_palindromic_mode(record_property):
    cfg = OptimizationConfig(target=CNOT, n_slices=50, dt=1.1, symmetry=True, max_iters=300, rng_seed=0)
    amps = optimize(CNOT_PARAMS, cfg).sequence.amplitudes
    record_property("detail", "palindromic output mirror-symmetric")
    np.testing.assert_array_equal(amps, amps[::-1])


@acceptance(8, "Weyl coordinates")
def test_weyl_standard_gates(record_property):
    expected = {"cnot": (np.pi / 2, 0, 0), "identity": (0, 0, 0), "swap": (np.pi / 2, np.pi / 2, np.pi / 2)}
    worst = max(
        float(np.max(np.abs(weyl_coordinates(standard_targets(name)) - np.array(c)))) for name, c in expected.items()
    )
    record_property("detail", f"CNOT/identity/SWAP within {worst:.1e}")
    assert worst <= 1e-8


@acceptance(8, "Weyl coordinates")
def test_weyl_local_invariance(record_property):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        u = interaction_gate(*rng.uniform(-np.pi, np.pi, 3))
        dressed = np.kron(random_su2(rng), random_su2(rng)) @ u @ np.kron(random_su2(rng), random_su2(rng))
        worst = max(worst, float(np.max(np.abs(weyl_coordinates(dressed) - weyl_coordinates(u)))))
    record_property("detail", f"local dressings within {worst:.1e}")
    assert worst <= 1e-8


# ---------------------------------------------------------------------------
# 9: harmonic envelopes
# ---------------------------------------------------------------------------


@acceptance(9, "harmonic fit")
def test_harmonic_roundtrip(record_property):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(5):
        n = (4, 5)
        truth = HarmonicFit(
            [np.r_[rng.uniform(-20, 20), rng.uniform(3, 15, k - 1)] for k in n],
            [np.r_[0.0, np.sort(rng.choice(np.arange(5, 40) / 10, k - 1, replace=False))] for k in n],
            [np.r_[0.0, rng.uniform(0, 2 * np.pi, k - 1)] for k in n],
            55.0,
        )
        fit = fit_harmonics(harmonic_sequence(truth, 50), n)
        worst = max(worst, max(fit.chi2))
    record_property("detail", f"roundtrip chi2 {worst:.1e}")
    assert worst < 1e-10


@acceptance(9, "harmonic fit")
def test_harmonic_fit_cnot(cnot_pulse, record_property):
    fit = fit_harmonics(cnot_pulse, (6, 7))
    record_property("detail", f"CNOT pulse chi2 {fit.chi2[0]:.2e} / {fit.chi2[1]:.2e}")
    assert max(fit.chi2) <= 0.05


# ---------------------------------------------------------------------------
# 10: Toffoli
# ---------------------------------------------------------------------------


@acceptance(10, "Toffoli synthesis, 180 ps")
def test_toffoli(record_property):
    run = read_run_config(CONFIGS / "toffoli_chain.json")
    assert run.device == TOFFOLI_PARAMS
    cfg = run.optimization_config()
    best, reports = multi_start(run.device, cfg, run.seeds(), stop_at_goal=run.stop_at_goal)
    wall = sum(r.wall_time for r in reports)
    record_property(
        "detail",
        f"fidelity {best.fidelity:.8f} (seed {best.seed}, {best.iterations} iterations, {len(reports)} runs, {wall:.0f} s)",
    )
    assert cfg.duration == pytest.approx(180.0)
    assert best.fidelity >= 0.999
    assert best.iterations <= 20_000
    assert wall <= 1800.0


# ---------------------------------------------------------------------------
# 11: filter synthesis
# ---------------------------------------------------------------------------


@acceptance(11, "filter synthesis")
def test_filter_roundtrip(record_property):
    truth = TransferFunction(
        pair_poles=[-0.03 + 0.25j, -0.08 + 0.9j],
        pair_residues=[0.02 + 0.01j, -0.015 + 0.04j],
        real_poles=[-0.2],
        real_residues=[0.05],
    )
    drive = rect_pulse(1.1, 1.0, 0.11, 500)
    fit = fit_transfer(drive, apply_transfer(truth, drive), n_pairs=2, n_real=1)
    order = np.argsort(fit.tf.pair_poles.imag)
    err = max(
        float(np.max(np.abs(fit.tf.pair_poles[order] - truth.pair_poles) / np.abs(truth.pair_poles))),
        float(np.max(np.abs(fit.tf.pair_residues[order] - truth.pair_residues) / np.abs(truth.pair_residues))),
        float(np.max(np.abs(fit.tf.real_poles - truth.real_poles) / np.abs(truth.real_poles))),
        float(np.max(np.abs(fit.tf.real_residues - truth.real_residues) / np.abs(truth.real_residues))),
    )
    record_property("detail", f"roundtrip relative error {err:.1e}")
    assert err <= 1e-4


@acceptance(11, "filter synthesis")
def test_filtered_cnot(cnot_pulse, record_property):
    design = design_filters(CNOT_PARAMS, cnot_pulse, CNOT, n_pairs=8, n_real=2, rect_duration=1.1)
    record_property("detail", f"filtered gate fidelity {design.fidelity:.5f}")
    assert all(tf.n_pairs == 8 and tf.n_real == 2 and tf.is_stable() for tf in design.transfer_functions)
    assert design.fidelity >= 0.90


# ---------------------------------------------------------------------------
# 12: transition spectroscopy
# ---------------------------------------------------------------------------


@acceptance(12, "transition matrix elements")
def test_transitions_without_tunnelling(record_property):
    p = DeviceParams(ec=CNOT_PARAMS.ec, ej=(0.0, 0.0), em=CNOT_PARAMS.em, ng0=CNOT_PARAMS.ng0, strict=False)
    rng = np.random.default_rng(12)
    worst = max(max(r.element for r in transition_table(p, rng.uniform(0, 1, 2)).rows) for _ in range(10))
    record_property("detail", f"E_J = 0 off-diagonal max {worst:.1e}")
    assert worst <= 1e-12


@acceptance(12, "transition matrix elements")
def test_forbidden_below_allowed(record_property):
    table = transition_table(CNOT_PARAMS, CNOT_PARAMS.ng0)
    allowed, forbidden = table.max_element(ALLOWED), table.max_element(FORBIDDEN)
    record_property("detail", f"max forbidden {forbidden:.2e} < max allowed {allowed:.2e}")
    assert forbidden < allowed
