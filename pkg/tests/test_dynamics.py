"""Propagation, gate metrics, Weyl coordinates and trajectories."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from chargeqoc.dynamics import (
    bell_states,
    canonical_gate,
    canonical_states,
    canonicalize_weyl,
    chain_product,
    duration_bounds,
    expm_hermitian,
    forward_products,
    is_unitary,
    propagate,
    propagate_extended,
    reduced_bloch,
    reduced_density_matrix,
    simulate_trajectory,
    trace_fidelity,
    weyl_coordinates,
    weyl_trajectory,
)
from chargeqoc.grape import standard_targets
from chargeqoc.model import CNOT_PARAMS, TOFFOLI_PARAMS, ControlSequence, DeviceParams, computational_indices
from oracles import (
    interaction_gate,
    makhlin_invariants,
    propagate_dense,
    random_su2,
    slice_hamiltonians_2q,
)

amplitude_arrays = st.integers(min_value=1, max_value=12).flatmap(
    lambda n: st.lists(
        st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)), min_size=n, max_size=n
    )
)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------


class TestPropagate:
    def test_expm_hermitian_matches_scipy(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        h = a + a.conj().T
        np.testing.assert_allclose(expm_hermitian(h, 0.7), expm(-0.7j * h), atol=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        amps = rng.uniform(-0.2, 0.2, (20, 2))
        u, slices = propagate(CNOT_PARAMS, ControlSequence(amps, 1.1))
        p = CNOT_PARAMS
        ref = propagate_dense(slice_hamiltonians_2q(p.ec, p.ej, p.em, p.ng0, amps), 1.1)
        # the oracle carries the identity part of the charging energy: compare up to phase
        assert trace_fidelity(u, ref) == pytest.approx(1.0, abs=1e-12)
        assert slices.shape == (20, 4, 4)

    def test_chain_order(self):
        a = expm_hermitian(np.diag([1.0, -1.0]), 0.3)
        b = expm_hermitian(np.array([[0.0, 1.0], [1.0, 0.0]]), 0.3)
        np.testing.assert_allclose(chain_product(np.array([a, b])), b @ a)
        fwd = forward_products(np.array([a, b]))
        np.testing.assert_allclose(fwd[0], np.eye(2))
        np.testing.assert_allclose(fwd[2], b @ a)

    def test_wrong_channel_count(self):
        with pytest.raises(ValueError, match="drives 3 qubits"):
            propagate(CNOT_PARAMS, ControlSequence.zeros(4, 3, 1.0))

    @settings(max_examples=40, deadline=None)
    @given(amplitude_arrays)
    def test_unitary(self, amps):
        u, _ = propagate(CNOT_PARAMS, ControlSequence(np.array(amps), 1.1))
        assert is_unitary(u, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(amplitude_arrays)
    def test_time_reversal_transposes(self, amps):
        seq = ControlSequence(np.array(amps), 1.1)
        u, _ = propagate(CNOT_PARAMS, seq)
        ur, _ = propagate(CNOT_PARAMS, seq.reversed())
        np.testing.assert_allclose(ur, u.T, atol=1e-10)

    def test_extended_unitary_and_close_to_projection(self):
        seq = ControlSequence(np.zeros((10, 2)), 1.1)
        u_ext, _ = propagate_extended(CNOT_PARAMS, seq)
        assert u_ext.shape == (16, 16) and is_unitary(u_ext, atol=1e-12)
        idx = computational_indices(2)
        u, _ = propagate(CNOT_PARAMS, seq)
        assert trace_fidelity(u_ext[np.ix_(idx, idx)], u) > 0.98


# ---------------------------------------------------------------------------
# metrics and reduced states
# ---------------------------------------------------------------------------


class TestMetrics:
    def test_trace_fidelity_phase_invariant(self):
        u = standard_targets("cnot")
        assert trace_fidelity(np.exp(0.83j) * u, u) == pytest.approx(1.0, abs=1e-15)

    def test_trace_fidelity_orthogonal(self):
        x = np.array([[0, 1], [1, 0]], dtype=complex)
        assert trace_fidelity(x, np.eye(2)) == 0.0

    def test_reduced_density_matrix_product_state(self):
        a = np.array([np.cos(0.3), np.sin(0.3)])
        b = np.array([1.0, 1j]) / np.sqrt(2)
        rho = reduced_density_matrix(np.kron(a, b), 0)
        np.testing.assert_allclose(rho, np.outer(a, a), atol=1e-15)

    def test_bloch_of_bell_is_zero(self):
        for psi in bell_states().values():
            np.testing.assert_allclose(reduced_bloch(psi, 0), 0.0, atol=1e-15)
            np.testing.assert_allclose(reduced_bloch(psi, 1), 0.0, atol=1e-15)

    def test_bloch_of_basis_state(self):
        # |0> has <Z> = +1 in the sigma_z = |0><0| - |1><1| convention
        np.testing.assert_allclose(reduced_bloch(canonical_states(3)["010"], 1), [0, 0, -1], atol=1e-15)
        np.testing.assert_allclose(reduced_bloch(canonical_states(3)["010"], 2), [0, 0, 1], atol=1e-15)

    def test_reduced_state_size_checked(self):
        with pytest.raises(ValueError):
            reduced_density_matrix(np.ones(6) / np.sqrt(6), 0, 2)


# ---------------------------------------------------------------------------
# Weyl chamber
# ---------------------------------------------------------------------------


class TestWeyl:
    @pytest.mark.parametrize(
        "name, expected",
        [("cnot", (np.pi / 2, 0, 0)), ("identity", (0, 0, 0)), ("swap", (np.pi / 2, np.pi / 2, np.pi / 2))],
    )
    def test_standard_gates(self, name, expected):
        np.testing.assert_allclose(weyl_coordinates(standard_targets(name)), expected, atol=1e-8)

    def test_canonical_gate_roundtrip(self):
        c = (1.1, 0.6, 0.2)
        np.testing.assert_allclose(weyl_coordinates(canonical_gate(c)), c, atol=1e-10)

    def test_canonical_gate_matches_oracle(self):
        np.testing.assert_allclose(canonical_gate((0.4, 0.3, 0.1)), interaction_gate(0.4, 0.3, 0.1), atol=1e-13)

    def test_consistent_with_makhlin_invariants(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            c = np.sort(rng.uniform(0, np.pi / 2, 3))[::-1]
            c = canonicalize_weyl(c)
            g = interaction_gate(*weyl_coordinates(interaction_gate(*c)))
            np.testing.assert_allclose(makhlin_invariants(g), makhlin_invariants(interaction_gate(*c)), atol=1e-10)

    def test_rejects_non_unitary(self):
        with pytest.raises(ValueError, match="unitary"):
            weyl_coordinates(2 * np.eye(4))

    def test_chamber_ordering(self):
        c = canonicalize_weyl((-0.3, 2.9, 0.8))
        assert np.pi / 2 >= c[0] >= c[1] >= c[2] >= 0

    @settings(max_examples=50, deadline=None)
    @given(st.tuples(*[st.floats(-6.0, 6.0)] * 3), st.integers(0, 2**31))
    def test_local_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        u = interaction_gate(*c)
        dressed = np.kron(random_su2(rng), random_su2(rng)) @ u @ np.kron(random_su2(rng), random_su2(rng))
        np.testing.assert_allclose(weyl_coordinates(dressed), weyl_coordinates(u), atol=1e-8)

    def test_trajectory_starts_at_identity(self):
        seq = ControlSequence(np.zeros((5, 2)), 1.1)
        rows = weyl_trajectory(CNOT_PARAMS, seq)
        assert rows.shape == (6, 4)
        np.testing.assert_allclose(rows[0, 1:], 0.0, atol=1e-8)

    def test_trajectory_needs_two_qubits(self):
        with pytest.raises(ValueError):
            weyl_trajectory(TOFFOLI_PARAMS, ControlSequence.zeros(3, 3, 1.0))


# ---------------------------------------------------------------------------
# duration bounds
# ---------------------------------------------------------------------------


class TestDurationBounds:
    def test_cnot_numbers(self):
        b = duration_bounds(CNOT_PARAMS)
        assert b.t_zz[0] == pytest.approx(21.7, abs=0.1)
        assert b.t_x[0] == pytest.approx(22.9, abs=0.1)
        assert b.t_x[1] == pytest.approx(25.3, abs=0.1)
        assert b.sequential_x == pytest.approx(1e3 / 43.6 + 1e3 / 39.6, rel=1e-12)
        # 2 x 25.25 exactly; quoted as 50.6 from the rounded 25.3
        assert b.two_pulse_x == pytest.approx(50.5, abs=0.01)

    def test_round_number(self):
        b = duration_bounds(DeviceParams(ec=(100.0,), ej=(10.0,), em=(), ng0=(0.3,)))
        assert b.t_x == (25.0,) and b.t_zz == ()

    def test_coupling_time_gives_quarter_pi_zz(self):
        # E_m sigma_z sigma_z / 4 acting for t_zz is exp(-i pi/4 ZZ)
        t = duration_bounds(CNOT_PARAMS).t_zz[0]
        zz = np.diag([1.0, -1.0, -1.0, 1.0])
        u = expm_hermitian(2 * np.pi * 1e-3 * 23.0 / 4 * zz, t)
        np.testing.assert_allclose(u, expm(-0.25j * np.pi * zz), atol=1e-12)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


class TestTrajectory:
    def test_states_normalised(self):
        seq = ControlSequence(np.full((8, 2), 0.1), 1.1)
        traj = simulate_trajectory(CNOT_PARAMS, seq, canonical_states(2)["10"])
        np.testing.assert_allclose(np.linalg.norm(traj.states, axis=1), 1.0, atol=1e-12)
        assert traj.bloch.shape == (9, 2, 3)
        np.testing.assert_allclose(traj.leakage(), 0.0)

    def test_extended_leakage_small_and_bounded(self):
        seq = ControlSequence(np.zeros((8, 2)), 1.1)
        traj = simulate_trajectory(CNOT_PARAMS, seq, canonical_states(2)["00"], extended=True)
        leak = traj.leakage()
        assert traj.states.shape == (9, 16)
        assert leak[0] == 0.0 and np.all((leak >= 0) & (leak < 0.05))

    def test_rejects_unnormalised(self):
        with pytest.raises(ValueError, match="normalized"):
            simulate_trajectory(CNOT_PARAMS, ControlSequence.zeros(2, 2, 1.0), np.ones(4))

    def test_csv(self, tmp_path):
        seq = ControlSequence(np.zeros((3, 2)), 1.0)
        traj = simulate_trajectory(CNOT_PARAMS, seq, canonical_states(2)["01"])
        traj.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].split(",")[:3] == ["t_ps", "re0", "im0"]
        assert lines[0].endswith("bz2") and len(lines) == 5
