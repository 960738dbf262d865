"""Independent reference implementations used to cross-check the package.

Everything here is written from the physics directly (explicit charge-state
loops, dense ``scipy.linalg.expm``, finite differences, Makhlin invariants)
and shares no code paths with ``chargeqoc`` beyond numpy/scipy.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import expm

TWO_PI_GHZ = 2 * np.pi * 1e-3  # GHz -> rad/ps


def charge_hamiltonian(ec, ej, em, ng, levels=(-1, 0, 1, 2)):
    """Charge-basis Hamiltonian (rad/ps) built element by element."""
    n = len(ec)
    states = list(itertools.product(levels, repeat=n))
    index = {s: i for i, s in enumerate(states)}
    h = np.zeros((len(states), len(states)))
    for s in states:
        i = index[s]
        diag = sum(ec[q] * (s[q] - ng[q]) ** 2 for q in range(n))
        diag += sum(em[q] * (s[q] - ng[q]) * (s[q + 1] - ng[q + 1]) for q in range(n - 1))
        h[i, i] = diag
        for q in range(n):
            t = list(s)
            t[q] += 1
            t = tuple(t)
            if t in index:
                h[i, index[t]] -= ej[q] / 2
                h[index[t], i] -= ej[q] / 2
    return TWO_PI_GHZ * h, states


def computational_block(h, states):
    """Restriction of a charge Hamiltonian to island charges in {0, 1}.

    Ordered so that charge 0 is pseudo-spin |0>, big-endian over qubits.
    """
    n = len(states[0])
    keep = [states.index(bits) for bits in itertools.product((0, 1), repeat=n)]
    return h[np.ix_(keep, keep)]


def pseudo_spin_hamiltonian_2q(ec, ej, em, ng):
    """Two-qubit pseudo-spin Hamiltonian written out as a 4x4 matrix.

    Diagonal entries are the charging energies of |n1 n2> with n in {0,1},
    minus a constant; the off-diagonals are the Josephson hops.
    """
    h = np.zeros((4, 4))
    for k, (n1, n2) in enumerate(itertools.product((0, 1), repeat=2)):
        h[k, k] = ec[0] * (n1 - ng[0]) ** 2 + ec[1] * (n2 - ng[1]) ** 2 + em[0] * (n1 - ng[0]) * (n2 - ng[1])
    for a, b in ((0, 2), (1, 3)):
        h[a, b] = h[b, a] = -ej[0] / 2
    for a, b in ((0, 1), (2, 3)):
        h[a, b] = h[b, a] = -ej[1] / 2
    return TWO_PI_GHZ * h


def remove_trace(h):
    return h - np.trace(h) / h.shape[0] * np.eye(h.shape[0])


def propagate_dense(hamiltonians, dt):
    """Time-ordered product of ``expm(-i H_k dt)``."""
    u = np.eye(hamiltonians[0].shape[0], dtype=complex)
    for h in hamiltonians:
        u = expm(-1j * dt * h) @ u
    return u


def slice_hamiltonians_2q(ec, ej, em, ng0, amplitudes):
    return [pseudo_spin_hamiltonian_2q(ec, ej, em, np.asarray(ng0) + a) for a in amplitudes]


def gate_fidelity(u, v):
    return abs(np.trace(v.conj().T @ u)) / u.shape[0]


def finite_difference_gradient(fun, x, h=1e-6):
    """Central differences of a scalar function of a float array."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def single_slice_gradient(ec, ej, ng, dt):
    """Closed-form dPhi/dng for one qubit, one slice, identity target.

    ``H = w (a sigma_z + b sigma_x)`` with ``a = Ec (ng - 1/2)``, ``b = -EJ/2``
    and ``w = 2 pi 1e-3``, so ``tr U = 2 cos(theta)`` with
    ``theta = w dt sqrt(a^2 + b^2)`` and ``Phi = |cos theta|``.
    """
    a = ec * (ng - 0.5)
    b = -ej / 2
    r = np.hypot(a, b)
    theta = TWO_PI_GHZ * dt * r
    dtheta = TWO_PI_GHZ * dt * a * ec / r
    return -np.sign(np.cos(theta)) * np.sin(theta) * dtheta, abs(np.cos(theta))


# -- two-qubit invariants ---------------------------------------------------

_MAGIC = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]]) / np.sqrt(2)


def makhlin_invariants(u):
    """Local invariants ``(G1, G2)``: ``G1 = tr^2(m) / (16 det u)``,
    ``G2 = (tr^2(m) - tr(m^2)) / (4 det u)`` with ``m = u_B^T u_B``."""
    ub = _MAGIC.conj().T @ u @ _MAGIC
    m = ub.T @ ub
    det = np.linalg.det(u)
    tr = np.trace(m)
    return tr**2 / (16 * det), (tr**2 - np.trace(m @ m)) / (4 * det)


def interaction_gate(c1, c2, c3):
    x = np.array([[0, 1], [1, 0]])
    y = np.array([[0, -1j], [1j, 0]])
    z = np.diag([1, -1])
    h = c1 * np.kron(x, x) + c2 * np.kron(y, y) + c3 * np.kron(z, z)
    return expm(0.5j * h)


def random_su2(rng):
    q, r = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    q = q * (np.diag(r) / abs(np.diag(r)))
    return q / np.sqrt(np.linalg.det(q))


# -- filters ----------------------------------------------------------------


def convolve_dense(impulse, drive_duration, t_out, n_quad=4001):
    """``y(t) = int_0^min(t, tau) h(t - s) ds`` for a unit rectangle of length ``tau``,
    by composite Simpson quadrature on each output time."""
    from scipy.integrate import simpson

    out = np.zeros_like(t_out)
    for i, t in enumerate(t_out):
        upper = min(t, drive_duration)
        if upper <= 0:
            continue
        s = np.linspace(0.0, upper, n_quad)
        out[i] = simpson(impulse(t - s), x=s)
    return out
