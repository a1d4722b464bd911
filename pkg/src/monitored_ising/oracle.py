"""
Dense exact simulator on the full 2^L Hilbert space (L <= 8).

Basis ordering: site 1 (index 0) is the lowest bit of the basis index, and a
set bit means the site is in ``|1>`` (``n_i = 1``). Fermions follow the
Jordan-Wigner map ``c_i = prod_{j<i} (1 - 2 n_j) |0><1|_i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np
import scipy.linalg

from .model import ModelParams

MAX_L = 8
MAX_L_LINDBLAD = 6

_I2 = np.eye(2)
_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_PAR = np.diag([1.0, -1.0])
_LOWER = np.array([[0.0, 1.0], [0.0, 0.0]])


def _check_size(L: int, cap: int = MAX_L) -> None:
    if L > cap:
        raise ValueError(f"dense oracle is capped at L={cap}, got L={L}")


def site_operator(op: np.ndarray, i: int, L: int, string: np.ndarray | None = None) -> np.ndarray:
    """Embed a one-site operator at site ``i``; ``string`` is applied to all sites < i."""
    factors = []
    for j in reversed(range(L)):
        if j == i:
            factors.append(op)
        elif j < i and string is not None:
            factors.append(string)
        else:
            factors.append(_I2)
    return reduce(np.kron, factors)


@lru_cache(maxsize=None)
def annihilators(L: int) -> tuple[np.ndarray, ...]:
    _check_size(L)
    return tuple(site_operator(_LOWER, i, L, string=_PAR) for i in range(L))


@lru_cache(maxsize=None)
def occupation_table(L: int) -> np.ndarray:
    """(2^L, L) array of bit occupations of every basis state."""
    idx = np.arange(2**L)
    return ((idx[:, None] >> np.arange(L)) & 1).astype(float)


def build_pauli_hamiltonian(params: ModelParams) -> np.ndarray:
    """``J sum_i sigma^x_i sigma^x_{i+1}`` with open boundaries."""
    L = params.L
    _check_size(L)
    h = np.zeros((2**L, 2**L))
    for i in range(L - 1):
        h += site_operator(_X, i, L) @ site_operator(_X, i + 1, L)
    return params.J * h


def build_dense_effective(params: ModelParams) -> np.ndarray:
    n_tot = occupation_table(params.L).sum(axis=1)
    return build_pauli_hamiltonian(params) - 0.5j * params.gamma * np.diag(n_tot)


def fermionic_quadratic(matrix: np.ndarray, constant: complex = 0.0) -> np.ndarray:
    """Dense image of ``1/2 Psi^dag M Psi + constant`` through Jordan-Wigner."""
    L = matrix.shape[0] // 2
    c = annihilators(L)
    psi = list(c) + [a.conj().T for a in c]
    psi_dag = [a.conj().T for a in c] + list(c)
    out = constant * np.eye(2**L, dtype=complex)
    for a in range(2 * L):
        for b in range(2 * L):
            if matrix[a, b] != 0:
                out = out + 0.5 * matrix[a, b] * (psi_dag[a] @ psi[b])
    return out


@dataclass
class DenseState:
    amplitudes: np.ndarray
    L: int

    @classmethod
    def vacuum(cls, L: int) -> "DenseState":
        _check_size(L)
        psi = np.zeros(2**L, dtype=complex)
        psi[0] = 1.0
        return cls(psi, L)

    def normalized(self) -> "DenseState":
        return DenseState(self.amplitudes / np.linalg.norm(self.amplitudes), self.L)


def occupations(state: DenseState) -> np.ndarray:
    p = np.abs(state.amplitudes) ** 2
    return p @ occupation_table(state.L) / p.sum()


def unitary_propagator(params: ModelParams) -> np.ndarray:
    """``exp(-i H dt)`` by eigendecomposition."""
    e, v = np.linalg.eigh(build_pauli_hamiltonian(params))
    return (v * np.exp(-1j * params.dt * e)) @ v.conj().T


def noclick_propagator(params: ModelParams) -> np.ndarray:
    return scipy.linalg.expm(-1j * params.dt * build_dense_effective(params))


def dense_qsd_step(state: DenseState, noise, params: ModelParams, propagator=None) -> DenseState:
    """One Trotterized step: ``exp(sum_i m_i n_i) exp(-i H dt)``, then normalize.

    ``m_i = dxi_i + gamma dt (2 <n_i> - 1)`` uses occupations before the step.
    """
    if propagator is None:
        propagator = unitary_propagator(params)
    n = occupations(state)
    m = np.asarray(noise) + params.gamma * params.dt * (2.0 * n - 1.0)
    diag = np.exp(occupation_table(state.L) @ m)
    psi = diag * (propagator @ state.amplitudes)
    return DenseState(psi, state.L).normalized()


def dense_noclick_step(state: DenseState, params: ModelParams, propagator=None) -> DenseState:
    if propagator is None:
        propagator = noclick_propagator(params)
    return DenseState(propagator @ state.amplitudes, state.L).normalized()


def two_point(state: DenseState) -> np.ndarray:
    """Correlation matrix ``<Psi^dag_a Psi_b>`` (same convention as the Gaussian engine)."""
    c = annihilators(state.L)
    psi = list(c) + [a.conj().T for a in c]
    v = state.amplitudes / np.linalg.norm(state.amplitudes)
    kets = np.array([op @ v for op in psi])
    return kets.conj() @ kets.T


def majorana_correlations(state: DenseState) -> np.ndarray:
    """``<a_m a_n>`` with the interleaved Majorana ordering."""
    c = annihilators(state.L)
    maj = []
    for a in c:
        ad = a.conj().T
        maj += [a + ad, 1j * (ad - a)]
    v = state.amplitudes / np.linalg.norm(state.amplitudes)
    kets = np.array([m @ v for m in maj])
    # a_m is Hermitian: <a_m a_n> = (a_m v)^dag (a_n v)
    return kets.conj() @ kets.T


def reduced_density_matrix(state: DenseState, subsystem) -> np.ndarray:
    L = state.L
    sites = sorted(subsystem)
    rest = [j for j in range(L) if j not in sites]
    # reshape axes: numpy axis k <-> site L-1-k
    psi = (state.amplitudes / np.linalg.norm(state.amplitudes)).reshape((2,) * L)
    axes_a = [L - 1 - j for j in reversed(sites)]
    axes_b = [L - 1 - j for j in reversed(rest)]
    m = np.transpose(psi, axes_a + axes_b).reshape(2 ** len(sites), -1)
    return m @ m.conj().T


def dense_entropy(state: DenseState, subsystem) -> float:
    p = np.linalg.eigvalsh(reduced_density_matrix(state, subsystem))
    p = p[p > 1e-15]
    return float(-np.sum(p * np.log(p)))


def dense_lindblad(params: ModelParams, t_grid, step: float = 0.0025, rho0=None):
    """Integrate ``drho/dt = -i[H, rho] - gamma/2 sum_i [n_i, [n_i, rho]]`` by RK4.

    Starts from ``rho0`` (default: the vacuum). Returns ``(occupations, rhos)`` sampled at ``t_grid``;
    raises ``FloatingPointError`` if trace, Hermiticity or positivity drift signals an
    unstable step size.
    """
    L = params.L
    _check_size(L, MAX_L_LINDBLAD)
    h = build_pauli_hamiltonian(params)
    nt = occupation_table(L)
    # double commutator with diagonal n_i is elementwise: sum_i (n_i(x) - n_i(y))^2
    deph = ((nt[:, None, :] - nt[None, :, :]) ** 2).sum(axis=2)
    g2 = 0.5 * params.gamma

    def rhs(rho):
        return -1j * (h @ rho - rho @ h) - g2 * deph * rho

    if rho0 is None:
        rho = np.zeros((2**L, 2**L), dtype=complex)
        rho[0, 0] = 1.0
    else:
        rho = np.array(rho0, dtype=complex)
    t = 0.0
    occ, rhos = [], []
    for target in np.asarray(t_grid, dtype=float):
        n_sub = int(np.ceil((target - t) / step - 1e-12))
        if n_sub > 0:
            hstep = (target - t) / n_sub
            for _ in range(n_sub):
                k1 = rhs(rho)
                k2 = rhs(rho + 0.5 * hstep * k1)
                k3 = rhs(rho + 0.5 * hstep * k2)
                k4 = rhs(rho + hstep * k3)
                rho = rho + hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target
        if (
            abs(np.trace(rho) - 1) > 1e-9
            or np.max(np.abs(rho - rho.conj().T)) > 1e-8
            or np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -1e-8
        ):
            raise FloatingPointError("Lindblad integration unstable; reduce the step")
        occ.append(np.real(np.diag(rho)) @ nt)
        rhos.append(rho.copy())
    return np.array(occ), rhos


def dense_trajectory(params: ModelParams, protocol: str, seed=None, stride: int = 1):
    """Dense counterpart of :func:`monitored_ising.dynamics.run_trajectory`.

    Consumes the identical noise stream for a given seed. Returns
    ``(times, entropies, correlation_matrices)`` sampled every ``stride`` steps.
    """
    from .dynamics import NoiseRealization, record_steps

    L = params.L
    sub = params.subsystem()
    state = DenseState.vacuum(L)
    if protocol == "qsd":
        prop = unitary_propagator(params)
        noise = NoiseRealization(seed, L, params.gamma, params.dt)
    else:
        prop = noclick_propagator(params)
    n_steps = params.n_steps
    sample_at = set(record_steps(n_steps, stride).tolist())
    times, ents, gs = [], [], []
    for step in range(n_steps + 1):
        if step in sample_at:
            times.append(step * params.dt)
            ents.append(dense_entropy(state, sub))
            gs.append(two_point(state))
        if step == n_steps:
            break
        if protocol == "qsd":
            state = dense_qsd_step(state, noise.next(), params, prop)
        else:
            state = dense_noclick_step(state, params, prop)
    return np.array(times), np.array(ents), np.array(gs)


def oracle_check(params: ModelParams, protocol: str, seed=None) -> dict:
    """Run the Gaussian engine and the dense simulator side by side.

    Every step is sampled. Returns the maximum deviations in the subsystem
    entropy and in the entries of the correlation matrix.
    """
    from .dynamics import evolve_batch

    seed = None if protocol == "noclick" else seed
    rec = evolve_batch(params, protocol, [seed], stride=1, keep_modes=True)[0]
    _, ents, gs = dense_trajectory(params, protocol, seed, stride=1)
    g_gauss = rec.modes @ np.swapaxes(rec.modes.conj(), -1, -2)
    return {
        "L": params.L,
        "protocol": protocol,
        "steps": params.n_steps,
        "max_dS": float(np.max(np.abs(rec.entropy - ents))),
        "max_dG": float(np.max(np.abs(g_gauss - gs))),
    }
