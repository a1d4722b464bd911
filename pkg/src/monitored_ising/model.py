"""
Quadratic (Nambu) generators for the monitored Ising chain.

Nambu convention
----------------
The Nambu vector is ``Psi = (c_1, ..., c_L, c_1^dag, ..., c_L^dag)``. A quadratic
operator is stored as the 2L x 2L matrix ``M`` with

    Q = 1/2 * Psi^dag M Psi + tr(A) / 2,      M = [[A, B], [C, -A^T]],

with ``B`` and ``C`` antisymmetric, so that ``Q = sum A_ij c_i^dag c_j
+ 1/2 sum B_ij c_i^dag c_j^dag + 1/2 sum C_ij c_i c_j``. Every such ``M``
obeys ``tau_x M^T tau_x = -M`` and the commutator rule ``[Q, Psi] = -M Psi``.
For Hermitian ``Q`` additionally ``C = -B^*``, i.e. ``tau_x M tau_x = -M^*``.

With the Jordan-Wigner string ``K_i = prod_{j<i} (1 - 2 n_j)`` one has
``sigma^x_i sigma^x_{i+1} = c_i^dag c_{i+1} + c_i^dag c_{i+1}^dag + h.c.``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of one simulation point.

    ``gamma`` and ``dt`` are in units of ``J`` and ``1/J``. ``l_a`` defaults to
    ``L // 4`` (at least 1). ``anchor`` places the subsystem at the left boundary
    (``"boundary"``) or in the middle of the chain (``"center"``).
    """

    L: int
    J: float = 1.0
    gamma: float = 0.0
    dt: float = 0.005
    t_max: float = 10.0
    l_a: Optional[int] = None
    anchor: str = "boundary"

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L: need an integer >= 2, got {self.L!r}")
        if not self.dt > 0:
            raise ValueError(f"dt: must be positive, got {self.dt!r}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma: must be >= 0, got {self.gamma!r}")
        if not (self.t_max == 0 or self.t_max >= self.dt):
            raise ValueError(f"t_max: must be 0 or >= dt, got {self.t_max!r}")
        if self.l_a is None:
            object.__setattr__(self, "l_a", max(1, self.L // 4))
        if not 1 <= self.l_a <= self.L:
            raise ValueError(f"l_a: must lie in [1, L], got {self.l_a!r}")
        if self.anchor not in ("boundary", "center"):
            raise ValueError(f"anchor: expected 'boundary' or 'center', got {self.anchor!r}")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))

    def subsystem(self) -> range:
        """Zero-based site range of the entanglement subsystem."""
        start = 0 if self.anchor == "boundary" else (self.L - self.l_a) // 2
        return range(start, start + self.l_a)

    def fingerprint(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class NambuGenerator:
    matrix: np.ndarray
    hermitian: bool

    @property
    def L(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def constant(self) -> complex:
        """Additive constant ``tr(A)/2`` dropped by the quadratic form."""
        L = self.L
        return 0.5 * np.trace(self.matrix[:L, :L])


def particle_hole_swap(L: int) -> np.ndarray:
    tau = np.zeros((2 * L, 2 * L))
    tau[:L, L:] = np.eye(L)
    tau[L:, :L] = np.eye(L)
    return tau


def _nambu(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.block([[A, B], [C, -A.T]]).astype(complex)


def _ising_blocks(params: ModelParams):
    L, J = params.L, params.J
    A = np.zeros((L, L))
    B = np.zeros((L, L))
    for i in range(L - 1):
        A[i, i + 1] = A[i + 1, i] = J
        B[i, i + 1] = J
        B[i + 1, i] = -J
    return A, B


def build_hamiltonian_generator(params: ModelParams) -> NambuGenerator:
    """Nambu matrix of ``J sum_i (c_i^dag c_{i+1} + c_i^dag c_{i+1}^dag + h.c.)``, open chain."""
    A, B = _ising_blocks(params)
    return NambuGenerator(_nambu(A, B, -B), hermitian=True)


def build_effective_generator(params: ModelParams) -> NambuGenerator:
    """Nambu matrix of ``H_eff = H - i (gamma/2) sum_i n_i``.

    The damping only enters the number-conserving block; the resulting
    constant ``-i gamma L / 4`` is carried by :attr:`NambuGenerator.constant`.
    """
    A, B = _ising_blocks(params)
    A = A - 0.5j * params.gamma * np.eye(params.L)
    return NambuGenerator(_nambu(A, B, -B), hermitian=params.gamma == 0)


def many_body_spectrum(gen: NambuGenerator, tol: float = 1e-8) -> np.ndarray:
    """All 2^L many-body eigenvalues rebuilt from the single-particle spectrum.

    Eigenvalues of ``M`` come in pairs ``+-eps_k``; the many-body levels are
    ``tr(A)/2 + sum_k s_k eps_k / 2`` over all sign choices ``s``.
    """
    ev = list(np.linalg.eigvals(gen.matrix))
    eps = []
    while ev:
        e = ev.pop(0)
        j = int(np.argmin([abs(e + f) for f in ev]))
        if abs(e + ev[j]) > tol * max(1.0, abs(e)):
            raise ValueError("single-particle spectrum is not particle-hole paired")
        ev.pop(j)
        eps.append(e)
    levels = np.array([gen.constant])
    for e in eps:
        levels = np.concatenate([levels + e / 2, levels - e / 2])
    return levels


def quasiparticle_energy(k, gamma):
    """``2 sqrt(1 - gamma^2/16 + i (gamma/2) cos k)`` on the principal branch.

    Works elementwise on arrays.
    """
    k = np.asarray(k, dtype=float)
    return 2.0 * np.sqrt(_radicand(np.cos(k), gamma))


def _radicand(cosk, gamma):
    return (1.0 - gamma**2 / 16.0) + 0.5j * gamma * cosk


def k_grid(n_k: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform open grid on (0, pi) and its cosines.

    ``cos k`` is evaluated as ``sin(pi/2 - k)`` from integer offsets so that it is
    exactly zero at ``k = pi/2`` (present for odd ``n_k``).
    """
    if n_k < 2:
        raise ValueError("n_k must be >= 2")
    j = np.arange(1, n_k + 1)
    k = np.pi * j / (n_k + 1)
    cosk = np.sin(np.pi * (n_k + 1 - 2 * j) / (2 * (n_k + 1)))
    return k, cosk


def imaginary_gap(gamma: float, n_k: int = 1001) -> float:
    """Smallest ``|Im Lambda_k|`` over the k grid; opens for gamma > 4."""
    _, cosk = k_grid(n_k)
    lam = 2.0 * np.sqrt(_radicand(cosk, gamma))
    return float(np.min(np.abs(lam.imag)))
