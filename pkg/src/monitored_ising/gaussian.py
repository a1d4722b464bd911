"""
Pure fermionic Gaussian states stored as a 2L x 2L unitary.

The first L columns ``X`` of ``u_matrix`` span the range of the correlation
matrix

    G_ab = <Psi^dag_a Psi_b>,   G = [[<c^dag c>, <c^dag c^dag>], [<c c>, <c c^dag>]],

so ``G = U P U^dag`` with ``P = diag(1_L, 0_L)``. The last L columns span the
range of ``1 - G = tau_x G^* tau_x``; for states produced by the steppers they
are exactly ``tau_x X^*``. The vacuum therefore has ``U = [[0, 1], [1, 0]]``.

A quadratic operator with Nambu matrix ``M`` (see :mod:`monitored_ising.model`)
acts as ``X -> exp(M^*) X``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from scipy.linalg import lapack

UNITARITY_GATE = 1e-6
SINGULAR_COND = 1e12

_GEQRF = lapack.zgeqrf
_UNGQR = lapack.zungqr


class SingularStateError(ArithmeticError):
    """Mode matrix too ill-conditioned to renormalize (time step too large)."""


class NonUnitaryStateError(ValueError):
    """Correlation matrix requested from a state that was not renormalized."""


@dataclass
class GaussianState:
    u_matrix: np.ndarray
    L: int
    step: int = 0

    @property
    def modes(self) -> np.ndarray:
        return self.u_matrix[:, : self.L]

    def unitarity_error(self) -> float:
        u = self.u_matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(2 * self.L))))


@dataclass(frozen=True)
class CorrelationMatrix:
    g: np.ndarray

    @property
    def L(self) -> int:
        return self.g.shape[0] // 2

    def occupations(self) -> np.ndarray:
        L = self.L
        return np.clip(np.real(np.diag(self.g)[:L]), 0.0, 1.0)


def init_vacuum(L: int) -> GaussianState:
    """State annihilated by every ``c_i`` (all spins in ``|0>``)."""
    if L < 2:
        raise ValueError(f"L: need L >= 2, got {L}")
    return GaussianState(complete_modes(vacuum_modes(L)), L)


def vacuum_modes(L: int) -> np.ndarray:
    x = np.zeros((2 * L, L), dtype=complex)
    x[L:, :] = np.eye(L)
    return x


def complete_modes(x: np.ndarray) -> np.ndarray:
    """``[X, tau_x X^*]``; works on stacks of shape (..., 2L, L)."""
    L = x.shape[-1]
    hole = np.concatenate([x[..., L:, :], x[..., :L, :]], axis=-2).conj()
    return np.concatenate([x, hole], axis=-1)


def correlation_matrix(state: GaussianState) -> CorrelationMatrix:
    err = state.unitarity_error()
    if err > UNITARITY_GATE:
        raise NonUnitaryStateError(f"u_matrix deviates from unitarity by {err:.2e}; renormalize first")
    x = state.modes
    return CorrelationMatrix(x @ x.conj().T)


def qr_positive(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR with the gauge ``diag(R) > 0``; stacks of shape (..., m, n) allowed."""
    a = np.asarray(a, dtype=complex)
    if a.ndim > 2:
        flat = a.reshape(-1, *a.shape[-2:])
        parts = [qr_positive(m) for m in flat]
        q = np.stack([p[0] for p in parts]).reshape(*a.shape[:-1], -1)
        r = np.stack([p[1] for p in parts]).reshape(*a.shape[:-2], q.shape[-1], a.shape[-1])
        return q, r
    m, n = a.shape
    k = min(m, n)
    qr, tau, _, info = _GEQRF(a)
    if info != 0:
        raise np.linalg.LinAlgError(f"geqrf failed with info={info}")
    r = np.triu(qr[:k, :])
    q, _, info = _UNGQR(qr[:, :k], tau)
    if info != 0:
        raise np.linalg.LinAlgError(f"ungqr failed with info={info}")
    d = np.diagonal(r)
    mag = np.abs(d)
    if mag.min() <= mag.max() / SINGULAR_COND:
        raise SingularStateError("numerically singular mode matrix in QR renormalization")
    phase = d / mag
    return q * phase, r * phase.conj()[:, None]


def renormalize(state: GaussianState) -> GaussianState:
    """Replace ``u_matrix`` by the Q factor of its QR decomposition (positive-diagonal gauge)."""
    q, _ = qr_positive(state.u_matrix)
    return GaussianState(q, state.L, state.step)


def orthonormalize_modes(x: np.ndarray) -> np.ndarray:
    """Thin positive-gauge QR of the first L columns, completed to a full unitary.

    Equals the full QR of ``[X, tau_x X^*]`` whenever the columns of ``X`` span
    an isotropic subspace, which every physical evolution preserves.
    """
    q, _ = qr_positive(x)
    return complete_modes(q)


def occupations_from_modes(x: np.ndarray, orthonormal: bool = True) -> np.ndarray:
    """``<n_i>`` from (stacked) modes; uses the range projector if not orthonormal."""
    L = x.shape[-1]
    if orthonormal:
        n = np.sum(np.abs(x[..., :L, :]) ** 2, axis=-1)
    else:
        gram = np.swapaxes(x.conj(), -1, -2) @ x
        sol = np.linalg.solve(gram, np.swapaxes(x[..., :L, :].conj(), -1, -2))
        n = np.real(np.einsum("...ik,...ki->...i", x[..., :L, :], sol))
    return n


def energy(corr: CorrelationMatrix, gen) -> complex:
    """``<Q>`` of the quadratic operator with Nambu generator ``gen``."""
    return 0.5 * np.sum(gen.matrix * corr.g) + gen.constant


# binary snapshot: magic, version, L, step, then row-major little-endian complex128
_MAGIC = b"GSNP"
_HEADER = struct.Struct("<4sIQQ")


def save_snapshot(state: GaussianState, fh: BinaryIO) -> None:
    fh.write(_HEADER.pack(_MAGIC, 1, state.L, state.step))
    fh.write(np.ascontiguousarray(state.u_matrix, dtype="<c16").tobytes())


def load_snapshot(fh: BinaryIO) -> GaussianState:
    magic, version, L, step = _HEADER.unpack(fh.read(_HEADER.size))
    if magic != _MAGIC or version != 1:
        raise ValueError("not a Gaussian state snapshot")
    n = 2 * L
    data = np.frombuffer(fh.read(16 * n * n), dtype="<c16")
    if data.size != n * n:
        raise ValueError("truncated snapshot")
    return GaussianState(data.reshape(n, n).astype(complex), int(L), int(step))
