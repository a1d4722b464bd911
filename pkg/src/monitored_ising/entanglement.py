"""
Entanglement entropy of Gaussian states through the Majorana covariance.

Majorana operators are ordered (site, species) interleaved:
``a_{2j} = c_j + c_j^dag`` and ``a_{2j+1} = i (c_j^dag - c_j)``. Their
correlations ``W_mn = <a_m a_n> = delta_mn + i w_mn`` define the real
antisymmetric matrix ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import CorrelationMatrix

ANTISYM_GATE = 1e-6
EIG_BAND = 1e-7


class EntropyError(ValueError):
    pass


@dataclass(frozen=True)
class MajoranaCovariance:
    w_tilde: np.ndarray

    @property
    def L(self) -> int:
        return self.w_tilde.shape[0] // 2


def majorana_transform(L: int) -> np.ndarray:
    """``Omega`` with ``a = Omega Psi`` in interleaved ordering."""
    om = np.zeros((2 * L, 2 * L), dtype=complex)
    for j in range(L):
        om[2 * j, j] = om[2 * j, L + j] = 1.0
        om[2 * j + 1, j] = -1j
        om[2 * j + 1, L + j] = 1j
    return om


def majorana_covariance(g: CorrelationMatrix) -> MajoranaCovariance:
    L = g.L
    om = majorana_transform(L)
    # a = a^dag = Omega^* Psi^dag, so <a a> = Omega^* G Omega^T
    w = om.conj() @ g.g @ om.T
    wt = -1j * (w - np.eye(2 * L))
    residue = max(np.max(np.abs(wt.imag)), np.max(np.abs(wt.real + wt.real.T)))
    if residue > ANTISYM_GATE:
        raise EntropyError(f"Majorana covariance not real antisymmetric (residue {residue:.2e})")
    wr = wt.real
    return MajoranaCovariance(0.5 * (wr - wr.T))


def _majorana_indices(subsystem) -> np.ndarray:
    sites = np.asarray(list(subsystem), dtype=int)
    return np.stack([2 * sites, 2 * sites + 1], axis=1).ravel()


def _check_subsystem(subsystem, L: int) -> None:
    sites = list(subsystem)
    if not sites or min(sites) < 0 or max(sites) >= L:
        raise EntropyError(f"subsystem {subsystem!r} outside chain of length {L}")
    if sites != list(range(sites[0], sites[0] + len(sites))):
        raise EntropyError("subsystem must be a contiguous site range")


def entropy_from_eigenvalues(lam: np.ndarray) -> np.ndarray:
    """Von Neumann entropy given the nonnegative eigenvalues ``lambda_k`` (last axis)."""
    lam = np.abs(lam)
    if np.any(lam > 1 + EIG_BAND):
        raise EntropyError(f"covariance eigenvalue {lam.max():.10f} outside [-1, 1]")
    lam = np.minimum(lam, 1.0)
    p = 0.5 * (1.0 + lam)
    q = 0.5 * (1.0 - lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(q > 0, q * np.log(q), 0.0)
    return h.sum(axis=-1)


def _paired_eigenvalues(iw: np.ndarray) -> np.ndarray:
    # i*w is Hermitian with spectrum +-lambda_k; keep the upper half
    ev = np.linalg.eigvalsh(iw)
    n = ev.shape[-1] // 2
    return ev[..., n:]


def entropy(w: MajoranaCovariance, subsystem) -> float:
    """Entropy (natural log) of a contiguous block of sites (zero-based range)."""
    _check_subsystem(subsystem, w.L)
    idx = _majorana_indices(subsystem)
    block = w.w_tilde[np.ix_(idx, idx)]
    return float(entropy_from_eigenvalues(_paired_eigenvalues(1j * block)))


def subsystem_entropy_from_modes(x: np.ndarray, subsystem) -> np.ndarray:
    """Entropy straight from (stacked) orthonormal modes ``X`` of shape (..., 2L, L).

    Only the rows of the subsystem sites enter, so this costs O(|A|^2 L).
    """
    L = x.shape[-1]
    _check_subsystem(subsystem, L)
    sites = np.asarray(list(subsystem), dtype=int)
    xa = x[..., np.concatenate([sites, sites + L]), :]
    ga = xa @ np.swapaxes(xa.conj(), -1, -2)
    n = len(sites)
    om = majorana_transform(n)
    w = om.conj() @ ga @ om.T
    iw = w - np.eye(2 * n)  # W - 1 = i w~, Hermitian
    iw = 0.5 * (iw + np.swapaxes(iw.conj(), -1, -2))
    return entropy_from_eigenvalues(_paired_eigenvalues(iw))
