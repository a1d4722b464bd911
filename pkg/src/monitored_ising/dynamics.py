"""
Time stepping of Gaussian trajectory states.

Both protocols act on the orthonormal modes ``X`` (first L columns of the
state unitary) as ``X -> exp(M^*) X`` for a quadratic generator ``M``:

* QSD: first the unitary factor ``exp(-i H dt)``, i.e. ``exp(+i dt h^*)`` on the
  modes, then the diagonal measurement factor ``exp(sum_i m_i n_i)`` with
  ``m_i = dxi_i + gamma dt (2 <n_i> - 1)``, which acts as ``exp(+m_i)`` on the
  particle rows and ``exp(-m_i)`` on the hole rows. ``<n_i>`` is read from the
  state before the step.
* No-click: ``exp(-i H_eff dt)``, i.e. ``exp(+i dt M_eff^*)`` on the modes.

QR renormalization restores the norm after every ``renorm_every`` steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .entanglement import subsystem_entropy_from_modes
from .gaussian import (
    GaussianState,
    SingularStateError,
    complete_modes,
    occupations_from_modes,
    orthonormalize_modes,
    qr_positive,
    vacuum_modes,
)
from .model import ModelParams, build_effective_generator, build_hamiltonian_generator

PROTOCOLS = ("qsd", "noclick")
NOISE_CHUNK = 256
OCC_BAND = 1e-8
# entries this small in unit-norm modes are flushed to keep LAPACK off subnormals
FLUSH_BELOW = 1e-30


class StepError(RuntimeError):
    """A stepper failed; carries the step index (and the seed when known)."""

    def __init__(self, message: str, step: int, seed: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.seed = seed


def split_seed(master_seed: int, index: int) -> int:
    """Per-trajectory 64-bit seed derived from ``(master_seed, index)``.

    Uses numpy's ``SeedSequence`` spawn keys, so streams for distinct indices
    are independent and do not depend on execution order.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class NoiseRealization:
    """Wiener increments ``dxi_i ~ N(0, gamma dt)`` from a Philox stream.

    Increments are drawn in fixed chunks of ``NOISE_CHUNK`` steps, so the
    stream depends on the seed only.
    """

    def __init__(self, seed: int, L: int, gamma: float, dt: float):
        self.seed = int(seed)
        self.L = L
        self.scale = float(np.sqrt(gamma * dt))
        self._rng = np.random.Generator(np.random.Philox(self.seed))
        self._buf = np.empty((0, L))
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos == len(self._buf):
            self._buf = self._rng.normal(0.0, 1.0, size=(NOISE_CHUNK, self.L)) * self.scale
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return row


@dataclass(frozen=True)
class StepperConfig:
    protocol: str
    fingerprint: str
    gamma: float
    dt: float
    unitary: np.ndarray
    nonhermitian: Optional[np.ndarray] = None
    renorm_every: int = 1
    bond_gate: Optional[np.ndarray] = None

    def check(self, params: ModelParams) -> None:
        if params.fingerprint() != self.fingerprint:
            raise ValueError("stepper propagators were built for different parameters")

    def apply_unitary(self, x: np.ndarray) -> np.ndarray:
        """``exp(+i dt h^*) @ x`` via the commuting bond gates (stacks allowed)."""
        if self.bond_gate is None:
            return self.unitary @ x
        L = x.shape[-1]
        x = np.array(x, dtype=complex)
        lead = x.shape[:-2]
        for first in (0, 1):
            nb = (L - first) // 2
            if nb == 0:
                continue
            part = x[..., first : first + 2 * nb, :].reshape(*lead, nb, 2, L)
            hole = x[..., L + first : L + first + 2 * nb, :].reshape(*lead, nb, 2, L)
            out = self.bond_gate @ np.concatenate([part, hole], axis=-2)
            x[..., first : first + 2 * nb, :] = out[..., :2, :].reshape(*lead, 2 * nb, L)
            x[..., L + first : L + first + 2 * nb, :] = out[..., 2:, :].reshape(*lead, 2 * nb, L)
        return x


def bond_generator(J: float) -> np.ndarray:
    """Nambu block of one bond on rows ``(c_i, c_{i+1}, c_i^dag, c_{i+1}^dag)``."""
    a = np.array([[0.0, J], [J, 0.0]])
    b = np.array([[0.0, J], [-J, 0.0]])
    return np.block([[a, b], [-b, -a]])


def _expm_hermitian(h: np.ndarray, coeff: complex) -> np.ndarray:
    e, v = np.linalg.eigh(h)
    return (v * np.exp(coeff * e)) @ v.conj().T


def precompute_propagators(params: ModelParams, protocol: str, renorm_every: int = 1) -> StepperConfig:
    """Mode propagators for one time step.

    The unitary part ``exp(+i dt h^*)`` uses an eigendecomposition; the
    non-Hermitian one ``exp(+i dt M_eff^*)`` uses scaling and squaring.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol: expected one of {PROTOCOLS}, got {protocol!r}")
    if renorm_every < 1:
        raise ValueError("renorm_every must be >= 1")
    h = build_hamiltonian_generator(params).matrix.conj()
    try:
        unitary = _expm_hermitian(h, 1j * params.dt)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed while building propagators: {exc}") from exc
    # sigma^x sigma^x bonds commute, so the bond gates factor exp(i dt h^*) exactly
    bond_gate = _expm_hermitian(bond_generator(params.J).conj(), 1j * params.dt)
    nonherm = None
    if protocol == "noclick":
        a = 1j * params.dt * build_effective_generator(params).matrix.conj()
        nonherm = scipy.linalg.expm(a)
        check = nonherm @ scipy.linalg.expm(-a) - np.eye(len(a))
        if np.max(np.abs(check)) > 1e-10:
            raise RuntimeError("matrix exponential failed the inverse check")
    return StepperConfig(
        protocol, params.fingerprint(), params.gamma, params.dt, unitary, nonherm, renorm_every, bond_gate
    )


def _advance(state: GaussianState, x: np.ndarray, cfg: StepperConfig) -> GaussianState:
    step = state.step + 1
    if step % cfg.renorm_every == 0:
        u = orthonormalize_modes(x)
    else:
        u = complete_modes(x)
    return GaussianState(u, state.L, step)


def measurement_factor(noise, occupations, gamma: float, dt: float) -> np.ndarray:
    """``m_i = dxi_i + gamma dt (2 <n_i> - 1)`` (stacks allowed)."""
    return np.asarray(noise) + gamma * dt * (2.0 * np.asarray(occupations) - 1.0)


def qsd_step(state: GaussianState, cfg: StepperConfig, noise, occupations) -> GaussianState:
    occupations = np.asarray(occupations, dtype=float)
    if np.any(occupations < -OCC_BAND) or np.any(occupations > 1 + OCC_BAND):
        raise ValueError("occupations must lie in [0, 1]")
    L = state.L
    m = measurement_factor(noise, occupations, cfg.gamma, cfg.dt)
    x = cfg.unitary @ state.modes
    x[:L] *= np.exp(m)[:, None]
    x[L:] *= np.exp(-m)[:, None]
    return _advance(state, x, cfg)


def noclick_step(state: GaussianState, cfg: StepperConfig) -> GaussianState:
    if cfg.nonhermitian is None:
        raise ValueError("stepper config was not built for the no-click protocol")
    return _advance(state, cfg.nonhermitian @ state.modes, cfg)


@dataclass
class TrajectoryRecord:
    fingerprint: str
    seed: Optional[int]
    times: np.ndarray
    entropy: np.ndarray
    occupations: np.ndarray = field(repr=False)
    modes: Optional[np.ndarray] = field(default=None, repr=False)


def record_steps(n_steps: int, stride: int = 10, log_samples: Optional[int] = None) -> np.ndarray:
    """Step indices at which a trajectory is sampled (always includes 0 and the last step)."""
    if log_samples:
        pts = np.geomspace(1, max(n_steps, 1), log_samples)
        steps = np.unique(np.concatenate([[0], np.round(pts).astype(int), [n_steps]]))
    else:
        steps = np.unique(np.concatenate([np.arange(0, n_steps + 1, max(1, stride)), [n_steps]]))
    return steps[steps <= n_steps]


def evolve_batch(
    params: ModelParams,
    protocol: str,
    seeds: Sequence[Optional[int]],
    stride: int = 10,
    log_samples: Optional[int] = None,
    cfg: Optional[StepperConfig] = None,
    keep_modes: bool = False,
    noise_sources: Optional[Sequence] = None,
) -> list[TrajectoryRecord]:
    """Evolve several trajectories at once on stacked mode matrices.

    Same arithmetic as repeated :func:`qsd_step` / :func:`noclick_step` calls;
    trajectories only share the propagators. ``keep_modes`` stores the
    orthonormal modes at every sample (memory O(samples L^2)).
    ``noise_sources`` replaces the per-seed :class:`NoiseRealization` streams
    with any objects exposing ``next() -> dxi``.
    """
    if cfg is None:
        cfg = precompute_propagators(params, protocol)
    cfg.check(params)
    L, B = params.L, len(seeds)
    n_steps = params.n_steps
    sample_at = record_steps(n_steps, stride, log_samples)
    sub = params.subsystem()
    noises = None
    if protocol == "qsd":
        if noise_sources is not None:
            if len(noise_sources) != B:
                raise ValueError("need one noise source per trajectory")
            noises = list(noise_sources)
        else:
            noises = [NoiseRealization(s, L, params.gamma, params.dt) for s in seeds]

    x = np.broadcast_to(vacuum_modes(L), (B, 2 * L, L)).copy()
    ent = np.zeros((len(sample_at), B))
    occ = np.zeros((len(sample_at), B, L))
    kept = np.zeros((len(sample_at), B, 2 * L, L), dtype=complex) if keep_modes else None
    orthonormal = True
    k = 0
    for step in range(n_steps + 1):
        if step == sample_at[k]:
            xs = x if orthonormal else qr_positive(x)[0]
            ent[k] = subsystem_entropy_from_modes(xs, sub)
            occ[k] = occupations_from_modes(xs)
            if keep_modes:
                kept[k] = xs
            k += 1
        if step == n_steps:
            break
        try:
            if protocol == "qsd":
                n = occupations_from_modes(x, orthonormal)
                if np.any(n < -OCC_BAND) or np.any(n > 1 + OCC_BAND):
                    raise ValueError("occupations left [0, 1]")
                dxi = np.stack([nz.next() for nz in noises])
                m = measurement_factor(dxi, n, params.gamma, params.dt)
                x = cfg.apply_unitary(x)
                x[:, :L] *= np.exp(m)[:, :, None]
                x[:, L:] *= np.exp(-m)[:, :, None]
            else:
                x = cfg.nonhermitian @ x
            if (step + 1) % cfg.renorm_every == 0:
                x = qr_positive(x)[0]
                x[np.abs(x) < FLUSH_BELOW] = 0.0
                orthonormal = True
            else:
                orthonormal = False
        except (SingularStateError, ValueError, np.linalg.LinAlgError) as exc:
            seed = seeds[0] if B == 1 else None
            raise StepError(f"{protocol} step {step + 1} failed: {exc}", step + 1, seed) from exc

    times = sample_at * params.dt
    fp = params.fingerprint()
    return [
        TrajectoryRecord(
            fp, seeds[b], times.copy(), ent[:, b].copy(), occ[:, b].copy(), None if kept is None else kept[:, b].copy()
        )
        for b in range(B)
    ]


def run_trajectory(
    params: ModelParams,
    protocol: str,
    seed: Optional[int] = None,
    stride: int = 10,
    log_samples: Optional[int] = None,
) -> TrajectoryRecord:
    """Evolve the all-``|0>`` state for ``ceil(t_max/dt)`` steps and sample ``S(t)`` and ``<n_i>``.

    The seed is ignored (stored as ``None``) for the deterministic no-click protocol.
    """
    if protocol == "noclick":
        seed = None
    elif seed is None:
        raise ValueError("qsd trajectories need a seed")
    return evolve_batch(params, protocol, [seed], stride, log_samples)[0]
