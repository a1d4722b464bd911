import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_gaussian_modes
from monitored_ising.entanglement import majorana_covariance, entropy
from monitored_ising.gaussian import (
    CorrelationMatrix,
    GaussianState,
    NonUnitaryStateError,
    SingularStateError,
    complete_modes,
    correlation_matrix,
    energy,
    init_vacuum,
    load_snapshot,
    occupations_from_modes,
    qr_positive,
    renormalize,
    save_snapshot,
)
from monitored_ising.model import ModelParams, build_hamiltonian_generator
from monitored_ising.oracle import DenseState, two_point, fermionic_quadratic
import scipy.linalg


def _state(x, L):
    return GaussianState(complete_modes(x), L)


def test_vacuum_values():
    g = correlation_matrix(init_vacuum(4))
    np.testing.assert_array_equal(g.occupations(), np.zeros(4))
    np.testing.assert_allclose(g.g[:4, :4], 0)
    np.testing.assert_allclose(g.g[4:, 4:], np.eye(4))
    np.testing.assert_allclose(g.g[:4, 4:], 0)
    w = majorana_covariance(g)
    for a in (range(0, 1), range(1, 3), range(0, 4)):
        assert entropy(w, a) == 0.0


def test_vacuum_idempotent():
    g = correlation_matrix(init_vacuum(6)).g
    np.testing.assert_allclose(g @ g, g, atol=1e-15)


def test_vacuum_rejects_short_chain():
    with pytest.raises(ValueError, match="L"):
        init_vacuum(1)


def _check_invariants(g):
    L = g.shape[0] // 2
    np.testing.assert_allclose(g, g.conj().T, atol=1e-10)
    np.testing.assert_allclose(g @ g, g, atol=1e-8)
    assert abs(np.trace(g) - L) < 1e-8
    ev = np.linalg.eigvalsh(g)
    assert np.all(np.minimum(np.abs(ev), np.abs(ev - 1)) < 1e-7)
    occ = np.real(np.diag(g)[:L])
    assert np.all(occ > -1e-10) and np.all(occ < 1 + 1e-10)


@pytest.mark.parametrize("seed", range(50))
def test_random_states_satisfy_invariants(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 8))
    x, _ = random_gaussian_modes(L, rng)
    state = _state(x, L)
    assert state.unitarity_error() < 1e-12
    _check_invariants(correlation_matrix(state).g)


def test_correlation_matches_dense(rng):
    L = 3
    x, k = random_gaussian_modes(L, rng, scale=0.7)
    psi = scipy.linalg.expm(-1j * fermionic_quadratic(k)) @ DenseState.vacuum(L).amplitudes
    g_dense = two_point(DenseState(psi, L))
    np.testing.assert_allclose(correlation_matrix(_state(x, L)).g, g_dense, atol=1e-12)


def test_correlation_rejects_non_unitary(rng):
    x, _ = random_gaussian_modes(3, rng)
    with pytest.raises(NonUnitaryStateError):
        correlation_matrix(GaussianState(2.0 * complete_modes(x), 3))


def test_renormalize_unitary_is_noop(rng):
    x, _ = random_gaussian_modes(4, rng)
    u = complete_modes(x)
    out = renormalize(GaussianState(u, 4)).u_matrix
    # R of a unitary is diagonal and unimodular, so the positive gauge forces R = 1
    q, r = qr_positive(u)
    np.testing.assert_allclose(q @ r, u, atol=1e-12)
    np.testing.assert_allclose(r, np.eye(8), atol=1e-12)
    np.testing.assert_allclose(out, u, atol=1e-12)


def test_renormalize_removes_scaling(rng):
    x, _ = random_gaussian_modes(4, rng)
    u = complete_modes(x) @ np.diag(np.exp(rng.normal(size=8)))
    a = renormalize(GaussianState(u, 4)).u_matrix
    b = renormalize(GaussianState(3.0 * u, 4)).u_matrix
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert GaussianState(a, 4).unitarity_error() < 1e-12


def test_renormalize_idempotent(rng):
    u = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    once = renormalize(GaussianState(u, 4))
    twice = renormalize(once)
    np.testing.assert_allclose(once.u_matrix, twice.u_matrix, atol=1e-12)


def test_renormalize_singular():
    u = np.eye(6, dtype=complex)
    u[:, 2] = u[:, 1]
    with pytest.raises(SingularStateError):
        renormalize(GaussianState(u, 3))


def test_qr_positive_stacks(rng):
    a = rng.normal(size=(3, 10, 5)) + 1j * rng.normal(size=(3, 10, 5))
    q, r = qr_positive(a)
    np.testing.assert_allclose(q @ r, a, atol=1e-12)
    assert np.all(np.diagonal(r, axis1=-2, axis2=-1).real > 0)
    np.testing.assert_allclose(np.diagonal(r, axis1=-2, axis2=-1).imag, 0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_gauge_invariance(L, seed):
    rng = np.random.default_rng(seed)
    x, _ = random_gaussian_modes(L, rng)
    w = np.linalg.qr(rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L)))[0]
    g1 = correlation_matrix(_state(x, L)).g
    g2 = correlation_matrix(_state(x @ w, L)).g
    np.testing.assert_allclose(g1, g2, atol=1e-10)


def test_occupations_from_nonorthonormal_modes(rng):
    x, _ = random_gaussian_modes(5, rng)
    n = occupations_from_modes(x)
    mixed = x @ (rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
    np.testing.assert_allclose(occupations_from_modes(mixed, orthonormal=False), n, atol=1e-10)
    np.testing.assert_allclose(n, correlation_matrix(_state(x, 5)).occupations(), atol=1e-12)


def test_energy_matches_dense(rng):
    L = 3
    p = ModelParams(L=L, J=0.8)
    gen = build_hamiltonian_generator(p)
    x, k = random_gaussian_modes(L, rng, scale=0.5)
    psi = scipy.linalg.expm(-1j * fermionic_quadratic(k)) @ DenseState.vacuum(L).amplitudes
    h = fermionic_quadratic(gen.matrix, gen.constant)
    e_dense = np.vdot(psi, h @ psi)
    e = energy(correlation_matrix(_state(x, L)), gen)
    assert abs(e - e_dense) < 1e-12


def test_snapshot_roundtrip(rng):
    x, _ = random_gaussian_modes(4, rng)
    state = GaussianState(complete_modes(x), 4, step=123)
    buf = io.BytesIO()
    save_snapshot(state, buf)
    raw = buf.getvalue()
    assert raw[:4] == b"GSNP" and len(raw) == 24 + 16 * 64
    back = load_snapshot(io.BytesIO(raw))
    assert back.L == 4 and back.step == 123
    np.testing.assert_array_equal(back.u_matrix, state.u_matrix)
    with pytest.raises(ValueError):
        load_snapshot(io.BytesIO(raw[:-16]))
    with pytest.raises(ValueError):
        load_snapshot(io.BytesIO(b"XXXX" + raw[4:]))


def test_correlation_matrix_clips_occupations():
    g = np.diag([1 + 1e-12, -1e-12, -1e-12, 1e-12]).astype(complex)
    np.testing.assert_array_equal(CorrelationMatrix(g).occupations(), [1.0, 0.0])
