import numpy as np
import pytest
import scipy.linalg

from monitored_ising.gaussian import vacuum_modes


def random_nambu_hermitian(L: int, rng: np.random.Generator) -> np.ndarray:
    """Nambu matrix of a random Hermitian quadratic operator."""
    a = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    a = a + a.conj().T
    b = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    b = b - b.T
    return np.block([[a, b], [-b.conj(), -a.T]])


def random_gaussian_modes(L: int, rng: np.random.Generator, scale: float = 1.0):
    """Modes of exp(-iQ)|vac> for a random Hermitian quadratic Q, plus Q's Nambu matrix."""
    k = scale * random_nambu_hermitian(L, rng)
    return scipy.linalg.expm(1j * k.conj()) @ vacuum_modes(L), k


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
