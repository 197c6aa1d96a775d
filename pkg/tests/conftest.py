import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)


def random_hermitian(rng, d, scale=1.0):
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (x + x.conj().T) / 2.0


def random_density(rng, d, rank=None):
    rank = rank or d
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_full_rank_state(rng, d, floor=0.05):
    rho = random_density(rng, d)
    rho = (1 - floor) * rho + floor * np.eye(d) / d
    return rho / np.trace(rho).real


def random_kraus(rng, d_in, d_out, n_kraus):
    ks = [rng.normal(size=(d_out, d_in)) + 1j * rng.normal(size=(d_out, d_in))
          for _ in range(n_kraus)]
    m = sum(k.conj().T @ k for k in ks)
    w, v = np.linalg.eigh(m)
    inv_root = (v / np.sqrt(w)) @ v.conj().T
    return [k @ inv_root for k in ks]


PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
