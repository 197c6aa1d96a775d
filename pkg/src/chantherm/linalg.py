"""Dense Hermitian linear algebra: spectral decompositions with deterministic
conventions, matrix functions, tensor products, partial traces, norms.

All operators are plain complex numpy arrays in row-major subsystem ordering:
the composite index of (i_X, i_Y) under ``tensor`` is i_X*dim_Y + i_Y.
Eigendecompositions fix phases and tie order so that every downstream result
is bit-reproducible for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "HermitianError",
    "Spectrum",
    "assert_hermitian",
    "eig_hermitian",
    "matrix_function",
    "mat_exp",
    "mat_log",
    "mat_sqrt",
    "mat_inv_sqrt",
    "mat_power",
    "tensor",
    "kron_all",
    "partial_trace",
    "trace_norm",
    "frobenius",
    "hermitize",
    "hermitian_basis",
    "traceless_hermitian_basis",
    "EIG_FLOOR",
]

# Absolute eigenvalue floor below which log / inv_sqrt refuse to evaluate.
EIG_FLOOR = 1e-12

MAX_DIM = 4096


class HermitianError(ValueError):
    """Input violates a Hermitian-operator precondition."""


def frobenius(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))


def hermitize(x: np.ndarray) -> np.ndarray:
    """Average a matrix with its conjugate transpose."""
    x = np.asarray(x, dtype=complex)
    return (x + x.conj().T) / 2.0


def assert_hermitian(h: np.ndarray, *, name: str = "operator", rtol: float = 1e-12) -> np.ndarray:
    """Validate Hermiticity within rtol * (max absolute entry); return as complex array."""
    h = np.ascontiguousarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise HermitianError(f"{name} must be a square matrix, got shape {h.shape}")
    if not np.all(np.isfinite(h.view(float))):
        raise HermitianError(f"{name} contains non-finite entries")
    scale = float(np.max(np.abs(h))) if h.size else 0.0
    # atol picks up the all-zero matrix
    dev = float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0
    if dev > rtol * max(scale, 1e-300) and dev > 1e-300:
        if dev > rtol * scale + 1e-15:
            raise HermitianError(
                f"{name} is not Hermitian: max deviation {dev:.3e} exceeds "
                f"{rtol:.1e} * (max |entry| = {scale:.3e})"
            )
    return h


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition of a Hermitian operator.

    eigenvalues are ascending; eigenvector columns are orthonormal and
    phase-fixed (first component of magnitude above a relative cutoff made
    real positive).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column so its first significantly-nonzero entry is real positive."""
    vecs = vecs.copy()
    d, n = vecs.shape
    absv = np.abs(vecs)
    cutoff = 1e-8 * np.maximum(absv.max(axis=0), 1e-300)
    for k in range(n):
        idx = np.nonzero(absv[:, k] > cutoff[k])[0]
        j = idx[0] if idx.size else int(np.argmax(absv[:, k]))
        z = vecs[j, k]
        if z != 0:
            vecs[:, k] *= np.conj(z) / abs(z)
            # kill the residual imaginary dust on the anchor entry
            vecs[j, k] = vecs[j, k].real
    return vecs


def eig_hermitian(h: np.ndarray) -> Spectrum:
    """Spectral decomposition with deterministic ordering.

    Ascending eigenvalues; exact eigenvalue ties are broken by lexicographic
    comparison of the phase-fixed eigenvector entries (real part then
    imaginary part, row by row).
    """
    h = assert_hermitian(h, name="eig_hermitian input")
    if h.shape[0] > MAX_DIM:
        raise HermitianError(f"dimension {h.shape[0]} exceeds supported maximum {MAX_DIM}")
    w, v = np.linalg.eigh(h)
    v = _fix_phases(v)
    # stable sort on eigenvalue; within exact ties order by eigenvector entries
    order = np.arange(len(w))
    # detect exact-duplicate eigenvalues (float equality after eigh's own sort)
    if len(w) > 1 and np.any(np.diff(w) == 0.0):
        keys = []
        for k in range(len(w)):
            col = v[:, k]
            keys.append((w[k],) + tuple(np.stack([col.real, col.imag], axis=1).ravel()))
        order = np.array(sorted(range(len(w)), key=lambda k: keys[k]))
        w = w[order]
        v = v[:, order]
    return Spectrum(eigenvalues=w, eigenvectors=v)


def _apply_scalar(tag, eigs: np.ndarray) -> np.ndarray:
    if tag == "exp":
        return np.exp(eigs)
    if tag == "log":
        _check_floor(eigs, "log")
        return np.log(eigs)
    if tag == "sqrt":
        if np.min(eigs) < -EIG_FLOOR:
            raise HermitianError(
                f"sqrt requires positive semidefinite input; smallest eigenvalue {np.min(eigs):.3e}"
            )
        return np.sqrt(np.clip(eigs, 0.0, None))
    if tag == "inv_sqrt":
        _check_floor(eigs, "inv_sqrt")
        return 1.0 / np.sqrt(eigs)
    if isinstance(tag, tuple) and len(tag) == 2 and tag[0] == "power":
        if np.min(eigs) < -EIG_FLOOR:
            raise HermitianError(
                f"power requires positive semidefinite input; smallest eigenvalue {np.min(eigs):.3e}"
            )
        return np.power(np.clip(eigs, 0.0, None), tag[1])
    raise ValueError(f"unknown matrix_function tag {tag!r}")


def _check_floor(eigs: np.ndarray, fname: str) -> None:
    lo = float(np.min(eigs))
    if lo <= EIG_FLOOR:
        raise HermitianError(
            f"{fname} undefined below the eigenvalue floor {EIG_FLOOR:.1e}: "
            f"offending eigenvalue {lo:.6e}"
        )


def matrix_function(h: np.ndarray, f) -> np.ndarray:
    """Apply a scalar function to a Hermitian operator in its eigenbasis.

    f is one of the tags "exp", "log", "sqrt", "inv_sqrt" or ("power", t).
    """
    spec = eig_hermitian(h)
    vals = _apply_scalar(f, spec.eigenvalues)
    v = spec.eigenvectors
    return hermitize((v * vals) @ v.conj().T)


def mat_exp(h: np.ndarray) -> np.ndarray:
    return matrix_function(h, "exp")


def mat_log(h: np.ndarray) -> np.ndarray:
    return matrix_function(h, "log")


def mat_sqrt(h: np.ndarray) -> np.ndarray:
    return matrix_function(h, "sqrt")


def mat_inv_sqrt(h: np.ndarray) -> np.ndarray:
    return matrix_function(h, "inv_sqrt")


def mat_power(h: np.ndarray, t: float) -> np.ndarray:
    return matrix_function(h, ("power", t))


def tensor(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kronecker product; composite index of (i_X, i_Y) is i_X*dim_Y + i_Y."""
    return np.kron(np.asarray(x, dtype=complex), np.asarray(y, dtype=complex))


def kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    out = None
    for m in mats:
        out = np.asarray(m, dtype=complex) if out is None else np.kron(out, m)
    if out is None:
        raise ValueError("kron_all of empty sequence")
    return out


def partial_trace(x: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out the subsystems not listed in keep.

    dims lists subsystem dimensions in tensor order; keep is a collection of
    subsystem indices (kept subsystems stay in their original relative order).
    """
    x = np.asarray(x, dtype=complex)
    dims = list(int(d) for d in dims)
    n = len(dims)
    total = int(np.prod(dims))
    if x.shape != (total, total):
        raise ValueError(f"matrix shape {x.shape} does not match dims product {total}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {n} subsystems")
    traced = [i for i in range(n) if i not in keep]
    t = x.reshape(dims + dims)
    # contract each traced subsystem pair (row index i, column index i+n in the
    # current reshaped tensor); adjust positions as axes disappear
    for cnt, i in enumerate(sorted(traced)):
        ax1 = i - cnt
        ax2 = ax1 + (n - cnt)
        t = np.trace(t, axis1=ax1, axis2=ax2)
    dkeep = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(dkeep, dkeep)


def trace_norm(x: np.ndarray) -> float:
    """Sum of singular values (equals sum of |eigenvalues| for Hermitian input)."""
    x = np.asarray(x, dtype=complex)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"trace_norm expects a square matrix, got {x.shape}")
    dev = float(np.max(np.abs(x - x.conj().T))) if x.size else 0.0
    if dev <= 1e-12 * max(float(np.max(np.abs(x))), 1e-300):
        return float(np.sum(np.abs(np.linalg.eigvalsh(hermitize(x)))))
    return float(np.sum(np.linalg.svd(x, compute_uv=False)))


# ---------------------------------------------------------------------------
# Hermitian operator bases
# ---------------------------------------------------------------------------

def traceless_hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal basis of traceless Hermitian d x d matrices.

    Generalized Gell-Mann construction: symmetric pairs, antisymmetric pairs,
    then diagonal ladder matrices; tr[B_i B_j] = delta_ij. Shape (d*d-1, d, d).
    """
    out = []
    s2 = 1.0 / np.sqrt(2.0)
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = s2
            m[k, j] = s2
            out.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = -1j * s2
            m[k, j] = 1j * s2
            out.append(m)
    for l in range(1, d):
        m = np.zeros((d, d), dtype=complex)
        coef = 1.0 / np.sqrt(l * (l + 1))
        for j in range(l):
            m[j, j] = coef
        m[l, l] = -l * coef
        out.append(m)
    if not out:
        return np.zeros((0, d, d), dtype=complex)
    return np.array(out)


def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal basis of all Hermitian d x d matrices; identity/sqrt(d) first."""
    ident = np.eye(d, dtype=complex) / np.sqrt(d)
    return np.concatenate([ident[None, :, :], traceless_hermitian_basis(d)], axis=0)
