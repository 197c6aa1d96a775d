"""Quantum channels represented by Choi operators.

Conventions, used everywhere in this package:
  - the Choi operator is J = (T (x) id)(Phi) with the unnormalized maximally
    entangled operator Phi = sum_jk |jj><kk|, so tr J = d_in and tr_out J = 1;
  - subsystem order is output (x) reference, composite index b*d_in + r;
  - the reference system R carries the transpose of the input system A:
    a reference-side state phi corresponds to the channel input phi^T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .linalg import (
    HermitianError,
    eig_hermitian,
    hermitize,
    mat_sqrt,
    partial_trace,
    tensor,
)

__all__ = [
    "PAULIS",
    "QuantumChannel",
    "identity_channel",
    "completely_depolarizing_channel",
    "depolarizing_channel",
    "replacer_channel",
    "dephasing_channel",
    "amplitude_damping_channel",
    "unitary_channel",
    "channel_from_kraus",
]

PAULIS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# CPTP acceptance margins on the Choi operator
PSD_TOL = 1e-9
TP_TOL = 1e-9


@dataclass
class QuantumChannel:
    """A linear map stored as its Choi operator on output (x) reference."""

    choi: np.ndarray
    d_in: int
    d_out: int

    def __post_init__(self):
        self.d_in = int(self.d_in)
        self.d_out = int(self.d_out)
        j = np.asarray(self.choi, dtype=complex)
        n = self.d_in * self.d_out
        if j.shape != (n, n):
            raise ValueError(f"Choi shape {j.shape} mismatches {self.d_out}x{self.d_in}")
        dev = float(np.max(np.abs(j - j.conj().T))) if j.size else 0.0
        if dev > 1e-9 * max(1.0, float(np.max(np.abs(j)))):
            raise HermitianError(f"Choi operator is not Hermitian (deviation {dev:.3e})")
        self.choi = hermitize(j)

    # -- structure checks ---------------------------------------------------

    def cptp_residuals(self):
        """(most negative eigenvalue of J, Frobenius deviation of tr_out J from 1)."""
        w = np.linalg.eigvalsh(self.choi)
        tr_out = partial_trace(self.choi, [self.d_out, self.d_in], keep=[1])
        return float(w[0]), float(np.linalg.norm(tr_out - np.eye(self.d_in)))

    def is_cptp(self, psd_tol=PSD_TOL, tp_tol=TP_TOL):
        neg, tp = self.cptp_residuals()
        return neg >= -psd_tol and tp <= tp_tol

    def assert_cptp(self, psd_tol=PSD_TOL, tp_tol=TP_TOL):
        neg, tp = self.cptp_residuals()
        if neg < -psd_tol:
            raise ValueError(f"Choi operator has negative eigenvalue {neg:.3e}")
        if tp > tp_tol:
            raise ValueError(f"partial trace deviates from identity by {tp:.3e}")
        return self

    @property
    def normalized_choi(self):
        """The Choi state J / d_in (unit trace)."""
        return self.choi / self.d_in

    # -- action -------------------------------------------------------------

    def apply(self, rho):
        """T(rho) = tr_R[J (1 (x) rho^T)]."""
        rho = np.asarray(rho, dtype=complex)
        jr = self.choi.reshape(self.d_out, self.d_in, self.d_out, self.d_in)
        return np.einsum("aibj,ij->ab", jr, rho)

    def apply_with_reference(self, phi):
        """Joint output-reference state (1 (x) sqrt(phi)) J (1 (x) sqrt(phi)).

        phi is the reference-side marginal; the result has unit trace,
        reference marginal phi, and output marginal T(phi^T).
        """
        phi = np.asarray(phi, dtype=complex)
        root = mat_sqrt(phi)
        m = tensor(np.eye(self.d_out), root)
        return hermitize(m @ self.choi @ m)

    def adjoint_apply(self, x):
        """T^dagger(x), the Heisenberg-picture action on observables."""
        x = np.asarray(x, dtype=complex)
        big = tensor(x, np.eye(self.d_in)) @ self.choi
        return partial_trace(big, [self.d_out, self.d_in], keep=[1]).T

    # -- derived maps -------------------------------------------------------

    def kraus_operators(self, rank_tol=1e-10):
        """Kraus decomposition from the Choi spectrum, small weights dropped."""
        spec = eig_hermitian(self.choi)
        ops = []
        for lam, vec in zip(spec.eigenvalues, spec.eigenvectors.T):
            if lam > rank_tol:
                ops.append(np.sqrt(lam) * vec.reshape(self.d_out, self.d_in))
        if not ops:
            raise ValueError("Choi operator has no spectral weight above the rank cut")
        return ops

    def complementary(self, rank_tol=1e-10):
        """The complementary channel to the environment of a Stinespring
        dilation built from the Choi eigenvectors: output dim = Choi rank."""
        kraus = self.kraus_operators(rank_tol=rank_tol)
        ks = np.array(kraus)
        jc = np.einsum("qbj,rbk->qjrk", ks, ks.conj())
        rank = len(kraus)
        jc = jc.reshape(rank * self.d_in, rank * self.d_in)
        return QuantumChannel(choi=hermitize(jc), d_in=self.d_in, d_out=rank)

    # -- serialization ------------------------------------------------------

    def to_json_dict(self):
        choi = [[[float(z.real), float(z.imag)] for z in row] for row in self.choi]
        return {"d_in": self.d_in, "d_out": self.d_out, "choi": choi}

    @classmethod
    def from_json_dict(cls, data):
        d_in = int(data["d_in"])
        d_out = int(data["d_out"])
        raw = data["choi"]
        n = d_in * d_out
        if len(raw) != n or any(len(row) != n for row in raw):
            raise ValueError(f"Choi entries must form a {n}x{n} matrix")
        j = np.empty((n, n), dtype=complex)
        for i, row in enumerate(raw):
            for k, (re, im) in enumerate(row):
                j[i, k] = complex(re, im)
        # mirror the lower triangle so stored rounding noise cannot break
        # Hermiticity; the diagonal keeps only its real part
        for i in range(n):
            j[i, i] = j[i, i].real
            for k in range(i + 1, n):
                j[i, k] = np.conj(j[k, i])
        return cls(choi=j, d_in=d_in, d_out=d_out)

    def to_json(self, **kwargs):
        return json.dumps(self.to_json_dict(), **kwargs)

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def _phi_operator(d):
    v = np.zeros(d * d, dtype=complex)
    for j in range(d):
        v[j * d + j] = 1.0
    return np.outer(v, v.conj())


def channel_from_kraus(kraus, d_in):
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    d_out = kraus[0].shape[0]
    if any(k.shape != (d_out, d_in) for k in kraus):
        raise ValueError("all Kraus operators must share the same shape")
    j = np.zeros((d_out * d_in, d_out * d_in), dtype=complex)
    for k in kraus:
        v = k.reshape(-1)
        j += np.outer(v, v.conj())
    return QuantumChannel(choi=hermitize(j), d_in=d_in, d_out=d_out)


def identity_channel(d):
    return QuantumChannel(choi=_phi_operator(d), d_in=d, d_out=d)


def unitary_channel(u):
    u = np.asarray(u, dtype=complex)
    return channel_from_kraus([u], u.shape[1])


def completely_depolarizing_channel(d_in, d_out=None):
    """rho -> 1/d_out regardless of input; Choi = 1 / d_out."""
    d_out = d_in if d_out is None else d_out
    n = d_in * d_out
    return QuantumChannel(choi=np.eye(n, dtype=complex) / d_out,
                          d_in=d_in, d_out=d_out)


def depolarizing_channel(p, d=2):
    """rho -> (1-p) rho + p 1/d."""
    j = (1 - p) * _phi_operator(d) + p * np.eye(d * d, dtype=complex) / d
    return QuantumChannel(choi=j, d_in=d, d_out=d)


def replacer_channel(sigma, d_in):
    """rho -> sigma tr[rho]."""
    sigma = np.asarray(sigma, dtype=complex)
    return QuantumChannel(choi=tensor(sigma, np.eye(d_in)),
                          d_in=d_in, d_out=sigma.shape[0])


def dephasing_channel(p):
    """Qubit phase flip: rho -> (1-p) rho + p Z rho Z."""
    k0 = np.sqrt(1 - p) * np.eye(2, dtype=complex)
    k1 = np.sqrt(p) * PAULIS["Z"]
    return channel_from_kraus([k0, k1], 2)


def amplitude_damping_channel(gamma):
    k0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    return channel_from_kraus([k0, k1], 2)
