"""Entropic quantities of states and channels.

State functions use natural logarithms. Channel entropy is the minimum
output-reference conditional entropy over channel inputs; channel relative
entropy is the corresponding maximized divergence. Inputs are parametrized
as phi(x) = exp(G(x)) / tr exp(G(x)) over a traceless Hermitian basis, so
every probe state is full rank and the search domain is unconstrained.
"""

from __future__ import annotations

import numpy as np

from .channels import QuantumChannel
from .linalg import (
    eig_hermitian,
    hermitian_basis,
    hermitize,
    partial_trace,
    tensor,
    traceless_hermitian_basis,
)
from .optim import SdpProblem, nelder_mead_batch, sdp_solve

__all__ = [
    "von_neumann",
    "conditional_entropy",
    "relative_entropy",
    "BlochParametrization",
    "channel_entropy",
    "channel_relative_entropy",
    "diamond_distance",
]

SUPPORT_TOL = 1e-10


def von_neumann(rho):
    """S(rho) = -tr[rho log rho] in nats; eigenvalues below 1e-15 contribute 0."""
    w = np.linalg.eigvalsh(np.asarray(rho, dtype=complex))
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log(w)))


def conditional_entropy(tau, d_out, d_ref):
    """S(B|R) = S(BR) - S(R) for a state on output (x) reference."""
    r_marg = partial_trace(tau, [d_out, d_ref], keep=[1])
    return von_neumann(tau) - von_neumann(r_marg)


def relative_entropy(rho, sigma, support_tol=SUPPORT_TOL):
    """D(rho || sigma) in nats; +inf when supp(rho) leaks outside supp(sigma)
    by more than support_tol."""
    rho = np.asarray(rho, dtype=complex)
    spec_s = eig_hermitian(np.asarray(sigma, dtype=complex))
    ws, vs = spec_s.eigenvalues, spec_s.eigenvectors
    keep = ws > support_tol
    if not np.all(keep):
        v_ker = vs[:, ~keep]
        leak = float(np.real(np.trace(v_ker.conj().T @ rho @ v_ker)))
        if leak > support_tol:
            return float("inf")
    wr = np.linalg.eigvalsh(rho)
    wr = wr[wr > 1e-15]
    t1 = float(np.sum(wr * np.log(wr)))
    log_s = (vs[:, keep] * np.log(ws[keep])) @ vs[:, keep].conj().T
    t2 = float(np.real(np.trace(rho @ log_s)))
    return t1 - t2


# ---------------------------------------------------------------------------
# Input-state parametrization
# ---------------------------------------------------------------------------

class BlochParametrization:
    """Full-rank states phi(x) = exp(G(x)) / tr exp(G(x)), G = sum x_k B_k
    over the traceless orthonormal Hermitian basis of dimension d."""

    def __init__(self, d):
        self.d = int(d)
        self.basis = traceless_hermitian_basis(self.d)
        self.n_params = self.d * self.d - 1

    def state(self, x):
        g = np.einsum("k,kij->ij", np.asarray(x, dtype=float), self.basis)
        spec = eig_hermitian(hermitize(g))
        w = np.exp(spec.eigenvalues - spec.eigenvalues.max())
        v = spec.eigenvectors
        phi = (v * w) @ v.conj().T
        return hermitize(phi / w.sum())

    def states_batch(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self.d == 2:
            return _qubit_states(xs)
        return np.array([self.state(x) for x in xs])


def _qubit_states(xs):
    """Closed form phi = (1 + tanh(|x|/sqrt(2)) n.sigma) / 2 for batches."""
    norm = np.linalg.norm(xs, axis=1)
    r = np.tanh(norm / np.sqrt(2.0))
    safe = np.where(norm > 1e-300, norm, 1.0)
    n = xs / safe[:, None]
    n[norm <= 1e-300] = 0.0
    phi = np.zeros((len(xs), 2, 2), dtype=complex)
    phi[:, 0, 0] = (1 + r * n[:, 2]) / 2
    phi[:, 1, 1] = (1 - r * n[:, 2]) / 2
    phi[:, 0, 1] = (r * n[:, 0] - 1j * r * n[:, 1]) / 2
    phi[:, 1, 0] = np.conj(phi[:, 0, 1])
    return phi


def _qubit_sqrt_states(xs):
    """sqrt(phi(x)) and the spectrum (p_minus, p_plus) of phi, batched."""
    norm = np.linalg.norm(np.atleast_2d(xs), axis=1)
    r = np.tanh(norm / np.sqrt(2.0))
    p_hi = (1 + r) / 2
    p_lo = (1 - r) / 2
    s_hi = np.sqrt(p_hi)
    s_lo = np.sqrt(p_lo)
    a = (s_hi + s_lo) / 2
    b = (s_hi - s_lo) / 2
    safe = np.where(norm > 1e-300, norm, 1.0)
    n = np.atleast_2d(xs) / safe[:, None]
    n[norm <= 1e-300] = 0.0
    root = np.zeros((len(n), 2, 2), dtype=complex)
    root[:, 0, 0] = a + b * n[:, 2]
    root[:, 1, 1] = a - b * n[:, 2]
    root[:, 0, 1] = b * (n[:, 0] - 1j * n[:, 1])
    root[:, 1, 0] = np.conj(root[:, 0, 1])
    return root, p_lo, p_hi


def _sandwich_batch(choi, d_out, roots):
    """(1 (x) sqrt(phi)) J (1 (x) sqrt(phi)) for a batch of 2x2 roots."""
    m = len(roots)
    d_in = roots.shape[1]
    n = d_out * d_in
    big = np.zeros((m, n, n), dtype=complex)
    for a in range(d_out):
        big[:, a * d_in:(a + 1) * d_in, a * d_in:(a + 1) * d_in] = roots
    return big @ choi @ big


def _entropy_batch(mats):
    w = np.linalg.eigvalsh(mats)
    safe = np.where(w > 1e-15, w, 1.0)
    return -np.sum(np.where(w > 1e-15, w * np.log(safe), 0.0), axis=-1)


def _binary_entropy_pair(p_lo, p_hi):
    out = np.zeros_like(p_lo)
    for p in (p_lo, p_hi):
        safe = np.where(p > 1e-15, p, 1.0)
        out -= np.where(p > 1e-15, p * np.log(safe), 0.0)
    return out


# ---------------------------------------------------------------------------
# Channel entropy
# ---------------------------------------------------------------------------

def _start_points(n_params, restarts, rng):
    starts = np.zeros((max(1, restarts), n_params))
    if restarts > 1:
        rng = np.random.default_rng(0) if rng is None else rng
        starts[1:] = rng.normal(scale=1.0, size=(restarts - 1, n_params))
    return starts


def channel_entropy(channel: QuantumChannel, *, restarts=16, rng=None,
                    max_iter=250, return_state=False):
    """min over inputs of S(B|R) for the channel's output-reference state.

    The raw minimum must respect S(B|R) >= -log d_in; the returned value is
    clamped to [-log d_in, log d_out]. The all-zero parameter (maximally
    mixed reference) is always among the starts.
    """
    param = BlochParametrization(channel.d_in)
    d_out = channel.d_out

    if channel.d_in == 2:
        choi = channel.choi

        def f_batch(xs):
            roots, p_lo, p_hi = _qubit_sqrt_states(xs)
            tau = _sandwich_batch(choi, d_out, roots)
            return _entropy_batch(tau) - _binary_entropy_pair(p_lo, p_hi)
    else:
        def f_batch(xs):
            vals = []
            for x in np.atleast_2d(xs):
                phi = param.state(x)
                tau = channel.apply_with_reference(phi)
                vals.append(von_neumann(tau) - von_neumann(phi))
            return np.array(vals)

    starts = _start_points(param.n_params, restarts, rng)
    xbest, fbest = nelder_mead_batch(f_batch, starts, step=0.5,
                                     max_iter=max_iter, fatol=1e-11, xatol=1e-7)
    k = int(np.argmin(fbest))
    raw = float(fbest[k])
    lo = -np.log(channel.d_in)
    hi = np.log(channel.d_out)
    if raw < lo - 1e-9:
        raise AssertionError(
            f"conditional entropy {raw:.6e} fell below the -log d_in bound {lo:.6e}")
    value = float(np.clip(raw, lo, hi))
    if return_state:
        return value, param.state(xbest[k])
    return value


# ---------------------------------------------------------------------------
# Channel relative entropy
# ---------------------------------------------------------------------------

def _divergence_batch_qubit(choi_a, choi_b, d_out, xs, support_tol=SUPPORT_TOL):
    roots, _, _ = _qubit_sqrt_states(xs)
    tau_a = _sandwich_batch(choi_a, d_out, roots)
    tau_b = _sandwich_batch(choi_b, d_out, roots)
    wa, va = np.linalg.eigh(tau_a)
    wb, vb = np.linalg.eigh(tau_b)
    safe_a = np.where(wa > 1e-15, wa, 1.0)
    t1 = np.sum(np.where(wa > 1e-15, wa * np.log(safe_a), 0.0), axis=-1)
    keep = wb > support_tol
    log_b = np.where(keep, np.log(np.where(keep, wb, 1.0)), 0.0)
    log_tb = np.einsum("mik,mk,mjk->mij", vb, log_b, vb.conj())
    t2 = np.real(np.einsum("mij,mji->m", tau_a, log_tb))
    return t1 - t2


def channel_relative_entropy(ch_a: QuantumChannel, ch_b: QuantumChannel, *,
                             restarts=16, rng=None, max_iter=250,
                             support_tol=SUPPORT_TOL):
    """max over inputs of D(tau_a(phi) || tau_b(phi)) between two channels.

    Returns +inf when the first Choi support leaks outside the second; the
    sandwich by any full-rank phi preserves that relation, so the check at
    the maximally mixed input settles it for the whole search domain.
    """
    if (ch_a.d_in, ch_a.d_out) != (ch_b.d_in, ch_b.d_out):
        raise ValueError("channels must share input and output dimensions")
    d_in, d_out = ch_a.d_in, ch_a.d_out

    base = relative_entropy(ch_a.normalized_choi, ch_b.normalized_choi,
                            support_tol=support_tol)
    if not np.isfinite(base):
        return float("inf")

    param = BlochParametrization(d_in)
    if d_in == 2:
        choi_a, choi_b = ch_a.choi, ch_b.choi

        def f_batch(xs):
            return -_divergence_batch_qubit(choi_a, choi_b, d_out, xs,
                                            support_tol=support_tol)
    else:
        def f_batch(xs):
            vals = []
            for x in np.atleast_2d(xs):
                phi = param.state(x)
                d = relative_entropy(ch_a.apply_with_reference(phi),
                                     ch_b.apply_with_reference(phi),
                                     support_tol=support_tol)
                vals.append(-d if np.isfinite(d) else -1e30)
            return np.array(vals)

    starts = _start_points(param.n_params, restarts, rng)
    _, fbest = nelder_mead_batch(f_batch, starts, step=0.5,
                                 max_iter=max_iter, fatol=1e-11, xatol=1e-7)
    value = float(-np.min(fbest))
    # the maximally mixed start makes the normalized-Choi divergence a floor
    return max(value, base)


# ---------------------------------------------------------------------------
# Diamond distance
# ---------------------------------------------------------------------------

def diamond_distance(ch_a: QuantumChannel, ch_b: QuantumChannel, *, tol=1e-7):
    """Half the diamond norm of the difference of two channels, in [0, 1].

    Semidefinite form: maximize tr[(J_a - J_b) W] over 0 <= W <= 1 (x) rho
    with rho a state on the reference system.
    """
    if (ch_a.d_in, ch_a.d_out) != (ch_b.d_in, ch_b.d_out):
        raise ValueError("channels must share input and output dimensions")
    d_in, d_out = ch_a.d_in, ch_a.d_out
    n = d_out * d_in
    j_delta = hermitize(ch_a.choi - ch_b.choi)
    if np.max(np.abs(j_delta)) < 1e-15:
        return 0.0

    basis = hermitian_basis(n)
    zero_n = np.zeros((n, n), dtype=complex)
    zero_r = np.zeros((d_in, d_in), dtype=complex)
    rows = []
    vals = []
    # W + S - 1 (x) rho = 0, expanded over a Hermitian operator basis
    for f in basis:
        f_r = partial_trace(f, [d_out, d_in], keep=[1])
        rows.append([f, f, -f_r])
        vals.append(0.0)
    rows.append([zero_n, zero_n, np.eye(d_in, dtype=complex)])
    vals.append(1.0)

    prob = SdpProblem(block_dims=[n, n, d_in],
                      objective=[-j_delta, zero_n, zero_r],
                      constraints=rows, values=np.array(vals))
    sol = sdp_solve(prob, tol=tol)
    return float(np.clip(-sol.value, 0.0, 1.0))
