"""Optimization kernels: entropic dual Newton solver, semidefinite
programming by a primal barrier interior-point method, linear minimization
over channel sets, and derivative-free local search.

All solvers are deterministic for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import assert_hermitian, eig_hermitian, hermitian_basis, hermitize

__all__ = [
    "InfeasibleError",
    "ConvergenceError",
    "MaxEntSolution",
    "maxent_solve",
    "SdpProblem",
    "SdpSolution",
    "sdp_solve",
    "cptp_linear_minimize",
    "nelder_mead_batch",
    "nelder_mead",
    "local_search_minimize",
]

# Dual exponent above this is treated as overflow; the line search rejects it.
EXP_CAP = 500.0


class InfeasibleError(ValueError):
    """The linear constraint set admits no state.

    Carries `certificate`, the normalized dual direction along which the
    entropic dual decreases without bound, and `best`, the last iterate.
    """

    def __init__(self, message, certificate=None, best=None):
        super().__init__(message)
        self.certificate = certificate
        self.best = best


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget without meeting tolerance."""


# ---------------------------------------------------------------------------
# Maximum-entropy dual solver
# ---------------------------------------------------------------------------

@dataclass
class MaxEntSolution:
    """Solution of max S(tau) subject to tr[A_k tau] = b_k.

    tau = exp(-1 - sum_k lambdas[k] A_k); status is "converged" when the
    constraint residual met tolerance at an interior point and "boundary"
    when the dual diverged while the residual vanished (the optimizer is a
    limit point with deficient rank).
    """

    lambdas: np.ndarray
    tau: np.ndarray
    dual_value: float
    kkt_residual: float
    status: str
    n_iter: int
    dual_trace: list = field(default_factory=list)


def _dual_pieces(ops, b, lam, need_hessian=False):
    """Evaluate the dual g(lam), its gradient, and optionally the Hessian."""
    g_mat = -np.eye(ops.shape[1], dtype=complex) - np.einsum("k,kij->ij", lam, ops)
    # raw eigh: eigenvector phases cancel in every reconstruction below
    m, u = np.linalg.eigh((g_mat + g_mat.conj().T) / 2.0)
    if m.max() > EXP_CAP:
        return np.inf, None, None, None
    em = np.exp(m)
    tau = hermitize((u * em) @ u.conj().T)
    value = float(em.sum() + lam @ b)
    grad = b - np.real(np.einsum("kij,ji->k", ops, tau))
    if not need_hessian:
        return value, grad, tau, None
    # divided differences of exp over the spectrum (first Frechet derivative)
    diff = m[:, None] - m[None, :]
    near = np.abs(diff) < 1e-12
    safe = np.where(near, 1.0, diff)
    phi = np.where(near, np.exp((m[:, None] + m[None, :]) / 2), (em[:, None] - em[None, :]) / safe)
    at = np.einsum("pi,kij,jq->kpq", u.conj().T, ops, u)
    hess = np.real(np.einsum("kij,lji,ij->kl", at, at, phi))
    return value, grad, tau, (hess + hess.T) / 2


def maxent_solve(constraint_ops, values, *, tol=1e-9, max_iter=200,
                 lambda_max=1e4, x0=None):
    """Maximize von Neumann entropy over states satisfying linear constraints.

    constraint_ops is a sequence of Hermitian operators A_k and values the
    target expectations b_k. Works in the dual: minimizes
    g(lam) = tr exp(-1 - sum lam_k A_k) + lam . b by damped Newton steps.

    Returns a MaxEntSolution; raises InfeasibleError when the dual is
    unbounded below with a persistent constraint residual.
    """
    ops = np.array([assert_hermitian(a, name=f"constraint operator {k}")
                    for k, a in enumerate(constraint_ops)])
    b = np.asarray(values, dtype=float)
    if ops.shape[0] != b.shape[0]:
        raise ValueError(f"{ops.shape[0]} operators but {b.shape[0]} target values")
    if ops.shape[0] == 0:
        raise ValueError("need at least one constraint (include the identity for trace)")
    mdim = ops.shape[1]
    lam = np.zeros(len(b)) if x0 is None else np.asarray(x0, dtype=float).copy()

    value, grad, tau, hess = _dual_pieces(ops, b, lam, need_hessian=True)
    if not np.isfinite(value):
        raise ValueError("initial dual point overflows; rescale the constraint operators")
    trace = [value]
    best = (float(np.max(np.abs(grad))), lam.copy(), tau, value)

    status = None
    it = 0
    for it in range(1, max_iter + 1):
        residual = float(np.max(np.abs(grad)))
        if residual <= tol:
            status = "converged"
            break
        if np.max(np.abs(lam)) > lambda_max:
            status = "diverged"
            break
        # damped Newton with a Cholesky-regularized Hessian
        reg = 1e-10 * max(1.0, float(np.trace(hess)) / len(b))
        h_reg = hess + reg * np.eye(len(b))
        try:
            c_fac = np.linalg.cholesky(h_reg)
            step = -np.linalg.solve(c_fac.conj().T, np.linalg.solve(c_fac, grad))
        except np.linalg.LinAlgError:
            step = -grad
        slope = float(grad @ step)
        if slope >= 0:
            step = -grad
            slope = float(grad @ step)
        t = 1.0
        accepted = False
        # once the predicted decrease is below the floating point resolution
        # of the dual value the sufficient-decrease test is pure noise; the
        # full Newton step is reliable in that regime
        noise = 1e-14 * max(1.0, abs(value))
        while t >= 1e-14:
            cand = lam + t * step
            v_new, g_new, tau_new, h_new = _dual_pieces(ops, b, cand, need_hessian=True)
            if np.isfinite(v_new) and (v_new <= value + 1e-4 * t * slope
                                       or (-t * slope <= noise
                                           and v_new <= value + 10 * noise)):
                lam, value, grad, tau, hess = cand, v_new, g_new, tau_new, h_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = "stalled"
            break
        trace.append(value)
        residual = float(np.max(np.abs(grad)))
        if residual < best[0]:
            best = (residual, lam.copy(), tau, value)
    else:
        status = "maxiter"

    residual = float(np.max(np.abs(grad)))
    if residual < best[0]:
        best = (residual, lam.copy(), tau, value)

    if status == "converged":
        return MaxEntSolution(lambdas=lam, tau=tau, dual_value=value,
                              kkt_residual=residual, status="converged",
                              n_iter=it, dual_trace=trace)

    best_res, best_lam, best_tau, best_val = best
    if status in ("diverged", "stalled", "maxiter") and best_res <= np.sqrt(tol):
        # dual ran off or hit its conditioning floor while the constraints
        # were met to high accuracy: rank-deficient optimizer
        return MaxEntSolution(lambdas=best_lam, tau=best_tau, dual_value=best_val,
                              kkt_residual=best_res, status="boundary",
                              n_iter=it, dual_trace=trace)
    if status == "maxiter":
        raise ConvergenceError(
            f"entropic dual failed to reach tolerance {tol:.1e} in {max_iter} "
            f"iterations (residual {best_res:.3e})")
    nrm = float(np.linalg.norm(best_lam))
    cert = best_lam / nrm if nrm > 0 else best_lam
    sol = MaxEntSolution(lambdas=best_lam, tau=best_tau, dual_value=best_val,
                         kkt_residual=best_res, status="infeasible",
                         n_iter=it, dual_trace=trace)
    raise InfeasibleError(
        f"constraints are infeasible: dual diverged with residual {best_res:.3e}",
        certificate=cert, best=sol)


# ---------------------------------------------------------------------------
# Semidefinite programming
# ---------------------------------------------------------------------------

@dataclass
class SdpProblem:
    """min sum_blk tr[C_blk X_blk]  s.t.  sum_blk tr[A_i_blk X_blk] = b_i, X >= 0.

    The variable is block diagonal Hermitian with the given block dims;
    objective holds one Hermitian matrix per block, constraints one list of
    per-block Hermitian matrices per affine row.
    """

    block_dims: list
    objective: list
    constraints: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.objective) != len(self.block_dims):
            raise ValueError("objective must supply one matrix per block")
        for blk, d in zip(self.objective, self.block_dims):
            assert_hermitian(blk, name="objective block")
            if blk.shape != (d, d):
                raise ValueError(f"objective block shape {blk.shape} mismatches dim {d}")
        if len(self.constraints) != len(self.values):
            raise ValueError("one value per affine constraint row required")
        for row in self.constraints:
            if len(row) != len(self.block_dims):
                raise ValueError("each constraint row must supply one matrix per block")


@dataclass
class SdpSolution:
    x_blocks: list
    y: np.ndarray
    z_blocks: list
    value: float
    gap: float
    primal_residual: float
    status: str
    n_iter: int


def _blk_inner(a_blocks, x_blocks):
    return float(sum(np.real(np.einsum("ij,ji->", a, x))
                     for a, x in zip(a_blocks, x_blocks)))


def _sym_solve(mat, rhs):
    """Solve a symmetric positive system for several right sides.

    Tries an exact Cholesky first, escalates jitter only on failure, and
    finishes with one iterative refinement pass against the original matrix.
    """
    jitter = 0.0
    base = 1e-14 * max(1.0, float(np.trace(mat)) / max(1, mat.shape[0]))
    for _ in range(8):
        try:
            ch = np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
            sol = np.linalg.solve(ch.conj().T, np.linalg.solve(ch, rhs))
            res = rhs - mat @ sol
            sol += np.linalg.solve(ch.conj().T, np.linalg.solve(ch, res))
            return sol
        except np.linalg.LinAlgError:
            jitter = base if jitter == 0.0 else jitter * 100.0
    return np.linalg.lstsq(mat, rhs, rcond=None)[0]


def _stack_constraints(a_rows, dims):
    """Per-block (m, d, d) arrays of the constraint operators."""
    m = len(a_rows)
    return [np.array([a_rows[i][k] for i in range(m)]) if m
            else np.zeros((0, d, d), dtype=complex)
            for k, d in enumerate(dims)]


def _affine_residual(b, a_stacks, x_blocks):
    r = np.array(b, dtype=float)
    for ast, xb in zip(a_stacks, x_blocks):
        if len(ast):
            r -= np.real(np.einsum("mij,ji->m", ast, xb))
    return r


def _constraint_gram(x_blocks, a_stacks):
    """w[k] = X A X per block (batched) and the Gram M_ij = <A_i, X A_j X>."""
    m = len(a_stacks[0])
    w = [xb @ ast @ xb for xb, ast in zip(x_blocks, a_stacks)]
    mat = np.zeros((m, m))
    for ast, wk in zip(a_stacks, w):
        if len(ast):
            mat += np.real(np.einsum("mij,nji->mn", ast, wk))
    return w, mat


def _combine(y, a_stacks, k):
    """sum_i y_i A_i for block k."""
    if not len(a_stacks[k]):
        return 0.0
    return np.einsum("m,mij->ij", y, a_stacks[k])


def _feasibility_step(x_blocks, a_stacks, r_aff):
    """Newton correction for the affine residual in the X metric."""
    _, mat = _constraint_gram(x_blocks, a_stacks)
    yf = _sym_solve(mat, r_aff[:, None])[:, 0]
    return [hermitize(xb @ _combine(yf, a_stacks, k) @ xb)
            for k, xb in enumerate(x_blocks)]


def _positivity_range(x_chol, dx_blocks):
    """Largest alpha keeping X + alpha dX positive, and the scaled step norm."""
    alpha_max = np.inf
    norm_sq = 0.0
    for ch, dx in zip(x_chol, dx_blocks):
        inv_ch = np.linalg.inv(ch)
        s = hermitize(inv_ch @ dx @ inv_ch.conj().T)
        ev = np.linalg.eigvalsh(s)
        norm_sq += float(np.sum(ev * ev))
        if ev[0] < 0:
            alpha_max = min(alpha_max, -1.0 / ev[0])
    return alpha_max, np.sqrt(norm_sq)


def sdp_solve(problem: SdpProblem, *, tol=1e-7, feas_tol=1e-9,
              max_outer=80, max_inner=60):
    """Primal log-det barrier path following.

    Phase one restores affine feasibility by Newton steps in the X metric
    (exact in one full step since the constraints are linear). Phase two
    follows the central path: damped Newton centering of
    tr[C X] - mu log det X over the affine slice, shrinking mu by 0.2 per
    stage until the barrier gap mu * n meets tol. Near the double precision
    floor the decrement chatters instead of contracting; that is treated as
    stage completion and the reported gap stays the honest certificate.
    """
    dims = problem.block_dims
    nb = len(dims)
    n_total = sum(dims)
    m = len(problem.values)
    c_blocks = [np.asarray(c, dtype=complex) for c in problem.objective]
    a_rows = [[np.asarray(a, dtype=complex) for a in row] for row in problem.constraints]
    a_stacks = _stack_constraints(a_rows, dims)
    b = problem.values

    x_blocks = [np.eye(d, dtype=complex) for d in dims]
    y = np.zeros(m)

    it_total = 0
    # phase one: affine feasibility from the identity start
    for _ in range(200):
        r_aff = _affine_residual(b, a_stacks, x_blocks)
        if np.max(np.abs(r_aff), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(b), initial=0.0)):
            break
        it_total += 1
        dx_blocks = _feasibility_step(x_blocks, a_stacks, r_aff)
        x_chol = [np.linalg.cholesky(hermitize(xb)) for xb in x_blocks]
        alpha_max, _ = _positivity_range(x_chol, dx_blocks)
        alpha = min(1.0, 0.9 * alpha_max)
        if alpha < 1e-13:
            raise ConvergenceError(
                "no strictly positive point found on the affine set "
                "(Slater condition appears to fail)")
        for k in range(nb):
            x_blocks[k] = hermitize(x_blocks[k] + alpha * dx_blocks[k])
    else:
        raise ConvergenceError("affine feasibility restoration did not converge")

    mu = max(1.0, abs(_blk_inner(c_blocks, x_blocks)) / n_total)

    # phase two: centering stages along the path mu -> 0
    for _outer in range(max_outer):
        stage_best = np.inf
        no_improve = 0
        for _inner in range(max_inner):
            it_total += 1
            x_inv = []
            x_chol = []
            for xb in x_blocks:
                ch = np.linalg.cholesky(hermitize(xb))
                x_chol.append(ch)
                inv_ch = np.linalg.inv(ch)
                x_inv.append(inv_ch.conj().T @ inv_ch)
            r_aff = _affine_residual(b, a_stacks, x_blocks)
            grad_blocks = [c_blocks[k] - mu * x_inv[k] for k in range(nb)]

            # normal equations for the multipliers; the feasibility and
            # centering channels are solved separately so the (tiny) affine
            # residual is never absorbed into the O(1) centering right side
            y_feas = np.zeros(m)
            y_cent = np.zeros(m)
            if m:
                w, mat = _constraint_gram(x_blocks, a_stacks)
                rhs_cent = np.zeros(m)
                for k in range(nb):
                    if len(a_stacks[k]):
                        rhs_cent += np.real(
                            np.einsum("ij,mji->m", grad_blocks[k], w[k]))
                y_feas, y_cent = _sym_solve(mat, np.stack([r_aff, rhs_cent], axis=1)).T
                y = mu * y_feas + y_cent
            dx_blocks = []
            for k in range(nb):
                resid = grad_blocks[k] - _combine(y_cent, a_stacks, k)
                corr = _combine(y_feas, a_stacks, k)
                dx_blocks.append(hermitize(
                    x_blocks[k] @ corr @ x_blocks[k]
                    - (x_blocks[k] @ resid @ x_blocks[k]) / mu))

            alpha_max, decrement = _positivity_range(x_chol, dx_blocks)
            alpha = min(1.0, 0.98 * alpha_max, 1.0 / (1.0 + decrement))
            for k in range(nb):
                x_blocks[k] = hermitize(x_blocks[k] + alpha * dx_blocks[k])
            if decrement < 0.25 and np.max(np.abs(r_aff), initial=0.0) <= feas_tol:
                break
            if decrement < 1e-10:
                break
            # ill-conditioned Gram solves leave a noise floor under which
            # neither the decrement nor the residual contracts further; a
            # small decrement that stops improving means the stage is done
            if decrement < 0.9 * stage_best:
                stage_best = decrement
                no_improve = 0
            else:
                no_improve += 1
            if decrement < 0.25 and no_improve >= 6:
                break
        else:
            raise ConvergenceError("barrier centering failed to settle")
        if mu * n_total <= tol:
            break
        mu *= 0.2
    else:
        raise ConvergenceError("barrier path following exhausted its outer budget")

    # pure feasibility polish against floating point drift
    for _ in range(4):
        r_aff = _affine_residual(b, a_stacks, x_blocks)
        if np.max(np.abs(r_aff), initial=0.0) <= feas_tol or m == 0:
            break
        dx_blocks = _feasibility_step(x_blocks, a_stacks, r_aff)
        trial = [hermitize(xb + dx) for xb, dx in zip(x_blocks, dx_blocks)]
        if all(np.linalg.eigvalsh(t)[0] > 0 for t in trial):
            x_blocks = trial
        else:
            break

    z_blocks = [hermitize(c_blocks[k] - _combine(y, a_stacks, k))
                for k in range(nb)]
    gap = _blk_inner(z_blocks, x_blocks)
    r_aff = _affine_residual(b, a_stacks, x_blocks)
    return SdpSolution(
        x_blocks=x_blocks, y=y, z_blocks=z_blocks,
        value=_blk_inner(c_blocks, x_blocks), gap=gap,
        primal_residual=float(np.max(np.abs(r_aff), initial=0.0)),
        status="optimal", n_iter=it_total)


def cptp_linear_minimize(g, d_out, d_in, *, tol=1e-7):
    """min tr[G J] over Choi matrices of channels: J >= 0, tr_out J = 1_in.

    Returns the optimal Choi matrix (output (x) input ordering, unnormalized
    reference convention so tr J = d_in).
    """
    g = assert_hermitian(g, name="objective")
    if g.shape[0] != d_out * d_in:
        raise ValueError(f"objective dim {g.shape[0]} mismatches {d_out}x{d_in}")
    basis = hermitian_basis(d_in)
    ident = np.eye(d_out, dtype=complex)
    rows = [[np.kron(ident, e)] for e in basis]
    vals = np.array([np.trace(e).real for e in basis])
    prob = SdpProblem(block_dims=[d_out * d_in], objective=[g],
                      constraints=rows, values=vals)
    sol = sdp_solve(prob, tol=tol)
    return hermitize(sol.x_blocks[0])


# ---------------------------------------------------------------------------
# Derivative-free local search
# ---------------------------------------------------------------------------

def nelder_mead_batch(f, x0, *, step=0.25, max_iter=300, fatol=1e-12, xatol=1e-9,
                      plateau_patience=None):
    """Run many Nelder-Mead simplices in lockstep over a batched objective.

    f maps an (k, n) array of points to a (k,) array of values; x0 is (m, n).
    All m simplices advance together so every iteration costs a fixed small
    number of batched calls. Returns (xbest (m, n), fbest (m,)).

    plateau_patience, if set, freezes a simplex whose value spread has stayed
    below fatol for that many consecutive iterations even while its points are
    still far apart. On an objective that is constant along some directions
    the usual (fspread and xspread) test forces a long pure-contraction phase
    that cannot change the answer; the plateau exit skips it.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    m, n = x0.shape
    pts = np.repeat(x0[:, None, :], n + 1, axis=1)
    for j in range(n):
        pts[:, j + 1, j] += step
    vals = np.asarray(f(pts.reshape(-1, n)), dtype=float).reshape(m, n + 1)

    alive = np.ones(m, dtype=bool)
    flat_streak = np.zeros(m, dtype=int)
    for _ in range(max_iter):
        order = np.argsort(vals, axis=1, kind="stable")
        vals = np.take_along_axis(vals, order, axis=1)
        pts = np.take_along_axis(pts, order[:, :, None], axis=1)

        fspread = vals[:, -1] - vals[:, 0]
        xspread = np.max(np.abs(pts - pts[:, :1, :]), axis=(1, 2))
        alive = (fspread > fatol) | (xspread > xatol)
        if plateau_patience is not None:
            flat_streak = np.where(fspread <= fatol, flat_streak + 1, 0)
            alive &= flat_streak < plateau_patience
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break

        p = pts[idx]
        v = vals[idx]
        centroid = p[:, :-1, :].mean(axis=1)
        worst = p[:, -1, :]
        xr = centroid + (centroid - worst)
        fr = np.asarray(f(xr), dtype=float)

        accept_r = (fr >= v[:, 0]) & (fr < v[:, -2])
        new_pt = np.where(accept_r[:, None], xr, worst)
        new_val = np.where(accept_r, fr, v[:, -1])

        expand = fr < v[:, 0]
        if np.any(expand):
            xe = centroid[expand] + 2.0 * (centroid[expand] - worst[expand])
            fe = np.asarray(f(xe), dtype=float)
            take_e = fe < fr[expand]
            pick_x = np.where(take_e[:, None], xe, xr[expand])
            pick_f = np.where(take_e, fe, fr[expand])
            new_pt[expand] = pick_x
            new_val[expand] = pick_f

        contract = fr >= v[:, -2]
        shrink_rows = np.zeros(idx.size, dtype=bool)
        if np.any(contract):
            out_mask = contract & (fr < v[:, -1])
            in_mask = contract & ~out_mask
            xc = np.where(out_mask[:, None],
                          centroid + 0.5 * (xr - centroid),
                          centroid - 0.5 * (centroid - worst))
            fc = np.full(idx.size, np.inf)
            fc[contract] = np.asarray(f(xc[contract]), dtype=float)
            ok = (out_mask & (fc <= fr)) | (in_mask & (fc < v[:, -1]))
            new_pt[ok] = xc[ok]
            new_val[ok] = fc[ok]
            shrink_rows = contract & ~ok

        p[:, -1, :] = new_pt
        v[:, -1] = new_val

        if np.any(shrink_rows):
            sidx = np.nonzero(shrink_rows)[0]
            shr = p[sidx]
            shr[:, 1:, :] = shr[:, :1, :] + 0.5 * (shr[:, 1:, :] - shr[:, :1, :])
            sval = np.asarray(f(shr[:, 1:, :].reshape(-1, n)), dtype=float)
            v[sidx, 1:] = sval.reshape(sidx.size, n)
            p[sidx] = shr

        pts[idx] = p
        vals[idx] = v

    order = np.argsort(vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    pts = np.take_along_axis(pts, order[:, :, None], axis=1)
    return pts[:, 0, :], vals[:, 0]


def nelder_mead(f, x0, *, step=0.25, max_iter=300, fatol=1e-12, xatol=1e-9):
    """Single-start Nelder-Mead on a scalar objective. Returns (x, fval)."""
    def fb(xs):
        return np.array([f(x) for x in xs], dtype=float)
    xs, fs = nelder_mead_batch(fb, np.asarray(x0, dtype=float)[None, :],
                               step=step, max_iter=max_iter, fatol=fatol, xatol=xatol)
    return xs[0], float(fs[0])


def local_search_minimize(f, x0, *, restarts=16, rng=None, step=0.25,
                          max_iter=300, fatol=1e-12, xatol=1e-9, batched=False):
    """Multi-start Nelder-Mead. The first start is x0 itself; the remaining
    restarts jitter x0 with Gaussian noise of scale 0.1*||x0|| + 0.1.

    With batched=True, f must accept an (k, n) array and return (k,) values;
    all restarts then advance in lockstep. Returns (xbest, fbest).
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    scale = 0.1 * float(np.linalg.norm(x0)) + 0.1
    starts = np.repeat(x0[None, :], max(1, restarts), axis=0)
    if restarts > 1:
        starts[1:] += scale * rng.normal(size=(restarts - 1, x0.size))
    if not batched:
        fb = lambda xs: np.array([f(x) for x in xs], dtype=float)
    else:
        fb = f
    xs, fs = nelder_mead_batch(fb, starts, step=step, max_iter=max_iter,
                               fatol=fatol, xatol=xatol)
    k = int(np.argmin(fs))
    return xs[k], float(fs[k])
