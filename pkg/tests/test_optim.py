import numpy as np
import pytest
import scipy.optimize

from chantherm import optim
from conftest import PAULI, random_hermitian, random_density
import oracles


class TestMaxEnt:
    def test_gibbs_golden_case(self):
        # two constraints on a qubit: unit trace and <Z> = -tanh(1)
        sol = optim.maxent_solve([np.eye(2, dtype=complex), PAULI["Z"]],
                                 [1.0, -np.tanh(1.0)])
        assert sol.status == "converged"
        want = oracles.gibbs(PAULI["Z"])
        assert np.linalg.norm(sol.tau - want) < 1e-9
        assert abs(sol.lambdas[1] - 1.0) < 1e-8
        assert abs(sol.lambdas[0] - (np.log(2 * np.cosh(1.0)) - 1.0)) < 1e-8

    def test_trace_only_gives_maximally_mixed(self):
        sol = optim.maxent_solve([np.eye(3, dtype=complex)], [1.0])
        assert np.linalg.norm(sol.tau - np.eye(3) / 3) < 1e-10

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_independent_dual_solver(self, seed):
        rng = np.random.default_rng(seed)
        d = 3
        tau0 = random_density(rng, d)
        tau0 = 0.8 * tau0 + 0.2 * np.eye(d) / d
        ops = [np.eye(d, dtype=complex)] + [random_hermitian(rng, d) for _ in range(3)]
        b = [float(np.real(np.trace(a @ tau0))) for a in ops]
        sol = optim.maxent_solve(ops, b)
        assert sol.status == "converged"
        assert sol.kkt_residual <= 1e-9
        _, tau_oracle = oracles.maxent_dual_oracle(ops, b, d)
        assert np.linalg.norm(sol.tau - tau_oracle) < 1e-6

    def test_dual_trace_monotone(self, rng):
        d = 4
        tau0 = random_density(rng, d)
        tau0 = 0.7 * tau0 + 0.3 * np.eye(d) / d
        ops = [np.eye(d, dtype=complex)] + [random_hermitian(rng, d) for _ in range(4)]
        b = [float(np.real(np.trace(a @ tau0))) for a in ops]
        sol = optim.maxent_solve(ops, b)
        diffs = np.diff(sol.dual_trace)
        assert np.all(diffs <= 1e-12)

    def test_duplicated_constraints_still_converge(self):
        # consistent but degenerate rows exercise the Hessian regularization
        ops = [np.eye(2, dtype=complex), PAULI["Z"], PAULI["Z"]]
        b = [1.0, -np.tanh(1.0), -np.tanh(1.0)]
        sol = optim.maxent_solve(ops, b)
        assert sol.status == "converged"
        assert np.linalg.norm(sol.tau - oracles.gibbs(PAULI["Z"])) < 1e-8

    def test_exact_boundary_target_converges_rank_deficient(self):
        # <|0><0|> = 1 forces a pure optimizer; the dual meets the residual
        # tolerance at moderate multipliers, leaving a rank-deficient state
        p0 = np.diag([1.0, 0.0]).astype(complex)
        sol = optim.maxent_solve([np.eye(2, dtype=complex), p0], [1.0, 1.0])
        assert sol.status == "converged"
        assert np.linalg.norm(sol.tau - p0) < 1e-8
        assert np.linalg.eigvalsh(sol.tau)[0] < 1e-8

    def test_just_outside_boundary_classified_boundary(self):
        # a target a hair outside the attainable set: the dual diverges while
        # the residual settles at the (tiny) infeasibility gap
        sol = optim.maxent_solve([np.eye(2, dtype=complex), PAULI["Z"]],
                                 [1.0, 1.0 + 1e-7])
        assert sol.status == "boundary"
        assert sol.kkt_residual <= np.sqrt(1e-9)
        assert np.linalg.norm(sol.tau - np.diag([1.0, 0.0])) < 1e-4

    def test_infeasible_raises_with_certificate(self):
        with pytest.raises(optim.InfeasibleError) as exc:
            optim.maxent_solve([np.eye(2, dtype=complex), PAULI["Z"]], [1.0, 3.0])
        cert = exc.value.certificate
        assert cert is not None
        assert abs(np.linalg.norm(cert) - 1.0) < 1e-12
        assert exc.value.best.kkt_residual > 1e-2

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            optim.maxent_solve([np.eye(2, dtype=complex)], [1.0, 2.0])


class TestSdp:
    def test_min_trace_above_identity(self):
        # min tr X s.t. X >= I_2, written with a slack block: X - S = I
        basis = [np.eye(2, dtype=complex) / np.sqrt(2)]
        from chantherm.linalg import traceless_hermitian_basis
        basis += list(traceless_hermitian_basis(2))
        rows = [[e, -e] for e in basis]
        vals = [float(np.real(np.trace(e))) for e in basis]
        prob = optim.SdpProblem(block_dims=[2, 2],
                                objective=[np.eye(2, dtype=complex),
                                           np.zeros((2, 2), dtype=complex)],
                                constraints=rows, values=vals)
        sol = optim.sdp_solve(prob)
        assert abs(sol.value - 2.0) < 1e-7
        assert sol.gap < 1e-7

    def test_max_z_expectation_on_states(self):
        # max tr(Z X) over unit-trace states -> 1, via min of -Z
        prob = optim.SdpProblem(block_dims=[2], objective=[-PAULI["Z"]],
                                constraints=[[np.eye(2, dtype=complex)]],
                                values=[1.0])
        sol = optim.sdp_solve(prob)
        assert abs(sol.value + 1.0) < 1e-7
        assert np.linalg.norm(sol.x_blocks[0] - np.diag([1.0, 0.0])) < 1e-3

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_diagonal_case_matches_linprog(self, seed):
        # diagonal blocks reduce to an LP; HiGHS is the independent oracle
        rng = np.random.default_rng(seed)
        n, m = 6, 3
        a = rng.normal(size=(m, n))
        x_feas = rng.uniform(0.5, 1.5, size=n)
        b = a @ x_feas
        # c = A^T w + s with s > 0 keeps the LP bounded below on {Ax=b, x>=0}
        c = a.T @ rng.normal(size=m) + rng.uniform(0.1, 1.0, size=n)
        lp = scipy.optimize.linprog(c, A_eq=a, b_eq=b, bounds=[(0, None)] * n,
                                    method="highs")
        assert lp.status == 0
        prob = optim.SdpProblem(
            block_dims=[1] * n,
            objective=[np.array([[ci]], dtype=complex) for ci in c],
            constraints=[[np.array([[a[i, j]]], dtype=complex) for j in range(n)]
                         for i in range(m)],
            values=b)
        sol = optim.sdp_solve(prob)
        assert abs(sol.value - lp.fun) < 1e-6 * max(1, abs(lp.fun))

    @pytest.mark.parametrize("seed", [0, 1])
    def test_certified_optimality_random_instance(self, seed):
        # primal feasible + dual feasible + tiny gap is a complete certificate
        rng = np.random.default_rng(100 + seed)
        d, m = 4, 5
        x_feas = random_density(rng, d) + 0.5 * np.eye(d)
        ops = [random_hermitian(rng, d) for _ in range(m)]
        b = np.array([float(np.real(np.trace(a @ x_feas))) for a in ops])
        # c = sum w_i A_i + (strictly positive) keeps the objective bounded
        # below on the feasible slice and puts the optimum at finite X
        w = rng.normal(size=m)
        c = sum(wi * a for wi, a in zip(w, ops)) + random_density(rng, d) + 0.3 * np.eye(d)
        prob = optim.SdpProblem(block_dims=[d], objective=[c],
                                constraints=[[a] for a in ops], values=b)
        sol = optim.sdp_solve(prob)
        assert sol.primal_residual < 1e-8
        assert np.min(np.linalg.eigvalsh(sol.x_blocks[0])) > -1e-10
        assert np.min(np.linalg.eigvalsh(sol.z_blocks[0])) > -1e-7
        assert 0 <= sol.gap < 1e-7


class TestCptpLinearMinimize:
    def test_forces_replacer(self):
        # G = Z (x) 1 is minimized by the channel that outputs |1><1| always
        g = np.kron(PAULI["Z"], np.eye(2))
        j = optim.cptp_linear_minimize(g, 2, 2)
        want = np.kron(np.diag([0.0, 1.0]), np.eye(2))
        assert abs(np.real(np.trace(g @ j)) + 2.0) < 1e-6
        assert np.linalg.norm(j - want) < 1e-3

    def test_result_is_cptp(self, rng):
        g = random_hermitian(rng, 4)
        j = optim.cptp_linear_minimize(g, 2, 2)
        assert np.min(np.linalg.eigvalsh(j)) > -1e-9
        jr = j.reshape(2, 2, 2, 2)
        tr_b = np.einsum("aiaj->ij", jr)
        assert np.linalg.norm(tr_b - np.eye(2)) < 1e-7

    def test_value_certified_by_duality(self, rng):
        g = random_hermitian(rng, 4)
        from chantherm.linalg import hermitian_basis
        basis = hermitian_basis(2)
        rows = [[np.kron(np.eye(2, dtype=complex), e)] for e in basis]
        vals = np.array([np.trace(e).real for e in basis])
        prob = optim.SdpProblem(block_dims=[4], objective=[g],
                                constraints=rows, values=vals)
        sol = optim.sdp_solve(prob)
        assert sol.gap < 1e-7
        assert np.min(np.linalg.eigvalsh(sol.z_blocks[0])) > -1e-7


class TestNelderMead:
    def test_rosenbrock_multistart(self):
        def rosen(x):
            return float((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)
        rng = np.random.default_rng(7)
        x, fval = optim.local_search_minimize(rosen, np.zeros(2), restarts=5,
                                              rng=rng, max_iter=600)
        assert fval <= 1e-6
        assert np.linalg.norm(x - 1.0) < 1e-2

    def test_batch_matches_scalar(self):
        shifts = np.array([[0.0, 1.0], [2.0, -1.0], [-3.0, 0.5]])

        def fb(xs):
            # each row i of the batch belongs to simplex i mod 3 only through
            # its own coordinates; use a shared well so any row evaluates it
            return np.sum((xs[:, None, :] - shifts[None]) ** 2, axis=2).min(axis=1)

        xs, fs = optim.nelder_mead_batch(fb, shifts + 0.3, max_iter=400)
        assert np.all(fs < 1e-10)
        for row, want in zip(xs, shifts):
            assert np.linalg.norm(row - want) < 1e-4

    def test_batch_plateau_patience_freezes_flat_valleys(self):
        # objective ignores the second coordinate, so fspread collapses long
        # before xspread does; patience should cut the iteration count
        calls = {"n": 0}

        def fb(xs):
            calls["n"] += 1
            return xs[:, 0] ** 2

        x0 = np.array([[1.0, 5.0], [-2.0, -7.0]])
        xs_a, fs_a = optim.nelder_mead_batch(fb, x0, max_iter=500)
        full = calls["n"]
        calls["n"] = 0
        xs_b, fs_b = optim.nelder_mead_batch(fb, x0, max_iter=500,
                                             fatol=1e-12, plateau_patience=20)
        assert np.all(fs_b < 1e-8)
        assert calls["n"] < full // 2

    def test_scalar_quadratic(self):
        x, fval = optim.nelder_mead(lambda v: float(np.sum((v - 2.5) ** 2)),
                                    np.zeros(3), max_iter=500)
        assert fval < 1e-10
        assert np.linalg.norm(x - 2.5) < 1e-4

    def test_batched_flag_in_local_search(self):
        def fb(xs):
            return np.sum(xs ** 2, axis=1)
        rng = np.random.default_rng(3)
        x, fval = optim.local_search_minimize(fb, np.full(2, 4.0), restarts=8,
                                              rng=rng, batched=True, max_iter=400)
        assert fval < 1e-9
