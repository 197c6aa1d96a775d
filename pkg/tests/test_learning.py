"""Tests for the online channel-learning loop.

Expected values come from closed-form expectations, Bernoulli/tally
arithmetic, and the public entropy API evaluated independently of the
learner's internal estimator.
"""

import pathlib

import numpy as np
import pytest

from chantherm.channels import (
    QuantumChannel,
    amplitude_damping_channel,
    channel_from_kraus,
    completely_depolarizing_channel,
    depolarizing_channel,
    identity_channel,
)
from chantherm.entropy import channel_relative_entropy
from chantherm import learning
from chantherm.learning import (
    OBSERVABLES,
    EstimateAggregator,
    expectation,
    measure,
    observable_specs,
    sample_observable,
    update,
)

import oracles


def _spec(pauli, state_index):
    """Observable with the given Pauli label and stabilizer-state index."""
    labels = {"X": 0, "Y": 1, "Z": 2}
    return OBSERVABLES[6 * labels[pauli] + state_index]


def _random_cptp(rng, d=2, env=2):
    """Random channel from a Haar-ish Stinespring isometry."""
    g = rng.normal(size=(d * env, d)) + 1j * rng.normal(size=(d * env, d))
    v, _ = np.linalg.qr(g)
    kraus = [v[k * d:(k + 1) * d, :] for k in range(env)]
    return channel_from_kraus(kraus, d)


class TestObservables:
    def test_eighteen_specs_in_canonical_order(self):
        specs = observable_specs()
        assert len(specs) == 18
        for k, spec in enumerate(specs):
            assert spec.id == k
        # three Pauli blocks of six states each, in the fixed state order
        assert [s.pauli for s in specs] == ["X"] * 6 + ["Y"] * 6 + ["Z"] * 6
        for block in range(3):
            six = specs[6 * block:6 * block + 6]
            kets = [np.array([1, 0]), np.array([0, 1]),
                    np.array([1, 1]) / np.sqrt(2), np.array([1, -1]) / np.sqrt(2),
                    np.array([1, 1j]) / np.sqrt(2), np.array([1, -1j]) / np.sqrt(2)]
            for spec, ket in zip(six, kets):
                assert np.allclose(spec.input_state, np.outer(ket, ket.conj()),
                                   atol=1e-12)

    def test_operators_hermitian_with_unit_norm(self):
        for spec in OBSERVABLES:
            e = spec.operator
            assert np.allclose(e, e.conj().T, atol=1e-12)
            w = np.linalg.eigvalsh(e)
            assert abs(max(abs(w[0]), abs(w[-1])) - 1.0) < 1e-12

    def test_sampling_uniform_within_five_sigma(self):
        rng = np.random.default_rng(123)
        counts = np.zeros(18, dtype=int)
        for _ in range(18000):
            counts[sample_observable(rng).id] += 1
        sigma = np.sqrt(18000 * (1 / 18) * (17 / 18))
        assert np.all(np.abs(counts - 1000) <= 5 * sigma)

    def test_same_seed_gives_identical_sequences(self):
        a = np.random.default_rng(42)
        b = np.random.default_rng(42)
        ids_a = [sample_observable(a).id for _ in range(40)]
        ids_b = [sample_observable(b).id for _ in range(40)]
        assert ids_a == ids_b


class TestMeasure:
    def test_identity_channel_z_on_zero_state_is_deterministic(self):
        rng = np.random.default_rng(0)
        agg = EstimateAggregator()
        s = measure(identity_channel(2), _spec("Z", 0), 100000, rng, agg)
        assert s >= 1.0 - 1e-12

    def test_depolarizing_population_within_three_sigma(self):
        rng = np.random.default_rng(5)
        agg = EstimateAggregator()
        s = measure(depolarizing_channel(0.2), _spec("Z", 0), 10000, rng, agg)
        assert abs(s - 0.8) <= 3 * 0.006

    def test_two_batches_aggregate_like_one(self):
        agg = EstimateAggregator()
        agg.add(5, 100, 60)
        agg.add(5, 100, -20)
        one = EstimateAggregator()
        one.add(5, 200, 40)
        assert agg.mean(5) == one.mean(5) == 0.2

    def test_split_batches_match_single_batch_in_distribution(self):
        ch = depolarizing_channel(0.2)
        spec = _spec("Z", 0)
        split, whole = [], []
        rng_a = np.random.default_rng(21)
        rng_b = np.random.default_rng(22)
        for _ in range(600):
            agg = EstimateAggregator()
            measure(ch, spec, 100, rng_a, agg)
            split.append(measure(ch, spec, 100, rng_a, agg))
            agg2 = EstimateAggregator()
            whole.append(measure(ch, spec, 200, rng_b, agg2))
        split, whole = np.array(split), np.array(whole)
        # population: mean 0.8, var (1-0.8^2)/200 = 1.8e-3 for both schemes
        se = np.sqrt(1.8e-3 / 600)
        assert abs(split.mean() - 0.8) <= 4 * se
        assert abs(whole.mean() - 0.8) <= 4 * se
        assert 0.6 <= split.var() / whole.var() <= 1.6

    def test_invalid_channel_rejected(self):
        bad = QuantumChannel(1.3 * identity_channel(2).choi, 2, 2)
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            measure(bad, _spec("Z", 0), 100, rng, EstimateAggregator())

    def test_aggregator_rejects_impossible_tallies(self):
        agg = EstimateAggregator()
        with pytest.raises(ValueError):
            agg.add(3, 10, 12)
        with pytest.raises(ValueError):
            agg.mean(4)


def _objective(choi, m_floor_ch, e_op, s, eta, rng):
    ch = QuantumChannel(choi, 2, 2)
    div = channel_relative_entropy(ch, m_floor_ch, restarts=24, rng=rng)
    gap = s - float(np.real(np.trace(e_op @ choi)))
    return div + eta * gap * gap


class TestUpdate:
    def test_vanishing_learning_rate_returns_previous(self):
        m_prev = depolarizing_channel(0.3)
        out = update(m_prev, _spec("Z", 0), 0.9, 1e-9)
        assert np.max(np.abs(out.choi - m_prev.choi)) < 1e-6

    def test_zero_loss_at_previous_returns_previous(self):
        m_prev = depolarizing_channel(0.3)
        spec = _spec("Z", 0)
        s = expectation(m_prev, spec)
        out = update(m_prev, spec, s, 0.15)
        assert np.max(np.abs(out.choi - m_prev.choi)) < 1e-6

    def test_depolarizing_example_lands_between_endpoints(self):
        m_prev = completely_depolarizing_channel(2)
        spec = _spec("Z", 0)
        out = update(m_prev, spec, 0.8, 0.15)
        pred = expectation(out, spec)
        assert 0.0 < pred < 0.8

        # endpoints of the first conditional-gradient segment: the floored
        # start and the vertex that minimizes the starting linear model
        m_floor = learning._floored(m_prev.choi)
        m_floor_ch = QuantumChannel(m_floor, 2, 2)
        e_op = spec.operator
        grad0 = -2.0 * 0.15 * 0.8 * e_op
        from chantherm.optim import cptp_linear_minimize
        vertex = cptp_linear_minimize(grad0, 2, 2, tol=1e-7)
        rng = np.random.default_rng(77)
        f_out = _objective(out.choi, m_floor_ch, e_op, 0.8, 0.15, rng)
        f_start = _objective(m_floor, m_floor_ch, e_op, 0.8, 0.15, rng)
        f_vertex = _objective(vertex, m_floor_ch, e_op, 0.8, 0.15, rng)
        assert f_out < f_start
        assert f_out < f_vertex

    def test_learning_rate_domain_enforced(self):
        m_prev = depolarizing_channel(0.3)
        with pytest.raises(ValueError):
            update(m_prev, _spec("Z", 0), 0.5, -0.1)
        with pytest.raises(ValueError):
            update(m_prev, _spec("Z", 0), 0.5, 1.0)

    def test_iterates_stay_cptp(self):
        rng = np.random.default_rng(9)
        m = completely_depolarizing_channel(2)
        true = depolarizing_channel(0.1)
        agg = EstimateAggregator()
        for _ in range(20):
            spec = sample_observable(rng)
            s = measure(true, spec, 100, rng, agg)
            m = update(m, spec, s, 0.15)
            assert m.is_cptp(psd_tol=1e-7, tp_tol=1e-7)

    def test_objective_convex_at_midpoint(self):
        rng = np.random.default_rng(31)
        m_floor_ch = QuantumChannel(
            learning._floored(depolarizing_channel(0.4).choi), 2, 2)
        spec = _spec("X", 2)
        a = _random_cptp(rng).choi
        b = _random_cptp(rng).choi
        mid = 0.5 * (a + b)
        rng_f = np.random.default_rng(55)
        fa = _objective(a, m_floor_ch, spec.operator, 0.3, 0.15, rng_f)
        fb = _objective(b, m_floor_ch, spec.operator, 0.3, 0.15, rng_f)
        fm = _objective(mid, m_floor_ch, spec.operator, 0.3, 0.15, rng_f)
        assert fm <= 0.5 * (fa + fb) + 1e-7


class TestRun:
    def test_trace_columns_complete(self):
        trace = learning.run(depolarizing_channel(0.2), iters=6, seed=4)
        for name in ("t", "obs_id", "s", "loss", "rel_entropy",
                     "rel_entropy_floored", "diamond", "seconds"):
            assert len(getattr(trace, name)) == 7
        assert list(trace.t) == list(range(7))
        assert trace.obs_id[0] == -1
        assert np.isnan(trace.s[0]) and np.isnan(trace.loss[0])
        assert all(0 <= k < 18 for k in trace.obs_id[1:])

    def test_divergence_estimates_match_public_api(self):
        true = depolarizing_channel(0.2)
        trace = learning.run(true, iters=15, seed=1)
        ref = channel_relative_entropy(trace.final_channel, true,
                                       restarts=16,
                                       rng=np.random.default_rng(3))
        assert abs(trace.rel_entropy[-1] - ref) < 1e-6

    def test_rank_deficient_target_reports_infinite_headline(self):
        trace = learning.run(amplitude_damping_channel(0.3), iters=8, seed=2)
        assert np.isinf(trace.rel_entropy).all()
        assert np.isfinite(trace.rel_entropy_floored).all()
        assert np.isfinite(trace.diamond).all()

    def test_exact_expectations_zero_loss_at_fixed_point(self):
        true = completely_depolarizing_channel(2)
        trace = learning.run(true, iters=12, seed=6, exact_expectations=True)
        assert np.max(np.abs(trace.loss[1:])) < 1e-12
        assert trace.diamond[-1] < 1e-8

    def test_noise_floor_drift_stays_small(self):
        true = completely_depolarizing_channel(2)
        trace = learning.run(true, iters=200, seed=11)
        assert np.max(trace.diamond) <= 0.05
        # losses reflect sampling noise only: scale (1/sqrt(shots))^2
        assert np.nanmean(trace.loss[1:]) < 0.01

    def test_non_qubit_targets_rejected(self):
        with pytest.raises(ValueError):
            learning.run(completely_depolarizing_channel(3), iters=1, seed=0)


class TestTraceSerialization:
    def test_csv_format_and_reruns_byte_identical(self, tmp_path):
        kwargs = dict(iters=8, eta=0.15, shots_per_iter=100, seed=7)
        a = learning.run(depolarizing_channel(0.2), **kwargs)
        b = learning.run(depolarizing_channel(0.2), **kwargs)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        a.to_csv(pa)
        b.to_csv(pb)
        assert pa.read_bytes() == pb.read_bytes()
        lines = pa.read_text().splitlines()
        assert lines[0] == "# format=1"
        assert lines[1] == "# seed=7 eta=0.15 shots=100"
        assert lines[2] == ("t,obs_id,s,loss,rel_entropy,"
                            "rel_entropy_floored,diamond,seconds")
        assert len(lines) == 3 + 9
        # seconds column zeroed by default so bytes are reproducible
        assert all(row.rsplit(",", 1)[1] == "0" for row in lines[3:])

    def test_infinite_divergence_serializes_as_inf(self, tmp_path):
        trace = learning.run(amplitude_damping_channel(0.3), iters=2, seed=3)
        p = tmp_path / "ad.csv"
        trace.to_csv(p)
        rows = p.read_text().splitlines()[3:]
        for row in rows:
            rel = row.split(",")[4]
            assert rel == "inf"
            assert np.isinf(float(rel))

    def test_timing_flag_writes_real_seconds(self, tmp_path):
        trace = learning.run(depolarizing_channel(0.2), iters=3, seed=9)
        p = tmp_path / "timed.csv"
        trace.to_csv(p, timing=True)
        rows = p.read_text().splitlines()[3:]
        secs = [float(r.rsplit(",", 1)[1]) for r in rows]
        assert any(v > 0 for v in secs)


class TestLearningProgress:
    def test_depolarizing_divergence_drops(self):
        true = depolarizing_channel(0.2)
        trace = learning.run(true, iters=60, seed=1)
        assert trace.rel_entropy[-1] < 0.5 * trace.rel_entropy[0]
        assert trace.diamond[-1] < trace.diamond[0]

    def test_internal_estimates_bounded_below_by_probe_oracle(self):
        true = depolarizing_channel(0.2)
        trace = learning.run(true, iters=10, seed=8)
        probe = oracles.channel_relent_probe_max(
            trace.final_channel.choi, true.choi, 2, 2,
            n_probe=400, seed=13)
        assert trace.rel_entropy[-1] >= probe - 1e-6
