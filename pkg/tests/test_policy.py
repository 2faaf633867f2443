import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.core import BanditInstance, Schedule, SphereInstance, logistic, random_instance
from twophase.env import RewardStream
from twophase.policy import (
    ProbeSet,
    baseline_random,
    baseline_ucb1,
    baseline_ucb1_batch,
    choose_probe_set,
    estimate_preference,
    run_trial,
    select_arm_finite,
    select_arm_sphere,
)
from twophase.theory import central_angle

THREE_ARMS = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])


class TestProbeSet:
    def test_identity(self):
        inst = BanditInstance(np.eye(3), np.array([0.1, 0.2, 0.3]))
        assert choose_probe_set(inst).indices == (0, 1, 2)

    def test_duplicates_never_both(self):
        U = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        probe = choose_probe_set(BanditInstance(U, np.array([0.3, 0.1])))
        assert set(probe.indices) != {0, 1}
        assert np.linalg.matrix_rank(probe.arms) == 2

    def test_best_conditioning_among_candidates(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]))
        probe = choose_probe_set(inst)
        conds = {
            c: np.linalg.cond(THREE_ARMS[:, list(c)]) for c in [(0, 1), (0, 2), (1, 2)]
        }
        assert probe.indices == min(conds, key=conds.get)
        assert probe.indices == (0, 1)

    def test_rank_deficient_matrix(self):
        with pytest.raises(ValueError):
            ProbeSet((0, 1), np.array([[1.0, 2.0], [2.0, 4.0]]))

    @settings(max_examples=30)
    @given(st.integers(1, 6), st.integers(0, 10), st.integers(0, 2**31))
    def test_always_full_rank(self, n, extra, seed):
        inst = random_instance(n, n + extra, np.random.default_rng(seed))
        probe = choose_probe_set(inst)
        assert len(set(probe.indices)) == n
        assert np.linalg.matrix_rank(probe.arms) == n
        np.testing.assert_array_equal(probe.arms, inst.arms[:, list(probe.indices)])


class TestEstimatePreference:
    def test_identity_system(self):
        z, good = estimate_preference(ProbeSet.standard_basis(2), [0.5, logistic(1.0)])
        assert good
        np.testing.assert_allclose(z, [0.0, 1.0], atol=1e-10)

    @pytest.mark.parametrize("est", [[0.0, 0.4], [0.3, 1.0]])
    def test_bad_epoch(self, est):
        z, good = estimate_preference(ProbeSet.standard_basis(2), est)
        assert not good
        np.testing.assert_array_equal(z, [0.0, 0.0])

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            estimate_preference(ProbeSet.standard_basis(2), [0.5])

    @settings(max_examples=40)
    @given(st.integers(1, 8), st.integers(0, 2**31))
    def test_exact_inputs_recover(self, n, seed):
        rng = np.random.default_rng(seed)
        sigma = rng.normal(size=(n, n))
        if np.linalg.cond(sigma) > 1e4:
            return
        z = rng.normal(size=n)
        probe = ProbeSet(tuple(range(n)), sigma)
        alpha = logistic(sigma.T @ z)
        z_hat, good = estimate_preference(probe, alpha)
        assert good
        assert np.max(np.abs(z_hat - z)) <= 1e-8


class TestSelectArm:
    def test_true_preference_picks_best(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]), [1, 1, 10])
        assert select_arm_finite(inst, inst.preference) in inst.best_set

    def test_zero_estimate_ties_to_first(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]))
        assert select_arm_finite(inst, np.zeros(2)) == 0

    def test_zero_estimate_with_weights(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]), [1, 1, 10])
        assert select_arm_finite(inst, np.zeros(2)) == 2

    def test_weighted_uses_link(self):
        # large estimate norm: the link saturates and the heavier weight wins
        U = np.array([[1.0, 0.9], [0.0, 0.1]])
        inst = BanditInstance(U, np.array([0.1, 0.0]), [1.0, 1.5])
        z = np.array([50.0, 0.0])
        assert select_arm_finite(inst, z) == 1
        assert int(np.argmax(U.T @ z)) == 0

    @settings(max_examples=40)
    @given(st.integers(1, 5), st.integers(0, 8), st.integers(0, 2**31), st.floats(1e-3, 1e3))
    def test_unweighted_matches_linear_argmax_and_scale(self, n, extra, seed, c):
        rng = np.random.default_rng(seed)
        inst = random_instance(n, n + extra, rng)
        z = rng.normal(size=n)
        k = select_arm_finite(inst, z)
        assert k == int(np.argmax(inst.arms.T @ z))
        assert select_arm_finite(inst, c * z) == k

    def test_sphere_normalises(self):
        np.testing.assert_allclose(select_arm_sphere([3.0, 4.0]), [0.6, 0.8])

    def test_sphere_fallback(self):
        np.testing.assert_array_equal(select_arm_sphere(np.zeros(3)), [1.0, 0.0, 0.0])

    def test_sphere_scale(self):
        z = np.array([0.3, -1.2, 0.5])
        inst = SphereInstance(z)
        assert inst.regret_of(select_arm_sphere(4.0 * z)) == pytest.approx(0.0, abs=1e-15)


class TestRunTrial:
    def test_single_sweep(self):
        inst = BanditInstance(np.eye(3), np.array([0.1, 0.2, 0.3]))
        tr = run_trial(inst, Schedule.linear_over_n(3), 3, RewardStream(0))
        assert tr.length == 3 and tr.phase2_pulls == 0 and tr.phases == [1, 1, 1]

    def test_epoch_boundaries_linear(self):
        inst = BanditInstance(np.eye(2), np.array([0.4, -0.3]))
        tr = run_trial(inst, Schedule.linear_over_n(2), 10, RewardStream(0))
        assert tr.epoch_boundaries == [1, 3, 6, 9]
        assert tr.length == 10

    def test_truncation_mid_phase_one(self):
        inst = BanditInstance(np.eye(3), np.array([0.4, -0.3, 0.1]))
        tr = run_trial(inst, Schedule.linear_over_n(3), 4, RewardStream(0))
        assert tr.length == 4 and tr.phase1_pulls == 4
        assert len(tr.epochs) == 1

    def test_phase_one_count(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]))
        tr = run_trial(inst, Schedule.lls(), 5000, RewardStream(2))
        completed = len(tr.epochs)
        assert tr.phase1_pulls >= 2 * completed
        assert tr.phase1_pulls <= 2 * len(tr.epoch_boundaries)

    def test_replay_deterministic(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]), [1, 1, 2])
        a = run_trial(inst, Schedule.lls(), 3000, RewardStream(5), detail=True)
        b = run_trial(inst, Schedule.lls(), 3000, RewardStream(5), detail=True)
        assert a.arms == b.arms
        np.testing.assert_array_equal(a.rewards(), b.rewards())
        assert a.total_regret == b.total_regret

    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError):
            run_trial(BanditInstance(np.eye(2), np.ones(2) * 0.1), Schedule.lls(), 0, RewardStream(0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**31), st.integers(1, 3000))
    def test_epoch_invariants(self, n, extra, seed, T):
        rng = np.random.default_rng(seed)
        inst = random_instance(n, n + extra, rng, z_norm=2.0)
        sched = Schedule.lls()
        tr = run_trial(inst, sched, T, RewardStream(seed))
        assert tr.length == T
        prev_good = False
        for st_ in tr.epochs:
            np.testing.assert_array_equal(st_.estimates, st_.success_counts / st_.epoch)
            inside = bool(np.all((st_.estimates > 0) & (st_.estimates < 1)))
            assert st_.good == inside
            if not st_.good:
                assert not np.any(st_.z_estimate)
            assert st_.good or not prev_good
            prev_good = st_.good
        L = len(tr.epoch_boundaries)
        assert sum(n + sched.g(l) for l in range(1, L)) <= T
        arms, phases, regrets = tr.per_step()
        assert np.all((regrets >= 0) & (regrets <= inst.best_value))

    def test_perfect_information(self):
        inst = BanditInstance(THREE_ARMS, np.array([0.3, 0.9]), [1.0, 1.0, 1.2])
        tr = run_trial(inst, Schedule.lls(), 5000, RewardStream(1), exact_estimates=True)
        assert tr.phase2_regret == 0.0
        assert all(e.chosen_arm in inst.best_set for e in tr.epochs)

    def test_sphere_regret_identity(self):
        z = np.array([0.6, -0.8, 0.0])
        inst = SphereInstance(z)
        sched = Schedule.linear_over_n(3)
        tr = run_trial(inst, sched, 3000, RewardStream(3))
        with_phase2 = [e for e in tr.epochs if sched.g(e.epoch) > 0]
        runs = [r for r, ph in zip(tr.step_regrets, tr.phases) if ph == 2]
        assert len(runs) == len(with_phase2)
        for e, r in zip(with_phase2, runs):
            theta = central_angle(e.z_estimate, z)
            if e.good:
                assert r == pytest.approx(logistic(1.0) - logistic(math.cos(theta)), abs=1e-12)
            else:
                # the fallback arm does no worse than the angle-pi convention
                assert r <= logistic(1.0) - logistic(math.cos(theta)) + 1e-15

class TestBaselines:
    def test_ucb_single_arm(self):
        inst = BanditInstance(np.array([[1.0]]), np.array([0.3]))
        assert baseline_ucb1(inst, 500, RewardStream(0)).total_regret == 0.0

    def test_random_single_arm(self):
        inst = BanditInstance(np.array([[1.0]]), np.array([0.3]))
        assert baseline_random(inst, 500, RewardStream(0)).total_regret == 0.0

    def test_ucb_batch_matches_single(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]), [1, 2, 1])
        streams = lambda: [RewardStream.for_trial(9, i) for i in range(4)]
        batch = baseline_ucb1_batch(inst, 2000, streams())
        for tr, s in zip(batch, streams()):
            single = baseline_ucb1(inst, 2000, s)
            assert single.arms == tr.arms
            assert single.total_regret == tr.total_regret

    def test_ucb_logarithmic_growth(self):
        inst = BanditInstance(np.eye(2), np.array([1.5, -1.5]))
        traces = baseline_ucb1_batch(inst, 10_000, [RewardStream.for_trial(1, i) for i in range(200)])
        r = np.array([tr.cumulative_regret_at([1000, 10_000]) for tr in traces]).mean(axis=0)
        assert r[1] / r[0] < 2

    def test_random_expected_regret(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]), [1.0, 2.0, 1.0])
        gaps = inst.best_value - inst.weights * inst.true_means
        T, trials = 2000, 200
        totals = np.array([baseline_random(inst, T, RewardStream.for_trial(3, i)).total_regret for i in range(trials)])
        expected = T * gaps.mean()
        sd = math.sqrt(T * gaps.var())
        assert abs(totals.mean() - expected) <= 4 * sd / math.sqrt(trials)

    def test_random_uses_one_draw_per_pull(self):
        inst = BanditInstance(THREE_ARMS, np.array([1.0, 0.2]))
        s = RewardStream(0)
        baseline_random(inst, 321, s)
        assert s.draws == 321
