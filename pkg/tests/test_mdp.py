import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from riskpvf.envs import build_cliffworld, random_mdp
from riskpvf.mdp import (
    AliasedBernoulliPolicy,
    CapacityError,
    FiniteMdp,
    TabularPolicy,
    dumps_mdp,
    enumerate_trajectories,
    loads_mdp,
    log_policy_grad,
    policy_from_dict,
    policy_probs,
    policy_to_dict,
    sample_batch,
    sample_trajectory,
)

from conftest import deterministic_chain, random_policy


class TestPolicyProbs:
    def test_equal_logits_give_uniform(self):
        pol = TabularPolicy(np.full((2, 4, 3), 1.7))
        np.testing.assert_allclose(policy_probs(pol, 1, 2), np.full(4, 0.25), atol=1e-15)

    def test_closed_form_two_actions(self):
        logits = np.zeros((1, 2, 1))
        logits[0, 1, 0] = math.log(3.0)
        np.testing.assert_allclose(policy_probs(TabularPolicy(logits), 0, 0), [0.25, 0.75], atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        logits = np.zeros((1, 2, 1))
        logits[0, 0, 0] = 1000.0
        probs = policy_probs(TabularPolicy(logits), 0, 0)
        assert np.all(np.isfinite(probs))
        np.testing.assert_allclose(probs, [1.0, 0.0], atol=1e-12)

    def test_out_of_range(self):
        pol = TabularPolicy(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            policy_probs(pol, 0, 3)
        with pytest.raises(ValueError):
            policy_probs(pol, 2, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_rows_are_probability_vectors(self, seed):
        rng = np.random.default_rng(seed)
        pol = TabularPolicy(10 * rng.standard_normal((3, 4, 5)))
        table = pol.probs_table()
        assert np.all(table >= 0)
        np.testing.assert_allclose(table.sum(axis=2), 1.0, atol=1e-12)


class TestLogPolicyGrad:
    def test_uniform_two_actions(self):
        g = log_policy_grad(TabularPolicy(np.zeros((1, 2, 1))), 0, 0, 0)
        np.testing.assert_allclose(g[0, :, 0], [0.5, -0.5])

    def test_saturated_policy_is_flat(self):
        logits = np.zeros((1, 2, 1))
        logits[0, 0, 0] = 60.0
        g = log_policy_grad(TabularPolicy(logits), 0, 0, 0)
        np.testing.assert_allclose(g, 0.0, atol=1e-20)

    def test_sparse_row(self):
        pol = TabularPolicy(np.random.default_rng(0).standard_normal((3, 2, 4)))
        g = log_policy_grad(pol, 1, 0, 2)
        mask = np.zeros_like(g, dtype=bool)
        mask[1, :, 2] = True
        assert np.all(g[~mask] == 0)
        assert abs(g[1, :, 2].sum()) < 1e-15

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 2), st.integers(0, 2), st.integers(0, 3))
    def test_matches_finite_differences(self, seed, s, a, t):
        logits = np.random.default_rng(seed).standard_normal((3, 3, 4))
        pol = TabularPolicy(logits)
        g = log_policy_grad(pol, s, a, t)
        eps = 1e-6
        fd = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[idx] += eps
            dn[idx] -= eps
            fd[idx] = (math.log(policy_probs(TabularPolicy(up), s, t)[a])
                       - math.log(policy_probs(TabularPolicy(dn), s, t)[a])) / (2 * eps)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)
        assert abs(g[s, :, t].sum()) < 1e-12


class TestFiniteMdp:
    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            FiniteMdp(np.full((2, 1, 2), 0.6), np.zeros((1, 2, 1)))
        with pytest.raises(ValueError):
            FiniteMdp(np.ones((1, 1, 1)), np.array([[[np.inf]]]))

    def test_immutable(self):
        mdp = deterministic_chain()
        with pytest.raises(ValueError):
            mdp.reward[0, 0, 0] = 5.0


class TestSampling:
    def test_deterministic_mdp_and_policy(self):
        mdp = deterministic_chain(3)
        pol = TabularPolicy.uniform(mdp)
        for seed in range(5):
            tr = sample_trajectory(mdp, pol, 0, np.random.default_rng(seed))
            np.testing.assert_array_equal(tr.states, [0, 1, 2, 3])
            np.testing.assert_array_equal(tr.rewards, [1.0, 2.0, 3.0, 4.0])

    def test_same_seed_same_trajectory(self, tiny):
        mdp, pol = tiny
        a = sample_trajectory(mdp, pol, 0, np.random.default_rng(11))
        b = sample_trajectory(mdp, pol, 0, np.random.default_rng(11))
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.actions, b.actions)

    def test_rewards_follow_table(self, tiny):
        mdp, pol = tiny
        tr = sample_trajectory(mdp, pol, 1, np.random.default_rng(3))
        T = mdp.horizon
        assert len(tr) == T + 1
        for t in range(T + 1):
            assert tr.rewards[t] == mdp.reward[T - t, tr.states[t], tr.actions[t]]
            assert tr.log_probs[t] == pytest.approx(math.log(pol.probs_table()[T - t, tr.states[t], tr.actions[t]]))

    def test_cliffworld_always_east(self):
        mdp = build_cliffworld()
        logits = np.zeros((48, 4, 24))
        logits[:, 1, :] = 50.0  # east
        tr = sample_trajectory(mdp, TabularPolicy(logits), 0, np.random.default_rng(0))
        assert tr.rewards[0] == -100.0
        assert tr.states[1] == 1
        np.testing.assert_array_equal(tr.rewards[1:], 0.0)

    def test_batch_matches_consecutive_singles(self, tiny):
        mdp, pol = tiny
        batch = sample_batch(mdp, pol, 0, 5, np.random.default_rng(9))
        rng = np.random.default_rng(9)
        for i in range(5):
            tr = sample_trajectory(mdp, pol, 0, rng)
            np.testing.assert_array_equal(batch.states[i], tr.states)
            np.testing.assert_array_equal(batch.actions[i], tr.actions)

    def test_action_frequencies_chi_square(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((1, 3, 1))
        mdp = FiniteMdp(np.ones((1, 3, 1)), np.zeros((1, 1, 3)))
        pol = TabularPolicy(logits)
        batch = sample_batch(mdp, pol, 0, 100_000, rng)
        counts = np.bincount(batch.actions[:, 0], minlength=3)
        expected = 100_000 * policy_probs(pol, 0, 0)
        assert stats.chisquare(counts, expected).pvalue > 1e-3

    def test_transition_frequencies_chi_square(self):
        rng = np.random.default_rng(1)
        mdp = random_mdp(rng, 3, 1, 1)
        batch = sample_batch(mdp, TabularPolicy.uniform(mdp), 0, 100_000, rng)
        counts = np.bincount(batch.states[:, 1], minlength=3)
        assert stats.chisquare(counts, 100_000 * mdp.transition[0, 0]).pvalue > 1e-3

    def test_never_draws_zero_probability_action(self):
        pol = AliasedBernoulliPolicy(1.0)
        mdp = FiniteMdp(np.tile(np.eye(2)[:, None, :], (1, 2, 1)), np.zeros((2, 2, 2)))
        batch = sample_batch(mdp, pol, 0, 10_000, np.random.default_rng(0))
        assert np.all(batch.actions == 0)


class TestEnumeration:
    def test_deterministic_single_path(self):
        mdp = deterministic_chain(3)
        paths = enumerate_trajectories(mdp, TabularPolicy.uniform(mdp), 0)
        assert paths == [(10.0, 1.0)]

    def test_two_state_half(self, two_state):
        paths = enumerate_trajectories(two_state, AliasedBernoulliPolicy(0.5), 0)
        assert len(paths) == 4
        np.testing.assert_allclose([p for _, p in paths], 0.25)
        assert sorted(r for r, _ in paths) == [-1.25, 0.5, 1.0, 1.25]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(0, 4))
    def test_total_probability(self, seed, S, A, T):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, S, A, T, sparsity=0.3)
        paths = enumerate_trajectories(mdp, random_policy(mdp, rng), 0)
        assert abs(sum(p for _, p in paths) - 1.0) <= 1e-9

    def test_capacity_guard(self, cliffworld):
        with pytest.raises(CapacityError):
            enumerate_trajectories(cliffworld, TabularPolicy.uniform(cliffworld), 0)


class TestSerialization:
    def test_mdp_round_trip(self, tiny):
        mdp, _ = tiny
        back = loads_mdp(dumps_mdp(mdp))
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward, mdp.reward)
        assert back.initial_state == mdp.initial_state

    def test_policy_round_trip(self, tiny):
        _, pol = tiny
        back = policy_from_dict(policy_to_dict(pol))
        np.testing.assert_array_equal(back.logits, pol.logits)
        assert policy_from_dict(policy_to_dict(AliasedBernoulliPolicy(0.3))).p_remain == 0.3

    def test_header_mismatch(self, tiny):
        mdp, _ = tiny
        import json

        doc = json.loads(dumps_mdp(mdp))
        doc["horizon"] = 5
        with pytest.raises(ValueError):
            loads_mdp(json.dumps(doc))
