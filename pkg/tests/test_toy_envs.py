"""
Tests for the toy environments and their oracles
"""

import numpy as np
import pytest

from modules.errors import EnvError
from modules.toy_envs import (
    LEFT,
    RIGHT,
    BehaviorPolicy,
    DelayedCatch,
    DenseChain,
    Point1D,
    expert_baseline,
    gen_dataset,
    make_env,
    parse_policy,
    random_baseline,
    solve_dp,
)


def exact_random_return(env):
    """Expected return of the uniform policy by propagating the position distribution."""
    dist = np.zeros(env.n)
    dist[0] = 1.0
    total = 0.0
    for t in range(env.horizon):
        new = np.zeros(env.n)
        for s in range(env.n):
            for a in (LEFT, RIGHT):
                nxt = env.move(s, a)
                total += 0.5 * dist[s] * env.reward(s, a, nxt, t)
                new[nxt] += 0.5 * dist[s]
        dist = new
    return total


class TestDynamics:
    def test_dense_chain_rewards(self, rng):
        env = DenseChain(3, 6)
        env.reset(rng)
        assert env.step(LEFT)[1] == 0.0
        assert env.step(RIGHT)[1] == 0.1
        assert env.step(RIGHT)[1] == 0.1
        state, reward, done = env.step(RIGHT)
        assert reward == 1.0
        np.testing.assert_array_equal(state, [0.0, 0.0, 1.0])
        assert not done

    def test_episode_ends_at_horizon(self, rng):
        env = DenseChain(4, 3)
        env.reset(rng)
        dones = [env.step(RIGHT)[2] for _ in range(3)]
        assert dones == [False, False, True]

    def test_step_after_done_fails(self, rng):
        env = DenseChain(4, 1)
        env.reset(rng)
        env.step(RIGHT)
        with pytest.raises(EnvError):
            env.step(RIGHT)

    def test_step_before_reset_fails(self):
        with pytest.raises(EnvError):
            DenseChain(4, 2).step(RIGHT)

    def test_delayed_catch_pays_once(self, rng):
        env = DelayedCatch(5, 6)
        env.reset(rng)
        rewards = [env.step(RIGHT)[1] for _ in range(6)]
        assert rewards == [0.0] * 5 + [1.0]

    def test_point1d_zero_action(self):
        env = Point1D(10, start=0.0)
        env.reset()
        total = sum(env.step(np.array([0.0]))[1] for _ in range(10))
        assert total == 0.0

    def test_point1d_clips(self):
        env = Point1D(2, start=0.95)
        env.reset()
        state, reward, _ = env.step(np.array([5.0]))
        assert state[0] == 1.0
        assert reward == -1.0

    @pytest.mark.parametrize(
        "name, n, horizon",
        [("densechain", 1, 5), ("delayedcatch", 4, 0), ("gridworld", 4, 4)],
    )
    def test_invalid_parameters(self, name, n, horizon):
        with pytest.raises(EnvError):
            make_env(name, n, horizon)

    def test_bad_action(self, rng):
        env = DenseChain(3, 2)
        env.reset(rng)
        with pytest.raises(EnvError):
            env.step(2)


class TestOracles:
    def test_dense_chain_optimum(self):
        solution = solve_dp(DenseChain(6, 10))
        assert solution.optimum == pytest.approx(5.5)

    def test_delayed_catch_optimum(self):
        assert solve_dp(DelayedCatch(6, 12)).optimum == pytest.approx(1.0)

    def test_optimal_dataset_hits_optimum(self, rng):
        env = DenseChain(6, 10)
        dataset = gen_dataset(env, BehaviorPolicy("optimal"), 10, rng)
        assert len(dataset) == 10
        np.testing.assert_allclose(dataset.returns(), 5.5)

    def test_random_dataset_matches_baseline(self, rng):
        env = DenseChain(6, 10)
        dataset = gen_dataset(env, BehaviorPolicy("random"), 4000, rng)
        assert dataset.returns().mean() == pytest.approx(exact_random_return(env), abs=0.03)

    def test_random_baseline_monte_carlo(self):
        env = DelayedCatch(6, 12)
        estimate = random_baseline(env, 20000, np.random.default_rng(5))
        assert estimate == pytest.approx(exact_random_return(env), abs=0.01)

    def test_expert_baseline_chain_is_dp(self, rng):
        assert expert_baseline(DenseChain(6, 10), rng) == pytest.approx(5.5)

    def test_point1d_oracle_beats_random(self, rng):
        env = make_env("point1d", horizon=10)
        assert expert_baseline(env, rng) > random_baseline(env, 500, rng)

    def test_zero_episodes(self, rng):
        assert len(gen_dataset(make_env("densechain"), BehaviorPolicy("random"), 0, rng)) == 0

    def test_episode_lengths_equal_horizon(self, rng):
        dataset = gen_dataset(DenseChain(4, 7), BehaviorPolicy("epsilon", 0.3), 5, rng)
        assert all(len(t) == 7 for t in dataset.trajectories)
        assert all(t.observations.shape == (8, 4) for t in dataset.trajectories)


class TestPolicyParsing:
    @pytest.mark.parametrize(
        "text, kind, epsilon",
        [("optimal", "optimal", 0.0), ("random", "random", 0.0), ("epsilon(0.3)", "epsilon", 0.3),
         ("epsilon:0.25", "epsilon", 0.25)],
    )
    def test_valid(self, text, kind, epsilon):
        policy = parse_policy(text)
        assert policy.kind == kind
        assert policy.epsilon == pytest.approx(epsilon)

    @pytest.mark.parametrize("text", ["greedy", "epsilon(1.5)", "epsilon()"])
    def test_invalid(self, text):
        with pytest.raises(EnvError):
            parse_policy(text)

    def test_label(self):
        assert parse_policy("epsilon(0.3)").label == "epsilon(0.3)"
