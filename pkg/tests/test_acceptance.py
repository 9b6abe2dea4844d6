"""
Desk-scale training runs on the toy environments.

Each run is a full training on one CPU core, so the module is long;
run it with ``pytest -m slow``.
"""

import numpy as np
import pandas as pd
import pytest

from main import main
from modules.dataset_io import save_dataset
from modules.evaluator import DecisionMambaPolicy, rollout, rollout_returns
from modules.run_config import build_config
from modules.toy_envs import BehaviorPolicy, gen_dataset, make_env, solve_dp
from modules.trainer import train
from modules.utils import make_rng

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
EVAL_EPISODES = 20


def densechain_dataset():
    env = make_env("densechain", 6, 10)
    return env, gen_dataset(env, BehaviorPolicy("epsilon", 0.3), 1000, make_rng(0, "gen"), seed=0)


def mean_return(env, config, result, target_rtg):
    policy = DecisionMambaPolicy(
        result.params, config, result.state_mean, result.state_std, rtg_scale=config.rtg_scale
    )
    results = rollout(env, policy, config.context_length, target_rtg, EVAL_EPISODES, make_rng(config.seed, "eval"))
    return float(rollout_returns(results).mean())


@pytest.fixture(scope="module")
def densechain_runs():
    env, dataset = densechain_dataset()
    runs = []
    for seed in SEEDS:
        config = build_config({"env": "densechain", "env_n": 6, "horizon": 10, "state_dim": 6, "seed": seed})
        runs.append((config, train(config, dataset, show_progress=False)))
    return env, runs


def test_densechain_reaches_most_of_the_optimum(densechain_runs):
    env, runs = densechain_runs
    optimum = solve_dp(env).optimum
    hits = [mean_return(env, config, result, optimum) >= 0.9 * optimum for config, result in runs]
    assert sum(hits) >= 2


def test_higher_target_gives_no_lower_return(densechain_runs):
    env, runs = densechain_runs
    optimum = solve_dp(env).optimum
    for config, result in runs:
        assert mean_return(env, config, result, optimum) >= mean_return(env, config, result, optimum / 2)


def test_without_channel_mlp():
    env, dataset = densechain_dataset()
    optimum = solve_dp(env).optimum
    hits = []
    for seed in SEEDS:
        config = build_config(
            {"env": "densechain", "env_n": 6, "horizon": 10, "state_dim": 6, "seed": seed, "use_channel_mlp": False}
        )
        hits.append(mean_return(env, config, train(config, dataset, show_progress=False), optimum) >= 0.85 * optimum)
    assert sum(hits) >= 2


def test_delayed_catch_training_converges():
    env = make_env("delayedcatch", 6, 12)
    dataset = gen_dataset(env, BehaviorPolicy("epsilon", 0.3), 500, make_rng(0, "gen"), seed=0)
    for seed in SEEDS:
        config = build_config(
            {"env": "delayedcatch", "env_n": 6, "horizon": 12, "state_dim": 6, "seed": seed,
             "context_length": 12, "total_updates": 800, "warmup_steps": 80}
        )
        losses = train(config, dataset, show_progress=False).losses
        quarter = len(losses) // 4
        assert losses[-quarter:].mean() < losses[:quarter].mean()


def test_context_length_sweep_completes(tmp_path):
    env = make_env("delayedcatch", 6, 12)
    dataset = gen_dataset(env, BehaviorPolicy("epsilon", 0.3), 200, make_rng(0, "gen"), seed=0)
    path = str(tmp_path / "catch.jsonl")
    save_dataset(path, dataset)
    out = tmp_path / "sweep"
    code = main(["sweep", "--dataset", path, "--key", "context_length", "--values", "4", "8", "12",
                 "--set", "total_updates=100", "--set", "warmup_steps=10", "--set", "eval_episodes=5",
                 "--out", str(out), "--no-progress"])
    assert code == 0
    summary = pd.read_csv(out / "sweep_summary.csv")
    assert list(summary["value"]) == [4, 8, 12]
    assert np.all(np.isfinite(summary["mean_return"]))
