"""
Shared fixtures for the test suite.
"""

import numpy as np
import pytest

from modules.run_config import DecisionMambaConfig, RunConfig


@pytest.fixture
def rng():
    """Fresh generator with a fixed seed."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest network that still exercises every component."""
    return DecisionMambaConfig(
        n_layers=1,
        embed_dim=8,
        ssm_state=4,
        expand=2,
        conv_kernel=3,
        context_length=3,
        dropout_p=0.0,
        max_timestep=20,
        state_dim=3,
        action_space="discrete",
        action_dim=2,
    )


@pytest.fixture
def quick_run_config():
    """Short densechain training run, seconds on a CPU."""
    return RunConfig(
        n_layers=1,
        embed_dim=16,
        ssm_state=4,
        context_length=4,
        batch_size=8,
        total_updates=6,
        warmup_steps=2,
        eval_episodes=2,
        log_every=2,
        env="densechain",
        env_n=4,
        horizon=5,
        state_dim=4,
        max_timestep=20,
    )
