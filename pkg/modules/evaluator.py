"""
Return-conditioned rollouts and score normalization.

At every step the most recent <= K steps of (return-to-go, state, action) are
fed to the policy with the current action slot zeroed; after the environment
answers, the reward is subtracted from the return-to-go.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np

from modules.errors import DMambaError
from modules.mamba_net import DecisionMambaParams, forward
from modules.run_config import DecisionMambaConfig
from modules.toy_envs import ToyEnv
from modules.trajectory import Batch

logger = logging.getLogger(__name__)


@dataclass
class Window:
    """Model input for one decision: the last <= K steps, oldest first."""

    rtg: np.ndarray  # [n]
    states: np.ndarray  # [n, S]
    actions: list  # n entries, last one is the zeroed current slot
    timesteps: np.ndarray  # [n]


class Policy(Protocol):
    def act(self, window: Window, env: ToyEnv, rng): ...


@dataclass
class DecisionMambaPolicy:
    params: DecisionMambaParams
    config: DecisionMambaConfig
    state_mean: Optional[np.ndarray] = None
    state_std: Optional[np.ndarray] = None
    rtg_scale: float = 1.0
    temperature: float = 0.0  # 0 takes the argmax of the logits

    def to_batch(self, window: Window) -> Batch:
        states = np.asarray(window.states, dtype=np.float64)
        if self.state_mean is not None:
            states = (states - self.state_mean) / self.state_std
        n = len(window.timesteps)
        if self.config.discrete:
            actions = np.asarray(window.actions, dtype=np.int64).reshape(1, n)
        else:
            actions = np.asarray(window.actions, dtype=np.float64).reshape(1, n, self.config.action_dim)
        return Batch(
            rtg=(np.asarray(window.rtg, dtype=np.float64) / self.rtg_scale).reshape(1, n, 1),
            states=states.reshape(1, n, -1),
            actions=actions,
            timesteps=np.asarray(window.timesteps, dtype=np.int64).reshape(1, n),
            mask=np.ones((1, n)),
        )

    def act(self, window: Window, env: ToyEnv, rng):
        out = forward(self.to_batch(window), self.params, self.config, "eval").data[0, -1]
        if not self.config.discrete:
            return out
        if self.temperature <= 0.0:
            return int(np.argmax(out))
        logits = out / self.temperature
        probs = np.exp(logits - logits.max())
        return int(rng.choice(len(probs), p=probs / probs.sum()))


@dataclass
class EpisodeResult:
    episode_return: float
    steps: int
    rtg_trace: List[float] = field(default_factory=list)  # rtg fed at each step
    model_lengths: List[int] = field(default_factory=list)  # window length fed at each step


def _zero_action(env: ToyEnv):
    space = env.action_space
    return 0 if space.discrete else np.zeros(space.size)


def run_episode(env: ToyEnv, policy: Policy, context_length: int, target_rtg: float, rng) -> EpisodeResult:
    rtgs, states, actions, timesteps = [], [], [], []
    state = env.reset(rng)
    rtg = float(target_rtg)
    result = EpisodeResult(episode_return=0.0, steps=0)
    for t in range(env.horizon):
        rtgs.append(rtg)
        states.append(state)
        actions.append(_zero_action(env))
        timesteps.append(t)
        start = max(0, len(timesteps) - context_length)
        window = Window(
            rtg=np.array(rtgs[start:]),
            states=np.array(states[start:]),
            actions=actions[start:],
            timesteps=np.array(timesteps[start:]),
        )
        action = policy.act(window, env, rng)
        actions[-1] = action
        result.rtg_trace.append(rtg)
        result.model_lengths.append(len(window.timesteps))

        state, reward, done = env.step(action)
        result.episode_return += reward
        result.steps += 1
        rtg -= reward
        if done:
            break
    return result


def rollout(
    env: ToyEnv,
    policy: Policy,
    context_length: int,
    target_rtg: float,
    episodes: int,
    rng,
    workers: int = 1,
) -> List[EpisodeResult]:
    """Evaluate ``episodes`` episodes; results do not depend on ``workers``.

    Each episode gets its own environment copy and its own generator seeded
    from ``rng`` up front.
    """
    seeds = rng.integers(0, 2**63 - 1, size=int(episodes))

    def one(seed):
        return run_episode(copy.deepcopy(env), policy, context_length, target_rtg, np.random.default_rng(seed))

    if workers <= 1 or episodes <= 1:
        return [one(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))


def rollout_returns(results: List[EpisodeResult]) -> np.ndarray:
    return np.array([r.episode_return for r in results])


def normalized_score(raw: float, random: float, expert: float) -> float:
    """100 * (raw - random) / (expert - random), not clamped."""
    if expert == random:
        raise DMambaError(f"expert and random baselines are both {random}; the score is undefined")
    return 100.0 * (raw - random) / (expert - random)


@dataclass
class EvalSummary:
    mean: float
    std: float
    episodes: int
    target_rtg: float
    normalized: Optional[float] = None


def summarize(returns, target_rtg: float, random: Optional[float] = None, expert: Optional[float] = None) -> EvalSummary:
    returns = np.asarray(returns, dtype=np.float64)
    mean = float(returns.mean()) if returns.size else float("nan")
    summary = EvalSummary(
        mean=mean,
        std=float(returns.std()) if returns.size else float("nan"),
        episodes=int(returns.size),
        target_rtg=float(target_rtg),
    )
    if random is not None and expert is not None:
        summary.normalized = normalized_score(mean, random, expert)
    logger.info("eval over %d episodes: %.4f +/- %.4f", summary.episodes, summary.mean, summary.std)
    return summary
