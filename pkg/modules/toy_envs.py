"""
Toy environments with brute-force oracles.

densechain    walk along n cells; moving right pays 0.1, pushing right at the
              right edge pays 1.0.
delayedcatch  same walk, a single reward at the last step equal to the final
              position / (n - 1).
point1d       x in [-1, 1], action in [-1, 1], x <- clip(x + 0.1 a), reward -x^2.
"""

import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from modules.errors import EnvError
from modules.trajectory import ActionSpace, OfflineDataset, Trajectory

LEFT, RIGHT = 0, 1
POINT_GAIN = 0.1


class ToyEnv(ABC):
    name = "toy"

    def __init__(self, horizon: int):
        if int(horizon) < 1:
            raise EnvError(f"{self.name}: horizon must be >= 1, got {horizon}")
        self.horizon = int(horizon)
        self.t = 0
        self.done = True

    @property
    @abstractmethod
    def state_dim(self) -> int: ...

    @property
    @abstractmethod
    def action_space(self) -> ActionSpace: ...

    @abstractmethod
    def env_params(self) -> dict: ...

    @abstractmethod
    def reset(self, rng) -> np.ndarray: ...

    @abstractmethod
    def _advance(self, action):
        """Apply one action; returns (state, reward)."""

    @abstractmethod
    def sample_action(self, rng): ...

    def step(self, action):
        if self.done:
            raise EnvError(f"{self.name}: step() called on a finished episode; call reset() first")
        state, reward = self._advance(action)
        self.t += 1
        self.done = self.t >= self.horizon
        return state, float(reward), self.done


class ChainEnv(ToyEnv):
    """Deterministic walk over cells 0..n-1 starting at cell 0."""

    num_actions = 2

    def __init__(self, n: int, horizon: int):
        if int(n) < 2:
            raise EnvError(f"{self.name}: n must be >= 2, got {n}")
        super().__init__(horizon)
        self.n = int(n)
        self.position = 0

    @property
    def state_dim(self) -> int:
        return self.n

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace("discrete", self.num_actions)

    @property
    def num_states(self) -> int:
        return self.n

    def env_params(self) -> dict:
        return {"n": self.n, "horizon": self.horizon}

    def observe(self, position: int) -> np.ndarray:
        state = np.zeros(self.n)
        state[position] = 1.0
        return state

    def move(self, position: int, action: int) -> int:
        return min(position + 1, self.n - 1) if action == RIGHT else max(position - 1, 0)

    @abstractmethod
    def reward(self, position: int, action: int, next_position: int, t: int) -> float: ...

    def reset(self, rng=None) -> np.ndarray:
        self.position = 0
        self.t = 0
        self.done = False
        return self.observe(self.position)

    def sample_action(self, rng):
        return int(rng.integers(self.num_actions))

    def _advance(self, action):
        action = int(action)
        if action not in (LEFT, RIGHT):
            raise EnvError(f"{self.name}: action must be 0 (left) or 1 (right), got {action}")
        next_position = self.move(self.position, action)
        reward = self.reward(self.position, action, next_position, self.t)
        self.position = next_position
        return self.observe(next_position), reward


class DenseChain(ChainEnv):
    name = "densechain"

    def reward(self, position, action, next_position, t):
        if action != RIGHT:
            return 0.0
        return 1.0 if position == self.n - 1 else 0.1


class DelayedCatch(ChainEnv):
    name = "delayedcatch"

    def reward(self, position, action, next_position, t):
        return next_position / (self.n - 1) if t == self.horizon - 1 else 0.0


class Point1D(ToyEnv):
    name = "point1d"

    def __init__(self, horizon: int, start: Optional[float] = None):
        super().__init__(horizon)
        self.start = start
        self.x = 0.0

    @property
    def state_dim(self) -> int:
        return 1

    @property
    def action_space(self) -> ActionSpace:
        return ActionSpace("continuous", 1)

    def env_params(self) -> dict:
        return {"horizon": self.horizon}

    def reset(self, rng=None) -> np.ndarray:
        if self.start is not None:
            self.x = float(self.start)
        else:
            if rng is None:
                raise EnvError("point1d: reset needs an rng when no start is fixed")
            self.x = float(rng.uniform(-1.0, 1.0))
        self.t = 0
        self.done = False
        return np.array([self.x])

    def sample_action(self, rng):
        return np.array([rng.uniform(-1.0, 1.0)])

    def _advance(self, action):
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        self.x = float(np.clip(self.x + POINT_GAIN * a, -1.0, 1.0))
        return np.array([self.x]), -self.x * self.x


ENVS = {"densechain": DenseChain, "delayedcatch": DelayedCatch, "point1d": Point1D}


def make_env(name: str, n: int = 6, horizon: int = 10) -> ToyEnv:
    if name not in ENVS:
        raise EnvError(f"unknown environment '{name}' (choose from {', '.join(ENVS)})")
    if name == "point1d":
        return Point1D(horizon)
    return ENVS[name](n, horizon)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


@dataclass
class DpSolution:
    values: np.ndarray  # [H + 1, n], value of being at cell s before step t
    policy: np.ndarray  # [H, n], best action; ties go to RIGHT
    optimum: float


def solve_dp(env: ChainEnv) -> DpSolution:
    """Exhaustive dynamic programming over (cell, step)."""
    if not isinstance(env, ChainEnv):
        raise EnvError(f"{env.name}: dynamic programming needs a discrete chain environment")
    values = np.zeros((env.horizon + 1, env.num_states))
    policy = np.zeros((env.horizon, env.num_states), dtype=np.int64)
    for t in range(env.horizon - 1, -1, -1):
        for s in range(env.num_states):
            q = np.array(
                [
                    env.reward(s, a, env.move(s, a), t) + values[t + 1, env.move(s, a)]
                    for a in range(env.num_actions)
                ]
            )
            best = env.num_actions - 1 - int(np.argmax(q[::-1]))
            policy[t, s] = best
            values[t, s] = q[best]
    return DpSolution(values=values, policy=policy, optimum=float(values[0, 0]))


class OraclePolicy:
    """Optimal controller: DP table for chains, proportional drive for point1d."""

    def __init__(self, env: ToyEnv):
        self.env = env
        self.solution = solve_dp(env) if isinstance(env, ChainEnv) else None

    def __call__(self, env: ToyEnv, rng):
        if self.solution is not None:
            return int(self.solution.policy[env.t, env.position])
        return np.array([np.clip(-env.x / POINT_GAIN, -1.0, 1.0)])


@dataclass(frozen=True)
class BehaviorPolicy:
    kind: str  # optimal | random | epsilon
    epsilon: float = 0.0

    @property
    def label(self) -> str:
        return f"epsilon({self.epsilon:g})" if self.kind == "epsilon" else self.kind

    def bind(self, env: ToyEnv) -> Callable:
        oracle = OraclePolicy(env) if self.kind != "random" else None

        def act(env, rng):
            if self.kind == "random":
                return env.sample_action(rng)
            if self.kind == "epsilon" and rng.random() < self.epsilon:
                return env.sample_action(rng)
            return oracle(env, rng)

        return act


_EPSILON = re.compile(r"^epsilon[(:]?\s*([0-9.eE+-]+)\s*\)?$")


def parse_policy(text: str) -> BehaviorPolicy:
    """optimal | random | epsilon(p) (also epsilon:p)."""
    text = text.strip().lower()
    if text in ("optimal", "random"):
        return BehaviorPolicy(text)
    match = _EPSILON.match(text)
    if match:
        try:
            epsilon = float(match.group(1))
        except ValueError:
            epsilon = -1.0
        if 0.0 <= epsilon <= 1.0:
            return BehaviorPolicy("epsilon", epsilon)
    raise EnvError(f"unknown behaviour policy '{text}' (use optimal, random or epsilon(p))")


def run_episode(env: ToyEnv, act: Callable, rng) -> Trajectory:
    observations, actions, rewards = [], [], []
    state = env.reset(rng)
    done = False
    while not done:
        action = act(env, rng)
        observations.append(state)
        actions.append(action)
        state, reward, done = env.step(action)
        rewards.append(reward)
    observations.append(state)
    return Trajectory(np.array(observations), np.array(actions), np.array(rewards))


def gen_dataset(env: ToyEnv, policy: BehaviorPolicy, episodes: int, rng, seed=None) -> OfflineDataset:
    """Roll out a behaviour policy and record every episode."""
    act = policy.bind(env)
    trajectories = [run_episode(env, act, rng) for _ in range(int(episodes))]
    metadata = {
        "env": env.name,
        "env_params": env.env_params(),
        "generator": policy.label,
        "seed": seed,
    }
    return OfflineDataset(trajectories, env.state_dim, env.action_space, metadata)


def estimate_return(env: ToyEnv, policy: BehaviorPolicy, episodes: int, rng) -> float:
    act = policy.bind(env)
    return float(np.mean([run_episode(env, act, rng).total_return for _ in range(int(episodes))]))


def random_baseline(env: ToyEnv, episodes: int, rng) -> float:
    """Monte Carlo mean return of the uniform random policy."""
    return estimate_return(env, BehaviorPolicy("random"), episodes, rng)


def expert_baseline(env: ToyEnv, rng, episodes: int = 100) -> float:
    """DP optimum for chains; mean oracle return for point1d."""
    if isinstance(env, ChainEnv):
        return solve_dp(env).optimum
    return estimate_return(env, BehaviorPolicy("optimal"), episodes, rng)


def env_from_metadata(metadata: dict) -> ToyEnv:
    params = metadata.get("env_params") or {}
    return make_env(
        metadata["env"], n=int(params.get("n", 6)), horizon=int(params.get("horizon", 10))
    )
