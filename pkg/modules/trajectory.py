"""
Offline trajectory records, returns-to-go and padded training windows.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import numpy as np

from modules.errors import DatasetError


@dataclass(frozen=True)
class ActionSpace:
    kind: Literal["discrete", "continuous"]
    size: int  # action count or vector size

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    def to_json(self) -> Dict:
        return {"kind": self.kind, "size": self.size}

    @classmethod
    def from_json(cls, data) -> "ActionSpace":
        try:
            return cls(kind=data["kind"], size=int(data["size"]))
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"malformed action_space entry {data!r}") from exc


@dataclass
class Trajectory:
    observations: np.ndarray  # [T or T+1, state_dim]
    actions: np.ndarray  # [T] ints or [T, action_dim]
    rewards: np.ndarray  # [T]

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.actions = np.asarray(self.actions)
        if self.observations.ndim == 1:
            self.observations = self.observations.reshape(-1, 1)
        if len(self.actions) != len(self.rewards):
            raise DatasetError(
                f"trajectory has {len(self.actions)} actions but {len(self.rewards)} rewards"
            )
        if len(self.observations) < len(self.actions):
            raise DatasetError(
                f"trajectory has {len(self.observations)} observations for {len(self.actions)} actions"
            )

    def __len__(self):
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


@dataclass
class Batch:
    rtg: np.ndarray  # [B, K, 1]
    states: np.ndarray  # [B, K, S]
    actions: np.ndarray  # [B, K] ints or [B, K, A]
    timesteps: np.ndarray  # [B, K] ints
    mask: np.ndarray  # [B, K], 0 on left padding

    @property
    def batch_size(self) -> int:
        return self.timesteps.shape[0]

    @property
    def length(self) -> int:
        return self.timesteps.shape[1]


@dataclass
class OfflineDataset:
    trajectories: List[Trajectory]
    state_dim: int
    action_space: ActionSpace
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self._rtg = [compute_rtg(t.rewards) for t in self.trajectories]

    def __len__(self):
        return len(self.trajectories)

    def returns_to_go(self, index: int) -> np.ndarray:
        return self._rtg[index]

    def returns(self) -> np.ndarray:
        return np.array([t.total_return for t in self.trajectories])

    def state_stats(self):
        """Mean and std of all states; std is floored to keep division finite."""
        if not self.trajectories:
            raise DatasetError("cannot compute state statistics of an empty dataset")
        states = np.concatenate([t.observations[: len(t)] for t in self.trajectories])
        return states.mean(axis=0), np.maximum(states.std(axis=0), 1e-6)


def compute_rtg(rewards) -> np.ndarray:
    """Suffix sums: rtg[i] = sum of rewards[i:]."""
    rewards = np.asarray(rewards, dtype=np.float64)
    return np.cumsum(rewards[::-1])[::-1].copy()


def make_batch(
    dataset: OfflineDataset,
    context_length: int,
    batch_size: int,
    rng,
    state_mean: Optional[np.ndarray] = None,
    state_std: Optional[np.ndarray] = None,
    rtg_scale: float = 1.0,
) -> Batch:
    """Sample K-step windows, trajectories weighted by length, left-padded with zeros."""
    if len(dataset) == 0:
        raise DatasetError("cannot sample a batch from an empty dataset")
    lengths = np.array([len(t) for t in dataset.trajectories], dtype=np.float64)
    if lengths.sum() == 0:
        raise DatasetError("every trajectory in the dataset is empty")

    k = context_length
    discrete = dataset.action_space.discrete
    rtg = np.zeros((batch_size, k, 1))
    states = np.zeros((batch_size, k, dataset.state_dim))
    if discrete:
        actions = np.zeros((batch_size, k), dtype=np.int64)
    else:
        actions = np.zeros((batch_size, k, dataset.action_space.size))
    timesteps = np.zeros((batch_size, k), dtype=np.int64)
    mask = np.zeros((batch_size, k))

    picks = rng.choice(len(dataset), size=batch_size, p=lengths / lengths.sum())
    for row, index in enumerate(picks):
        trajectory = dataset.trajectories[index]
        length = len(trajectory)
        start = int(rng.integers(0, max(length - k, 0) + 1))
        stop = min(start + k, length)
        n = stop - start
        pad = k - n

        window_states = trajectory.observations[start:stop]
        if state_mean is not None:
            window_states = (window_states - state_mean) / state_std
        states[row, pad:] = window_states
        actions[row, pad:] = trajectory.actions[start:stop]
        rtg[row, pad:, 0] = dataset.returns_to_go(index)[start:stop] / rtg_scale
        timesteps[row, pad:] = np.arange(start, stop)
        mask[row, pad:] = 1.0
    return Batch(rtg=rtg, states=states, actions=actions, timesteps=timesteps, mask=mask)
