"""
JSON-Lines dataset files.

Line 1 is a metadata object (env, env_params, state_dim, action_space,
generator, seed); every following line is one trajectory:
{"observations": [[...], ...], "actions": [...], "rewards": [...]}.
"""

import json
import logging
import os

import numpy as np

from modules.errors import DatasetError
from modules.trajectory import ActionSpace, OfflineDataset, Trajectory

logger = logging.getLogger(__name__)

REQUIRED_METADATA = ("env", "state_dim", "action_space", "generator", "seed")


def trajectory_to_line(trajectory: Trajectory) -> str:
    record = {
        "observations": trajectory.observations.tolist(),
        "actions": trajectory.actions.tolist(),
        "rewards": trajectory.rewards.tolist(),
    }
    return json.dumps(record)


def save_dataset(path: str, dataset: OfflineDataset) -> str:
    """Write metadata plus one line per trajectory; output is byte-stable."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    metadata = dict(dataset.metadata)
    metadata["state_dim"] = dataset.state_dim
    metadata["action_space"] = dataset.action_space.to_json()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(metadata, sort_keys=True) + "\n")
        for trajectory in dataset.trajectories:
            f.write(trajectory_to_line(trajectory) + "\n")
    logger.info("wrote %d trajectories to %s", len(dataset), path)
    return path


def _parse_trajectory(record, line_number: int, action_space: ActionSpace) -> Trajectory:
    try:
        observations = record["observations"]
        actions = record["actions"]
        rewards = record["rewards"]
    except (KeyError, TypeError):
        raise DatasetError(f"line {line_number}: trajectory needs observations, actions and rewards") from None
    if action_space.discrete:
        actions = np.asarray(actions, dtype=np.int64)
    else:
        actions = np.asarray(actions, dtype=np.float64).reshape(len(actions), action_space.size)
    return Trajectory(observations=observations, actions=actions, rewards=rewards)


def load_dataset(path: str) -> OfflineDataset:
    """Parse a dataset file, validating metadata and every trajectory line."""
    if not os.path.exists(path):
        raise DatasetError(f"dataset not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise DatasetError(f"dataset {path} has no metadata line")
    try:
        metadata = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"dataset {path}: metadata line is not JSON ({exc})") from None
    missing = [key for key in REQUIRED_METADATA if key not in metadata]
    if missing:
        raise DatasetError(f"dataset {path}: metadata lacks {', '.join(missing)}")

    action_space = ActionSpace.from_json(metadata["action_space"])
    trajectories = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"dataset {path}, line {number}: {exc}") from None
        trajectories.append(_parse_trajectory(record, number, action_space))

    state_dim = int(metadata["state_dim"])
    for number, trajectory in enumerate(trajectories, start=2):
        if len(trajectory) and trajectory.observations.shape[1] != state_dim:
            raise DatasetError(
                f"dataset {path}, line {number}: states have {trajectory.observations.shape[1]} "
                f"entries, metadata says {state_dim}"
            )
    logger.info("loaded %d trajectories from %s", len(trajectories), path)
    return OfflineDataset(trajectories, state_dim, action_space, metadata)
