"""
Training loop: masked action loss, AdamW with global-norm clipping, and the
linear-warmup / warmup-cosine learning rate schedules.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.progress import BarColumn, Progress, TextColumn, TimeRemainingColumn

from config import COSINE_FLOOR
from modules import tensor as T
from modules.errors import DatasetError, TrainingError
from modules.mamba_net import DecisionMambaParams, forward, init_params, named_parameters
from modules.run_config import TrainConfig
from modules.tensor import Tape, Tensor
from modules.trajectory import Batch, OfflineDataset, make_batch
from modules.utils import make_rng

logger = logging.getLogger(__name__)

LossKind = Literal["mse", "ce"]
METRIC_COLUMNS = ["step", "loss", "grad_norm", "lr"]


def action_loss(pred, target, mask, kind: LossKind) -> Tensor:
    """Per-step loss averaged over the steps where ``mask`` is 1.

    mse: pred [B, K, A] against real targets [B, K, A], mean over A per step.
    ce:  logits [B, K, A] against integer targets [B, K].
    """
    pred = T.as_tensor(pred)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape[:2] != mask.shape:
        raise TrainingError(f"prediction {pred.shape} and mask {mask.shape} disagree")
    weight = mask.sum()
    if weight == 0:
        raise TrainingError("every step of the batch is masked; nothing to learn from")

    if kind == "mse":
        target = np.asarray(target, dtype=np.float64)
        if target.shape != pred.shape:
            raise TrainingError(f"continuous targets {target.shape} do not match predictions {pred.shape}")
        diff = pred - Tensor(target, copy=False)
        per_step = T.mean(diff * diff, axes=-1)
    elif kind == "ce":
        target = np.asarray(target, dtype=np.int64)
        classes = pred.shape[-1]
        if target.shape != mask.shape:
            raise TrainingError(f"discrete targets {target.shape} do not match the mask {mask.shape}")
        if target.size and (target.min() < 0 or target.max() >= classes):
            raise TrainingError(f"action ids must lie in [0, {classes}), got {target.min()}..{target.max()}")
        one_hot = np.eye(classes)[target]
        per_step = -T.sum(T.log_softmax(pred, axis=-1) * Tensor(one_hot, copy=False), axes=-1)
    else:
        raise TrainingError(f"unknown loss kind '{kind}'")
    return T.sum(per_step * Tensor(mask, copy=False)) / weight


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamWState:
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0


@dataclass
class StepStats:
    grad_norm: float
    lr: float


def learning_rate_at(step: int, config: TrainConfig) -> float:
    """Learning rate of update ``step`` (1-based)."""
    base = config.learning_rate
    warmup = config.warmup_steps
    lr = base * min(1.0, step / warmup) if warmup > 0 else base
    if config.lr_decay == "warmup_cosine" and step > warmup:
        span = max(1, config.total_updates - warmup)
        progress = min(1.0, (step - warmup) / span)
        lr = base * (COSINE_FLOOR + (1.0 - COSINE_FLOOR) * 0.5 * (1.0 + math.cos(math.pi * progress)))
    return lr


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale every gradient by max_norm / norm when the global norm exceeds max_norm."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise TrainingError(f"gradient norm is {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


def decays(name: str, tensor: Tensor) -> bool:
    """Weight decay touches 2-D projection weights only."""
    return name.endswith(".weight") and tensor.ndim == 2


def optimizer_step(
    named_params: Sequence[Tuple[str, Tensor]],
    grads: Dict[str, np.ndarray],
    state: AdamWState,
    config: TrainConfig,
    step_index: int,
) -> StepStats:
    """Clip, then apply one decoupled-weight-decay Adam update in place."""
    grads, norm = clip_grad_norm(grads, config.grad_clip)
    lr = learning_rate_at(step_index, config)
    beta1, beta2 = config.betas
    state.steps += 1
    correction1 = 1.0 - beta1**state.steps
    correction2 = 1.0 - beta2**state.steps

    for name, param in named_params:
        g = grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v

        data = param.data
        if config.weight_decay and decays(name, param):
            data = data * (1.0 - lr * config.weight_decay)
        param.data = data - lr * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
    return StepStats(grad_norm=norm, lr=lr)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: DecisionMambaParams
    metrics: pd.DataFrame
    losses: np.ndarray  # loss of every update
    state_mean: Optional[np.ndarray] = None
    state_std: Optional[np.ndarray] = None


def uses_state_norm(config: TrainConfig) -> bool:
    if config.normalize_states is not None:
        return config.normalize_states
    return not config.discrete


def check_compatible(config: TrainConfig, dataset: OfflineDataset):
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    if dataset.state_dim != config.state_dim:
        raise DatasetError(f"dataset states have {dataset.state_dim} entries, config says {config.state_dim}")
    space = dataset.action_space
    if space.kind != config.action_space or space.size != config.action_dim:
        raise DatasetError(
            f"dataset actions are {space.kind}[{space.size}], "
            f"config says {config.action_space}[{config.action_dim}]"
        )


def batch_loss(params, config: TrainConfig, batch: Batch, mode="train", rng=None) -> Tensor:
    pred = forward(batch, params, config, mode, rng)
    return action_loss(pred, batch.actions, batch.mask, "ce" if config.discrete else "mse")


def train(
    config: TrainConfig,
    dataset: OfflineDataset,
    params: Optional[DecisionMambaParams] = None,
    show_progress: bool = True,
) -> TrainResult:
    """Run ``total_updates`` optimization steps; fully determined by ``config.seed``."""
    check_compatible(config, dataset)
    data_rng = make_rng(config.seed, "data")
    dropout_rng = make_rng(config.seed, "dropout")
    if params is None:
        params = init_params(config, make_rng(config.seed, "init"))
    named = named_parameters(params)

    state_mean = state_std = None
    if uses_state_norm(config):
        state_mean, state_std = dataset.state_stats()

    state = AdamWState()
    losses = np.zeros(config.total_updates)
    rows: List[dict] = []
    logger.info(
        "training %d updates on %d trajectories (%s actions)",
        config.total_updates,
        len(dataset),
        config.action_space,
    )

    with Progress(
        TextColumn("[cyan]{task.description}"),
        BarColumn(),
        TextColumn("loss {task.fields[loss]:.4f}"),
        TimeRemainingColumn(),
        disable=not show_progress,
        transient=True,
    ) as progress:
        task = progress.add_task("Training", total=config.total_updates, loss=float("nan"))
        for step in range(1, config.total_updates + 1):
            batch = make_batch(
                dataset,
                config.context_length,
                config.batch_size,
                data_rng,
                state_mean,
                state_std,
                config.rtg_scale,
            )
            for _, p in named:
                p.zero_grad()
            with Tape() as tape:
                loss = batch_loss(params, config, batch, "train", dropout_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"loss became {value} at update {step}")
            tape.backward(loss)
            grads = {name: p.grad if p.grad is not None else np.zeros_like(p.data) for name, p in named}
            stats = optimizer_step(named, grads, state, config, step)
            losses[step - 1] = value

            if step == 1 or step % config.log_every == 0 or step == config.total_updates:
                rows.append({"step": step, "loss": value, "grad_norm": stats.grad_norm, "lr": stats.lr})
                logger.info("step %d loss %.6f grad_norm %.4f lr %.3e", step, value, stats.grad_norm, stats.lr)
            progress.update(task, advance=1, loss=value)

    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    return TrainResult(params=params, metrics=metrics, losses=losses, state_mean=state_mean, state_std=state_std)
