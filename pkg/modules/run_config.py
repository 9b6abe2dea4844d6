"""
Run configuration models and loading.

Keys are flat. Precedence, lowest first: defaults from config.py, preset,
JSON config file, CLI overrides. Unknown keys are rejected and every
offending key is reported at once.
"""

import json
import os
from typing import Any, Dict, Iterable, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import config as defaults
from modules.errors import ConfigError


class DecisionMambaConfig(BaseModel):
    """Network shape and behaviour."""

    model_config = ConfigDict(extra="forbid")

    n_layers: int = Field(defaults.DEFAULT_N_LAYERS, ge=1, description="number of Mamba layers")
    embed_dim: int = Field(defaults.DEFAULT_EMBED_DIM, ge=1, description="token embedding width D")
    ssm_state: int = Field(defaults.DEFAULT_SSM_STATE, ge=1, description="SSM state size N")
    expand: int = Field(defaults.DEFAULT_EXPAND, ge=1, description="inner expansion factor E")
    conv_kernel: int = Field(defaults.DEFAULT_CONV_KERNEL, ge=1, description="causal conv width k")
    context_length: int = Field(defaults.DEFAULT_CONTEXT_LENGTH, ge=1, description="timesteps per window K")
    dropout_p: float = Field(defaults.DEFAULT_DROPOUT, ge=0.0, lt=1.0, description="dropout probability")
    use_channel_mlp: bool = Field(True, description="false removes the channel MLP (RC ablation)")
    max_timestep: int = Field(defaults.DEFAULT_MAX_TIMESTEP, ge=1, description="rows of the timestep embedding")
    action_space: Literal["discrete", "continuous"] = Field("discrete", description="action space kind")
    action_dim: int = Field(2, ge=1, description="action count (discrete) or vector size (continuous)")
    state_dim: int = Field(defaults.DEFAULT_ENV_N, ge=1, description="state vector size")
    scan_mode: Literal["sequential", "parallel"] = Field(
        defaults.DEFAULT_SCAN_MODE, description="selective scan evaluation order"
    )

    @property
    def discrete(self) -> bool:
        return self.action_space == "discrete"


class TrainConfig(DecisionMambaConfig):
    """Network fields plus optimization, schedule and evaluation settings."""

    batch_size: int = Field(defaults.DEFAULT_BATCH_SIZE, ge=1, description="windows per update")
    learning_rate: float = Field(defaults.DEFAULT_LEARNING_RATE, gt=0.0, description="base learning rate")
    weight_decay: float = Field(defaults.DEFAULT_WEIGHT_DECAY, ge=0.0, description="decoupled weight decay")
    warmup_steps: int = Field(defaults.DEFAULT_WARMUP_STEPS, ge=0, description="linear warmup updates")
    total_updates: int = Field(defaults.DEFAULT_TOTAL_UPDATES, ge=1, description="optimization steps")
    grad_clip: float = Field(defaults.DEFAULT_GRAD_CLIP, gt=0.0, description="global gradient-norm clip")
    lr_decay: Literal["linear_warmup", "warmup_cosine"] = Field(
        defaults.DEFAULT_LR_DECAY, description="learning rate schedule"
    )
    betas: Tuple[float, float] = Field(defaults.DEFAULT_BETAS, description="Adam moment decay rates")
    adam_eps: float = Field(defaults.DEFAULT_ADAM_EPS, gt=0.0, description="Adam denominator epsilon")
    target_rtg: Optional[float] = Field(None, description="evaluation return target (default: env optimum)")
    eval_episodes: int = Field(defaults.DEFAULT_EVAL_EPISODES, ge=1, description="evaluation episodes")
    eval_temperature: float = Field(0.0, ge=0.0, description="0 = argmax, >0 samples discrete actions")
    seed: int = Field(0, ge=0, description="root seed for every random stream")
    rtg_scale: float = Field(defaults.DEFAULT_RTG_SCALE, gt=0.0, description="divisor applied to returns-to-go")
    normalize_states: Optional[bool] = Field(
        None, description="standardize states (default: continuous envs only)"
    )
    log_every: int = Field(defaults.METRICS_LOG_EVERY, ge=1, description="updates between metrics rows")

    @model_validator(mode="after")
    def _check_betas(self):
        for beta in self.betas:
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        return self


class RunConfig(TrainConfig):
    """Everything a command needs, including paths and the environment."""

    env: Literal["densechain", "delayedcatch", "point1d"] = Field(defaults.DEFAULT_ENV, description="toy env")
    env_n: int = Field(defaults.DEFAULT_ENV_N, ge=2, description="chain length n (discrete envs)")
    horizon: int = Field(defaults.DEFAULT_HORIZON, ge=1, description="episode horizon H")
    dataset_path: Optional[str] = Field(None, description="JSON-Lines dataset file")
    out_dir: Optional[str] = Field(None, description="run output directory")
    checkpoint_path: Optional[str] = Field(None, description="checkpoint to write or read")

    @model_validator(mode="after")
    def _check_horizon(self):
        if self.max_timestep < self.horizon:
            raise ValueError(f"max_timestep {self.max_timestep} is below horizon {self.horizon}")
        return self


def _format_errors(error: ValidationError):
    keys, lines = [], []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "<config>"
        keys.append(key)
        lines.append(f"{key}: {item['msg']}")
    return keys, lines


def build_config(values: Dict[str, Any], model=RunConfig):
    """Validate a flat mapping, raising ConfigError that names every bad key."""
    try:
        return model.model_validate(values)
    except ValidationError as exc:
        keys, lines = _format_errors(exc)
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines), keys) from None


def read_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}", ["--config"])
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}", ["--config"]) from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object", ["--config"])
    return data


def parse_override(text: str) -> Tuple[str, Any]:
    """'key=value' with a JSON value; bare words are kept as strings."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value", [text])
    key, raw = text.split("=", 1)
    return key.strip(), parse_value(raw)


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def layer_values(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    preset: Optional[str] = None,
) -> Dict[str, Any]:
    """Explicitly given values, preset below file below overrides."""
    values: Dict[str, Any] = {}
    if preset is not None:
        if preset not in defaults.PRESETS:
            raise ConfigError(
                f"unknown preset '{preset}' (choose from {', '.join(defaults.PRESETS)})", ["--preset"]
            )
        values.update(defaults.PRESETS[preset])
    if path:
        values.update(read_config_file(path))
    values.update(overrides or {})
    return values


def dataset_values(metadata: Dict[str, Any]) -> Dict[str, Any]:
    """Config keys implied by a dataset's metadata line."""
    space = metadata.get("action_space") or {}
    params = metadata.get("env_params") or {}
    implied = {
        "env": metadata.get("env"),
        "state_dim": metadata.get("state_dim"),
        "action_space": space.get("kind"),
        "action_dim": space.get("size"),
        "env_n": params.get("n"),
        "horizon": params.get("horizon"),
    }
    return {key: value for key, value in implied.items() if value is not None}


def merge_dataset_values(values: Dict[str, Any], metadata: Dict[str, Any]) -> Dict[str, Any]:
    """Fill keys from dataset metadata; explicit values that disagree are an error."""
    merged = dict(values)
    conflicts = []
    for key, value in dataset_values(metadata).items():
        if key in merged and merged[key] != value:
            conflicts.append(f"{key}={merged[key]!r} (dataset: {value!r})")
        else:
            merged[key] = value
    if conflicts:
        keys = [item.split("=", 1)[0] for item in conflicts]
        raise ConfigError("configuration disagrees with the dataset: " + ", ".join(conflicts), keys)
    return merged


def load_run_config(
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    preset: Optional[str] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    values = layer_values(path, overrides, preset)
    if metadata is not None:
        values = merge_dataset_values(values, metadata)
    return build_config(values)


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    values = config.model_dump()
    values.update(changes)
    return build_config(values)


def config_keys() -> Iterable[str]:
    return RunConfig.model_fields.keys()


def describe_keys() -> str:
    """One line per key with its default, for --help."""
    lines = []
    for name, field in RunConfig.model_fields.items():
        default = field.default
        lines.append(f"  {name} (default: {json.dumps(default)}) - {field.description}")
    return "\n".join(lines)


def snapshot(config: RunConfig) -> str:
    """Resolved configuration as stable JSON, loadable again through --config."""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
