"""
Decision Mamba network.

Tokens (return-to-go, state, action) per timestep are embedded, passed
through a stack of Mamba layers (token mixing by the selective SSM block,
channel mixing by a position-wise MLP) and the hidden states at the state
tokens are decoded into actions.
"""

import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from modules import tensor as T
from modules.errors import CheckpointError, ShapeError
from modules.layers import (
    ChannelMlpParams,
    Conv1dParams,
    EmbeddingTable,
    LayerNormParams,
    LinearParams,
    Mode,
    causal_conv1d,
    channel_mlp,
    dropout,
    embed,
    init_channel_mlp,
    init_conv1d,
    init_embedding,
    init_layer_norm,
    init_linear,
    layer_norm,
    linear,
)
from modules.run_config import DecisionMambaConfig
from modules.selective_ssm import (
    ScanMode,
    SsmParams,
    compute_delta,
    init_ssm_params,
    selective_scan,
    zoh_discretize,
)
from modules.tensor import Tensor

TOKENS_PER_STEP = 3
STATE_TOKEN = 1


@dataclass
class MambaBlockParams:
    in_proj_x: LinearParams  # D -> ED
    in_proj_z: LinearParams  # D -> ED
    conv: Conv1dParams  # [ED, k]
    ssm: SsmParams  # Din = ED
    out_proj: LinearParams  # ED -> D

    def __post_init__(self):
        inner = self.in_proj_x.out_features
        if inner % self.in_proj_x.in_features:
            raise ShapeError(f"inner width {inner} is not a multiple of D={self.in_proj_x.in_features}")
        if self.conv.channels != inner or self.ssm.inner_dim != inner:
            raise ShapeError("conv, SSM and projections disagree on the inner width")

    @property
    def expand(self) -> int:
        return self.in_proj_x.out_features // self.in_proj_x.in_features


@dataclass
class MambaLayerParams:
    ln1: LayerNormParams
    block: MambaBlockParams
    ln2: Optional[LayerNormParams] = None
    mlp: Optional[ChannelMlpParams] = None


@dataclass
class DecisionMambaParams:
    rtg_embed: LinearParams
    state_embed: LinearParams
    action_embed: Union[LinearParams, EmbeddingTable]
    time_embed: EmbeddingTable
    embed_ln: LayerNormParams
    layers: List[MambaLayerParams]
    final_ln: LayerNormParams
    head: LinearParams


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def init_block(rng, dim: int, config: DecisionMambaConfig) -> MambaBlockParams:
    inner = config.expand * dim
    return MambaBlockParams(
        in_proj_x=init_linear(rng, dim, inner, bias=False),
        in_proj_z=init_linear(rng, dim, inner, bias=False),
        conv=init_conv1d(rng, inner, config.conv_kernel),
        ssm=init_ssm_params(rng, inner, config.ssm_state),
        out_proj=init_linear(rng, inner, dim, bias=False),
    )


def init_layer(rng, config: DecisionMambaConfig) -> MambaLayerParams:
    dim = config.embed_dim
    layer = MambaLayerParams(ln1=init_layer_norm(dim), block=init_block(rng, dim, config))
    if config.use_channel_mlp:
        layer.ln2 = init_layer_norm(dim)
        layer.mlp = init_channel_mlp(rng, dim, config.dropout_p)
    return layer


def init_params(config: DecisionMambaConfig, rng) -> DecisionMambaParams:
    """Normal(0, 0.02) weights, zero biases, unit layer norms, S4D-real SSM."""
    dim = config.embed_dim
    if config.discrete:
        action_embed = init_embedding(rng, config.action_dim, dim)
    else:
        action_embed = init_linear(rng, config.action_dim, dim)
    return DecisionMambaParams(
        rtg_embed=init_linear(rng, 1, dim),
        state_embed=init_linear(rng, config.state_dim, dim),
        action_embed=action_embed,
        time_embed=init_embedding(rng, config.max_timestep, dim),
        embed_ln=init_layer_norm(dim),
        layers=[init_layer(rng, config) for _ in range(config.n_layers)],
        final_ln=init_layer_norm(dim),
        head=init_linear(rng, dim, config.action_dim),
    )


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------


def _walk(node, prefix: str) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(node, Tensor):
        yield prefix, node
    elif dataclasses.is_dataclass(node):
        for field in dataclasses.fields(node):
            child = getattr(node, field.name)
            if child is not None:
                yield from _walk(child, f"{prefix}.{field.name}" if prefix else field.name)
    elif isinstance(node, (list, tuple)):
        for i, child in enumerate(node):
            yield from _walk(child, f"{prefix}.{i}")


def named_parameters(params) -> List[Tuple[str, Tensor]]:
    """Canonical dotted names in declaration order, e.g. layers.0.block.out_proj.weight."""
    return list(_walk(params, ""))


def parameter_count(params) -> int:
    return int(sum(t.size for _, t in named_parameters(params)))


def state_dict(params) -> Dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in named_parameters(params)}


def load_state_dict(params, state: Dict[str, np.ndarray]):
    """Copy arrays into ``params`` in place; names and shapes must match exactly."""
    named = named_parameters(params)
    expected = {name for name, _ in named}
    for name, t in named:
        if name not in state:
            raise CheckpointError(f"checkpoint is missing parameter '{name}'")
        array = np.asarray(state[name], dtype=np.float64)
        if array.shape != t.shape:
            raise CheckpointError(
                f"parameter '{name}' has shape {array.shape} in the checkpoint, network expects {t.shape}"
            )
        t.data = array.copy()
        t.grad = None
    extra = [name for name in state if name not in expected]
    if extra:
        raise CheckpointError(f"checkpoint has parameters the network lacks: {', '.join(extra)}")


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def mamba_block_forward(
    x, p: MambaBlockParams, mode: Mode = "eval", scan_mode: ScanMode = "sequential", trace=None
) -> Tensor:
    """Mamba block: gated selective SSM over a causal depthwise convolution.

    ``trace`` (a dict) receives the shape of every intermediate.
    """
    xs = linear(x, p.in_proj_x)
    z = linear(x, p.in_proj_z)
    xs = T.silu(causal_conv1d(xs, p.conv))
    b = linear(xs, p.ssm.b_proj)
    c = linear(xs, p.ssm.c_proj)
    delta = compute_delta(xs, p.ssm)
    discrete = zoh_discretize(delta, p.ssm.a_log, b, xs)
    y = selective_scan(discrete, c, scan_mode)
    y = y + xs * p.ssm.d_skip
    gated = y * T.silu(z)
    out = linear(gated, p.out_proj)
    if trace is not None:
        trace.update(
            x=xs.shape,
            z=z.shape,
            B=b.shape,
            C=c.shape,
            delta=delta.shape,
            a_bar=discrete.a_bar.shape,
            b_bar=discrete.b_bar_x.shape,
            y=gated.shape,
            out=out.shape,
        )
    return out


def mamba_layer_forward(
    x, p: MambaLayerParams, mode: Mode = "eval", rng=None, scan_mode: ScanMode = "sequential"
) -> Tensor:
    """u = x + block(ln1(x)); out = u + mlp(ln2(u)), or u when the MLP is removed."""
    u = T.as_tensor(x) + mamba_block_forward(layer_norm(x, p.ln1), p.block, mode, scan_mode)
    if p.mlp is None:
        return u
    return u + channel_mlp(layer_norm(u, p.ln2), p.mlp, mode, rng)


def _action_tokens(actions, params: DecisionMambaParams) -> Tensor:
    if isinstance(params.action_embed, EmbeddingTable):
        return embed(params.action_embed, np.asarray(actions, dtype=np.int64))
    return linear(T.Tensor(actions, copy=False), params.action_embed)


def embed_trajectory(
    rtg,
    states,
    actions,
    timesteps,
    params: DecisionMambaParams,
    mode: Mode = "eval",
    rng=None,
    dropout_p: float = 0.0,
    normalize: bool = True,
) -> Tensor:
    """Interleave (rtg, state, action) tokens into [B, 3K, D].

    Each step's timestep embedding is added to all three of its tokens.
    ``normalize=False`` returns the raw summed embeddings.
    """
    timesteps = np.asarray(timesteps, dtype=np.int64)
    limit = params.time_embed.num_embeddings
    if timesteps.size and timesteps.max() >= limit:
        raise ShapeError(f"timestep {timesteps.max()} exceeds max_timestep {limit}")
    time = embed(params.time_embed, timesteps)
    rtg_tokens = linear(T.Tensor(rtg, copy=False), params.rtg_embed) + time
    state_tokens = linear(T.Tensor(states, copy=False), params.state_embed) + time
    action_tokens = _action_tokens(actions, params) + time

    batch, steps = timesteps.shape
    stacked = T.stack([rtg_tokens, state_tokens, action_tokens], axis=2)
    tokens = T.reshape(stacked, (batch, TOKENS_PER_STEP * steps, stacked.shape[-1]))
    if not normalize:
        return tokens
    return dropout(layer_norm(tokens, params.embed_ln), dropout_p, mode, rng)


def forward(window, params: DecisionMambaParams, config: DecisionMambaConfig, mode: Mode = "eval", rng=None) -> Tensor:
    """Predicted actions [B, K, action_dim]: tanh-bounded vectors or raw logits."""
    hidden = embed_trajectory(
        window.rtg,
        window.states,
        window.actions,
        window.timesteps,
        params,
        mode,
        rng,
        config.dropout_p,
    )
    for layer in params.layers:
        hidden = mamba_layer_forward(hidden, layer, mode, rng, config.scan_mode)
    hidden = layer_norm(hidden, params.final_ln)

    batch, length, dim = hidden.shape
    steps = length // TOKENS_PER_STEP
    per_step = T.reshape(hidden, (batch, steps, TOKENS_PER_STEP, dim))
    state_hidden = per_step[:, :, STATE_TOKEN, :]
    out = linear(state_hidden, params.head)
    return out if config.discrete else T.tanh(out)
