"""
Parameterized building blocks: linear maps, layer norm, causal depthwise
convolution, the channel MLP, dropout and embedding tables.
"""

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from modules import tensor as T
from modules.errors import ShapeError
from modules.tensor import Tensor

Mode = Literal["train", "eval"]

LAYER_NORM_EPS = 1e-5


@dataclass
class LinearParams:
    weight: Tensor  # [out, in]
    bias: Optional[Tensor] = None  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"linear bias {self.bias.shape} does not match out extent {self.weight.shape[0]}"
            )

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    epsilon: float = LAYER_NORM_EPS

    def __post_init__(self):
        if self.gamma.ndim != 1 or self.gamma.shape != self.beta.shape:
            raise ShapeError(
                f"layer norm gamma {self.gamma.shape} and beta {self.beta.shape} must be equal 1-D"
            )


@dataclass
class Conv1dParams:
    kernel: Tensor  # [C, k], one filter per channel
    bias: Tensor  # [C]

    def __post_init__(self):
        if self.kernel.ndim != 2 or self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(
                f"depthwise kernel {self.kernel.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[1]


@dataclass
class ChannelMlpParams:
    up: LinearParams  # D -> 4D
    down: LinearParams  # 4D -> D
    dropout_p: float = 0.0

    def __post_init__(self):
        width = self.up.in_features
        if self.up.out_features != 4 * width or self.down.in_features != 4 * width:
            raise ShapeError(f"channel MLP hidden width must be 4x{width}")


@dataclass
class EmbeddingTable:
    table: Tensor  # [V, D]

    @property
    def num_embeddings(self) -> int:
        return self.table.shape[0]


# ---------------------------------------------------------------------------
# init helpers
# ---------------------------------------------------------------------------


def init_linear(rng, in_features, out_features, bias=True, std=0.02) -> LinearParams:
    weight = Tensor(rng.normal(0.0, std, size=(out_features, in_features)), requires_grad=True)
    b = Tensor(np.zeros(out_features), requires_grad=True) if bias else None
    return LinearParams(weight, b)


def init_layer_norm(dim) -> LayerNormParams:
    return LayerNormParams(
        Tensor(np.ones(dim), requires_grad=True), Tensor(np.zeros(dim), requires_grad=True)
    )


def init_conv1d(rng, channels, kernel_size) -> Conv1dParams:
    # fan-in of a depthwise filter is the kernel width
    bound = 1.0 / np.sqrt(kernel_size)
    return Conv1dParams(
        Tensor(rng.uniform(-bound, bound, size=(channels, kernel_size)), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, size=channels), requires_grad=True),
    )


def init_channel_mlp(rng, dim, dropout_p) -> ChannelMlpParams:
    return ChannelMlpParams(
        up=init_linear(rng, dim, 4 * dim),
        down=init_linear(rng, 4 * dim, dim),
        dropout_p=dropout_p,
    )


def init_embedding(rng, count, dim, std=0.02) -> EmbeddingTable:
    return EmbeddingTable(Tensor(rng.normal(0.0, std, size=(count, dim)), requires_grad=True))


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------


def linear(x, p: LinearParams) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != p.in_features:
        raise ShapeError(f"linear expects last extent {p.in_features}, got input {x.shape}")
    y = T.matmul(x, T.transpose(p.weight))
    if p.bias is not None:
        y = y + p.bias
    return y


def layer_norm(x, p: LayerNormParams) -> Tensor:
    """(x - mean) / sqrt(var + eps) * gamma + beta over the last axis, population variance."""
    x = T.as_tensor(x)
    centered = x - T.mean(x, axes=-1, keepdims=True)
    variance = T.mean(centered * centered, axes=-1, keepdims=True)
    normalized = centered * T.power(variance + p.epsilon, -0.5)
    return normalized * p.gamma + p.beta


def causal_conv1d(x, p: Conv1dParams) -> Tensor:
    """Depthwise convolution along L of x[B, L, C], left-padded with k-1 zeros."""
    x = T.as_tensor(x)
    if x.ndim != 3 or x.shape[-1] != p.channels:
        raise ShapeError(f"causal_conv1d expects [B, L, {p.channels}], got {x.shape}")
    batch, length, channels = x.shape
    k = p.kernel_size
    kernel = p.kernel.data
    padded = np.concatenate([np.zeros((batch, k - 1, channels)), x.data], axis=1)
    y = np.broadcast_to(p.bias.data, x.shape).copy()
    for j in range(k):
        y += padded[:, j:j + length] * kernel[:, j]

    def rule(g):
        grad_padded = np.zeros_like(padded)
        grad_kernel = np.empty_like(kernel)
        for j in range(k):
            grad_padded[:, j:j + length] += g * kernel[:, j]
            grad_kernel[:, j] = (g * padded[:, j:j + length]).sum(axis=(0, 1))
        return grad_padded[:, k - 1:], grad_kernel, g.sum(axis=(0, 1))

    return T.record("causal_conv1d", y, (x, p.kernel, p.bias), rule)


def dropout(x, p: float, mode: Mode, rng) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) in train mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = T.as_tensor(x)
    if mode == "eval" or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    return x * Tensor(keep / (1.0 - p), copy=False)


def channel_mlp(x, p: ChannelMlpParams, mode: Mode, rng) -> Tensor:
    """Position-wise Linear -> GELU -> Linear -> Dropout."""
    hidden = T.gelu(linear(x, p.up))
    return dropout(linear(hidden, p.down), p.dropout_p, mode, rng)


def embed(table: EmbeddingTable, ids) -> Tensor:
    """Row gather from an embedding table; out-of-range ids fail."""
    return T.take_rows(table.table, ids)
