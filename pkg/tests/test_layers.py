"""
Tests for the network building blocks
"""

import numpy as np
import pytest

from modules import tensor as T
from modules.errors import ShapeError
from modules.gradcheck import gradient_check
from modules.layers import (
    Conv1dParams,
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
from modules.tensor import Tensor


class TestLinearAndNorm:
    def test_linear_shape_and_value(self, rng):
        p = init_linear(rng, 4, 3)
        x = rng.normal(size=(2, 5, 4))
        out = linear(x, p)
        assert out.shape == (2, 5, 3)
        np.testing.assert_allclose(out.data, x @ p.weight.data.T + p.bias.data)

    def test_linear_rejects_wrong_width(self, rng):
        with pytest.raises(ShapeError):
            linear(np.zeros((2, 5)), init_linear(rng, 4, 3))

    def test_layer_norm_standardizes(self, rng):
        x = rng.normal(3.0, 5.0, size=(4, 16))
        out = layer_norm(x, init_layer_norm(16)).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    @pytest.mark.parametrize("shift", [-1e3, 7.5, 1e4])
    def test_layer_norm_ignores_constant_shift(self, rng, shift):
        p = init_layer_norm(16)
        p.gamma.data = rng.normal(size=16)
        p.beta.data = rng.normal(size=16)
        x = rng.normal(size=(3, 16))
        np.testing.assert_allclose(layer_norm(x + shift, p).data, layer_norm(x, p).data, atol=1e-10)

    def test_gradients(self, rng):
        lin = init_linear(rng, 4, 3)
        ln = init_layer_norm(3)
        ln.gamma.data = rng.normal(size=3)
        x = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        w = rng.normal(size=(2, 3))

        def loss():
            return T.sum(layer_norm(linear(x, lin), ln) * Tensor(w))

        assert gradient_check(loss, [x, lin.weight, lin.bias, ln.gamma, ln.beta]) < 1e-4


class TestCausalConv:
    def test_shape_preserved(self, rng):
        p = init_conv1d(rng, 5, 4)
        assert causal_conv1d(rng.normal(size=(2, 7, 5)), p).shape == (2, 7, 5)

    def test_matches_direct_sum(self, rng):
        p = init_conv1d(rng, 2, 3)
        x = rng.normal(size=(1, 6, 2))
        out = causal_conv1d(x, p).data
        padded = np.concatenate([np.zeros((1, 2, 2)), x], axis=1)
        for t in range(6):
            expected = p.bias.data + sum(padded[0, t + j] * p.kernel.data[:, j] for j in range(3))
            np.testing.assert_allclose(out[0, t], expected)

    def test_kernel_one_is_pointwise(self, rng):
        p = Conv1dParams(Tensor(rng.normal(size=(3, 1))), Tensor(np.zeros(3)))
        x = rng.normal(size=(2, 4, 3))
        np.testing.assert_allclose(causal_conv1d(x, p).data, x * p.kernel.data[:, 0])

    def test_earlier_positions_unchanged_by_later_input(self, rng):
        p = init_conv1d(rng, 3, 4)
        x = rng.normal(size=(1, 9, 3))
        base = causal_conv1d(x, p).data
        for t in range(9):
            bumped = x.copy()
            bumped[0, t] += 10.0
            out = causal_conv1d(bumped, p).data
            np.testing.assert_array_equal(out[0, :t], base[0, :t])

    def test_wrong_channels(self, rng):
        with pytest.raises(ShapeError):
            causal_conv1d(np.zeros((1, 4, 2)), init_conv1d(rng, 3, 2))

    def test_gradient(self, rng):
        p = init_conv1d(rng, 3, 3)
        x = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
        w = rng.normal(size=(2, 5, 3))
        assert gradient_check(lambda: T.sum(causal_conv1d(x, p) * Tensor(w)), [x, p.kernel, p.bias]) < 1e-4


class TestDropoutAndMlp:
    def test_eval_is_identity(self, rng):
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(dropout(x, 0.5, "eval", rng).data, x)

    def test_zero_probability_is_identity(self, rng):
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(dropout(x, 0.0, "train", rng).data, x)

    @pytest.mark.parametrize("p", [-0.1, 1.0])
    def test_invalid_probability(self, rng, p):
        with pytest.raises(ValueError):
            dropout(np.ones(3), p, "train", rng)

    def test_survivors_are_rescaled(self, rng):
        out = dropout(np.ones(10000), 0.25, "train", rng).data
        survivors = out[out != 0.0]
        np.testing.assert_allclose(survivors, 1.0 / 0.75)
        assert abs(len(survivors) / 10000 - 0.75) < 0.03

    def test_train_mode_keeps_the_mean(self, rng):
        x = rng.uniform(0.5, 1.5, size=100_000)
        out = dropout(x, 0.3, "train", rng).data
        assert abs(out.mean() - x.mean()) < 0.01 * x.mean()

    def test_channel_mlp_gradient(self, rng):
        p = init_channel_mlp(rng, 4, 0.0)
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = rng.normal(size=(2, 3, 4))
        loss = lambda: T.sum(channel_mlp(x, p, "train", rng) * Tensor(w))  # noqa: E731
        assert gradient_check(loss, [x, p.up.weight, p.down.weight, p.down.bias]) < 1e-4

    def test_channel_mlp_hidden_width(self, rng):
        p = init_channel_mlp(rng, 6, 0.1)
        assert p.up.out_features == 24

    def test_embedding_lookup(self, rng):
        table = init_embedding(rng, 5, 3)
        out = embed(table, np.array([[4, 0]]))
        np.testing.assert_array_equal(out.data[0, 0], table.table.data[4])
        with pytest.raises(ShapeError):
            embed(table, np.array([5]))

    def test_embedding_matches_one_hot_product(self, rng):
        table = init_embedding(rng, 6, 4)
        ids = np.array([[5, 0, 2], [2, 2, 1]])
        one_hot = np.eye(6)[ids]
        np.testing.assert_allclose(embed(table, ids).data, one_hot @ table.table.data, rtol=1e-15)
