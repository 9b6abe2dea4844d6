"""
Tests for the Decision Mamba network
"""

import numpy as np
import pytest

from modules import tensor as T
from modules.errors import CheckpointError, ShapeError
from modules.gradcheck import gradient_check
from modules.layers import linear
from modules.mamba_net import (
    embed_trajectory,
    forward,
    init_block,
    init_layer,
    init_params,
    load_state_dict,
    mamba_block_forward,
    mamba_layer_forward,
    named_parameters,
    parameter_count,
    state_dict,
)
from modules.run_config import DecisionMambaConfig
from modules.tensor import Tensor
from modules.trainer import action_loss
from modules.trajectory import Batch


def random_window(rng, config, batch=2, steps=None):
    steps = steps or config.context_length
    if config.discrete:
        actions = rng.integers(0, config.action_dim, size=(batch, steps))
    else:
        actions = rng.uniform(-1.0, 1.0, size=(batch, steps, config.action_dim))
    return Batch(
        rtg=rng.normal(size=(batch, steps, 1)),
        states=rng.normal(size=(batch, steps, config.state_dim)),
        actions=actions,
        timesteps=np.tile(np.arange(steps), (batch, 1)),
        mask=np.ones((batch, steps)),
    )


class TestBlock:
    def test_trace_shapes(self, rng, tiny_config):
        block = init_block(rng, 8, tiny_config)
        trace = {}
        out = mamba_block_forward(rng.normal(size=(2, 5, 8)), block, trace=trace)
        assert out.shape == (2, 5, 8)
        assert trace["x"] == trace["z"] == trace["delta"] == trace["y"] == (2, 5, 16)
        assert trace["B"] == trace["C"] == (2, 5, 4)
        assert trace["a_bar"] == trace["b_bar"] == (2, 5, 16, 4)
        assert trace["out"] == (2, 5, 8)

    def test_scan_modes_agree(self, rng, tiny_config):
        block = init_block(rng, 8, tiny_config)
        x = rng.normal(size=(1, 9, 8))
        seq = mamba_block_forward(x, block, scan_mode="sequential").data
        par = mamba_block_forward(x, block, scan_mode="parallel").data
        assert np.max(np.abs(seq - par)) < 1e-10

    def test_gradient(self, rng, tiny_config):
        block = init_block(rng, 8, tiny_config)
        x = Tensor(rng.normal(size=(1, 5, 8)), requires_grad=True)
        w = rng.normal(size=(1, 5, 8))
        tensors = [x] + [t for _, t in named_parameters(block)]
        loss = lambda: T.sum(mamba_block_forward(x, block) * Tensor(w))  # noqa: E731
        assert gradient_check(loss, tensors, max_entries=12) < 1e-4

    def test_zero_input_gives_zero_output(self, rng, tiny_config):
        block = init_block(rng, 8, tiny_config)
        block.conv.bias.data[:] = 0.0
        out = mamba_block_forward(np.zeros((2, 4, 8)), block).data
        np.testing.assert_array_equal(out, 0.0)

    def test_layer_is_identity_without_output_maps(self, rng, tiny_config):
        layer = init_layer(rng, tiny_config)
        layer.block.out_proj.weight.data[:] = 0.0
        layer.mlp.down.weight.data[:] = 0.0
        layer.mlp.down.bias.data[:] = 0.0
        x = rng.normal(size=(2, 6, 8))
        np.testing.assert_array_equal(mamba_layer_forward(x, layer).data, x)


class TestNetwork:
    def test_output_shapes(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        out = forward(random_window(rng, tiny_config), params, tiny_config)
        assert out.shape == (2, 3, 2)

    def test_continuous_head_is_bounded(self, rng, tiny_config):
        config = tiny_config.model_copy(update={"action_space": "continuous", "action_dim": 3})
        params = init_params(config, rng)
        params.head.weight.data *= 1000.0
        out = forward(random_window(rng, config), params, config).data
        assert out.shape == (2, 3, 3)
        assert np.all(np.abs(out) <= 1.0)

    def test_token_order(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        w = random_window(rng, tiny_config, batch=1)
        tokens = embed_trajectory(w.rtg, w.states, w.actions, w.timesteps, params, normalize=False).data
        assert tokens.shape == (1, 9, 8)
        time = params.time_embed.table.data[w.timesteps[0]]
        rtg = linear(w.rtg, params.rtg_embed).data[0] + time
        states = linear(w.states, params.state_embed).data[0] + time
        actions = params.action_embed.table.data[w.actions[0]] + time
        np.testing.assert_allclose(tokens[0, 0::3], rtg)
        np.testing.assert_allclose(tokens[0, 1::3], states)
        np.testing.assert_allclose(tokens[0, 2::3], actions)

    def test_timestep_overflow(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        w = random_window(rng, tiny_config)
        w.timesteps = w.timesteps + tiny_config.max_timestep
        with pytest.raises(ShapeError):
            forward(w, params, tiny_config)

    def test_earlier_predictions_unchanged_by_later_steps(self, rng, tiny_config):
        config = tiny_config.model_copy(update={"context_length": 5})
        params = init_params(config, rng)
        w = random_window(rng, config, batch=1)
        base = forward(w, params, config).data
        for t in range(5):
            bumped = Batch(w.rtg.copy(), w.states.copy(), w.actions.copy(), w.timesteps, w.mask)
            bumped.rtg[0, t] += 3.0
            bumped.states[0, t] += 3.0
            bumped.actions[0, t] = 1 - bumped.actions[0, t]
            out = forward(bumped, params, config).data
            np.testing.assert_array_equal(out[0, :t], base[0, :t])

    def test_own_action_does_not_leak_into_prediction(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        w = random_window(rng, tiny_config, batch=1)
        base = forward(w, params, tiny_config).data
        w.actions[0, -1] = 1 - w.actions[0, -1]
        np.testing.assert_array_equal(forward(w, params, tiny_config).data, base)

    def test_full_network_gradient(self, rng):
        config = DecisionMambaConfig(
            n_layers=1, embed_dim=8, ssm_state=4, conv_kernel=2, context_length=3,
            dropout_p=0.0, max_timestep=10, state_dim=2, action_dim=3,
        )
        params = init_params(config, rng)
        w = random_window(rng, config, batch=1)
        loss = lambda: action_loss(forward(w, params, config), w.actions, w.mask, "ce")  # noqa: E731
        tensors = [t for _, t in named_parameters(params)]
        assert gradient_check(loss, tensors, max_entries=6) < 1e-3

    def test_zero_inputs_leave_time_embedding(self, rng, tiny_config):
        config = tiny_config.model_copy(update={"action_space": "continuous", "action_dim": 2})
        params = init_params(config, rng)
        timesteps = np.array([[4, 5, 6]])
        tokens = embed_trajectory(
            np.zeros((1, 3, 1)), np.zeros((1, 3, config.state_dim)), np.zeros((1, 3, 2)),
            timesteps, params, normalize=False,
        ).data
        time = params.time_embed.table.data[timesteps[0]]
        for slot in range(3):
            np.testing.assert_array_equal(tokens[0, slot::3], time)

    def test_removing_channel_mlp_changes_output(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        w = random_window(rng, tiny_config)
        full = forward(w, params, tiny_config).data
        for layer in params.layers:
            layer.ln2 = layer.mlp = None
        reduced = forward(w, params, tiny_config).data
        assert np.max(np.abs(full - reduced)) > 1e-8


class TestParameters:
    def test_names_are_dotted_and_ordered(self, rng, tiny_config):
        names = [name for name, _ in named_parameters(init_params(tiny_config, rng))]
        assert names[0] == "rtg_embed.weight"
        assert "layers.0.block.ssm.a_log" in names
        assert "layers.0.block.ssm.d_skip" in names
        assert "layers.0.mlp.up.weight" in names
        assert names[-1] == "head.bias"
        assert len(names) == len(set(names))

    def test_channel_mlp_removed(self, rng, tiny_config):
        full = init_params(tiny_config, rng)
        rc = init_params(tiny_config.model_copy(update={"use_channel_mlp": False}), rng)
        rc_names = [name for name, _ in named_parameters(rc)]
        assert not any(".mlp." in name or ".ln2." in name for name in rc_names)
        assert parameter_count(rc) < parameter_count(full)

    def test_state_dict_roundtrip(self, rng, tiny_config):
        source = init_params(tiny_config, np.random.default_rng(1))
        target = init_params(tiny_config, np.random.default_rng(2))
        load_state_dict(target, state_dict(source))
        w = random_window(rng, tiny_config)
        np.testing.assert_array_equal(
            forward(w, source, tiny_config).data, forward(w, target, tiny_config).data
        )

    def test_shape_mismatch_names_parameter(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        state = state_dict(params)
        state["head.weight"] = np.zeros((5, 5))
        with pytest.raises(CheckpointError, match="head.weight"):
            load_state_dict(params, state)

    def test_missing_parameter_named(self, rng, tiny_config):
        params = init_params(tiny_config, rng)
        state = state_dict(params)
        del state["final_ln.gamma"]
        with pytest.raises(CheckpointError, match="final_ln.gamma"):
            load_state_dict(params, state)

    def test_weight_init_std(self, rng):
        config = DecisionMambaConfig(n_layers=2, embed_dim=64, ssm_state=16, context_length=4, state_dim=4)
        samples = np.concatenate([
            t.data.reshape(-1)
            for name, t in named_parameters(init_params(config, rng))
            if name.endswith(".weight") or name.endswith(".table")
        ])
        assert samples.size >= 100_000
        assert abs(samples.std() - 0.02) < 0.002

    def test_doubled_depth_without_mlp_has_comparable_size(self, rng):
        base = DecisionMambaConfig(n_layers=2, embed_dim=32, ssm_state=8, context_length=4, state_dim=4)
        reduced = base.model_copy(update={"n_layers": 4, "use_channel_mlp": False})
        full_count = parameter_count(init_params(base, rng))
        reduced_count = parameter_count(init_params(reduced, rng))
        assert 0.5 <= reduced_count / full_count <= 2.0
