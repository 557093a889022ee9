import math

import numpy as np
import pytest

from src.errors import CheckpointError, ShapeError
from src.nn import Attention, Embedding, FeedForward, LayerNorm, Module, attn, embed, ffn, sinusoidal_positions
from src.tensor import Tensor, constant, grad_check, mul, sum_all
from src.utils.container import parameter_hash

from oracles import loop_attention, loop_ffn


def scalar_attention(wq=1.0, wk=1.0, wv=1.0) -> Attention:
    module = Attention(1, 1, 1, 1, scaling=False)
    module.W_q.values[...] = wq
    module.W_k.values[...] = wk
    module.W_v.values[...] = wv
    return module


class TestAttention:
    def test_single_key_takes_all_weight(self):
        out = attn(constant([5.0]), constant([[2.0]]), constant([[7.0]]), scalar_attention())
        np.testing.assert_allclose(out.values, [7.0], atol=1e-15)

    def test_equal_logits_average_values(self):
        out = attn(constant([1.0]), constant([[4.0], [9.0]]), constant([[1.0], [3.0]]), scalar_attention(wk=0.0, wv=1.5))
        np.testing.assert_allclose(out.values, [1.5 * 2.0], atol=1e-15)

    def test_hand_softmax(self):
        K = constant([[0.0], [math.log(3.0)]])
        out = attn(constant([1.0]), K, constant([[1.0], [2.0]]), scalar_attention())
        np.testing.assert_allclose(out.values, [1.75], atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        module = Attention(4, 3, 3, 4, heads=1, scaling=False).initialize(5)
        q, K, V = rng.normal(size=4), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        visible = np.array([True, True, False, True, False])
        out = attn(constant(q), constant(K), constant(V), module, visible)
        expected = loop_attention(q, K, V, module.W_q.values, module.W_k.values, module.W_v.values, visible)
        assert np.max(np.abs(out.values - expected)) <= 1e-10

    def test_scaling_divides_logits(self, rng):
        scaled = Attention(4, 4, 4, 4, heads=1, scaling=True).initialize(1)
        q, K = rng.normal(size=4), rng.normal(size=(3, 4))
        out = attn(constant(q), constant(K), constant(K), scaled)
        expected = loop_attention(q / 2.0, K, K, scaled.W_q.values, scaled.W_k.values, scaled.W_v.values)
        assert np.max(np.abs(out.values - expected)) <= 1e-10

    def test_heads_concatenate(self, rng):
        module = Attention(4, 4, 4, 4, heads=2, scaling=False).initialize(2)
        q, K = rng.normal(size=4), rng.normal(size=(3, 4))
        out = attn(constant(q), constant(K), constant(K), module).values
        for h, cols in enumerate((slice(0, 2), slice(2, 4))):
            head = loop_attention(q, K, K, module.W_q.values[:, cols], module.W_k.values[:, cols], module.W_v.values[:, cols])
            np.testing.assert_allclose(out[2 * h : 2 * h + 2], head, atol=1e-10)

    def test_trailing_padding_is_bit_invariant(self, rng):
        module = Attention(4, 3, 3, 4, heads=2).initialize(3)
        query = constant(rng.normal(size=(1, 2, 4)))
        keys = rng.normal(size=(1, 4, 3))
        padded = np.concatenate([keys, rng.normal(size=(1, 3, 3))], axis=1)
        mask = np.array([[True] * 4 + [False] * 3])
        plain = module.forward(query, constant(keys), constant(keys))
        out = module.forward(query, constant(padded), constant(padded), mask)
        np.testing.assert_array_equal(out.values, plain.values)

    def test_all_keys_masked_rejected(self, rng):
        module = Attention(2, 2, 2, 2).initialize(0)
        x = constant(rng.normal(size=(1, 3, 2)))
        with pytest.raises(ValueError, match="masked"):
            module.forward(x, x, x, np.zeros((1, 3), dtype=bool))

    def test_width_mismatch_rejected(self, rng):
        module = Attention(4, 3, 3, 4).initialize(0)
        with pytest.raises(ShapeError, match="key width"):
            module.forward(constant(np.zeros((1, 2, 4))), constant(np.zeros((1, 2, 5))), constant(np.zeros((1, 2, 3))))

    def test_heads_must_divide_width(self):
        with pytest.raises(ShapeError):
            Attention(4, 4, 4, 6, heads=4)

    def test_gradients(self, rng):
        module = Attention(4, 3, 3, 4, heads=2, scaling=True).initialize(4)
        query = constant(rng.normal(size=(2, 3, 4)))
        keys = constant(rng.normal(size=(2, 5, 3)))
        mask = np.array([[True] * 5, [True, True, True, False, False]])
        target = constant(rng.normal(size=(2, 3, 4)))
        report = grad_check(lambda: sum_all(mul(module.forward(query, keys, keys, mask), target)), module.named_parameters())
        assert report.passed, report.summary()


class TestFeedForward:
    def test_relu_clamp(self):
        module = FeedForward(2, 2)
        module.W_1.values[...] = np.eye(2)
        module.W_2.values[...] = np.eye(2)
        np.testing.assert_array_equal(ffn(constant([-1.0, 2.0]), module).values, [0.0, 2.0])

    def test_zero_weights_give_output_bias(self, rng):
        module = FeedForward(3, 4)
        module.b_2.values[...] = [1.0, -2.0, 0.5]
        np.testing.assert_array_equal(ffn(constant(rng.normal(size=3)), module).values, [1.0, -2.0, 0.5])

    def test_matches_loop_oracle(self, rng):
        module = FeedForward(4, 6).initialize(7)
        module.b_1.values[...] = rng.normal(size=6)
        module.b_2.values[...] = rng.normal(size=4)
        x = rng.normal(size=4)
        expected = loop_ffn(x, module.W_1.values, module.b_1.values, module.W_2.values, module.b_2.values)
        assert np.max(np.abs(ffn(constant(x), module).values - expected)) <= 1e-10


class TestEmbedding:
    def test_positions_at_zero(self):
        np.testing.assert_array_equal(sinusoidal_positions(1, 6)[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])

    def test_token_zero_at_position_zero(self):
        table = Tensor(np.eye(4))
        out = embed([0], table).values
        np.testing.assert_array_equal(out[0], np.eye(4)[0] + sinusoidal_positions(1, 4)[0])

    def test_positions_shift_the_same_token(self, rng):
        table = Tensor(rng.normal(size=(5, 6)))
        out = embed([3, 3], table).values
        pe = sinusoidal_positions(2, 6)
        np.testing.assert_allclose(out[1] - out[0], pe[1] - pe[0], atol=1e-14)

    def test_batched_embedding_matches_single(self, rng):
        module = Embedding(5, 4).initialize(0)
        ids = np.array([[1, 4, 2]])
        np.testing.assert_array_equal(module.forward(ids).values[0], embed(ids[0], module.table).values)

    def test_out_of_vocabulary_rejected(self):
        with pytest.raises(ValueError, match="out-of-vocabulary"):
            embed([5], Tensor(np.zeros((5, 2))))


class _Pair(Module):
    def __init__(self):
        self.norm = LayerNorm(3)
        self.layers = [FeedForward(3, 2), FeedForward(3, 2)]


class TestModule:
    def test_parameter_names(self):
        names = [n for n, _ in _Pair().named_parameters()]
        assert names[:2] == ["norm.gain", "norm.bias"]
        assert "layers.1.W_2" in names
        assert len(names) == 2 + 2 * 4

    def test_initialize_is_deterministic_per_name(self):
        a, b = _Pair().initialize(11), _Pair().initialize(11)
        for (name, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(p.values, q.values, err_msg=name)
        assert not np.array_equal(a.layers[0].W_1.values, a.layers[1].W_1.values)
        np.testing.assert_array_equal(a.norm.gain.values, np.ones(3))

    def test_freeze(self):
        module = _Pair().initialize(0).freeze()
        assert module.trainable_parameters() == []
        assert not module.training

    def test_load_state_dict_reports_every_problem(self):
        module = _Pair().initialize(0)
        state = module.state_dict()
        state["norm.gain"] = np.ones(4)
        del state["layers.0.b_1"]
        state["extra"] = np.zeros(1)
        with pytest.raises(CheckpointError) as info:
            module.load_state_dict(state)
        message = str(info.value)
        assert "norm.gain" in message and "layers.0.b_1" in message and "extra" in message

    def test_state_round_trip(self):
        source, target = _Pair().initialize(1), _Pair().initialize(2)
        target.load_state_dict(source.state_dict())
        for name, values in source.state_dict().items():
            np.testing.assert_array_equal(target.state_dict()[name], values)

    def test_failed_load_leaves_parameters_untouched(self):
        module = _Pair().initialize(0)
        before = parameter_hash(module.state_dict())
        state = _Pair().initialize(1).state_dict()
        # Every entry but the last one fits.
        state["layers.1.b_2"] = np.zeros(5)
        with pytest.raises(CheckpointError, match="layers.1.b_2"):
            module.load_state_dict(state)
        assert parameter_hash(module.state_dict()) == before
