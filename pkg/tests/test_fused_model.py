import numpy as np
import pytest

from src.config import VARIANTS
from src.errors import CheckpointError, ConfigError, DecodingError, ShapeError
from src.model import DropNetSample, FusedModel, resolve_wiring, warm_start
from src.nn import sinusoidal_positions
from src.provider.output import ProviderOutput, collate_provider
from src.tensor import backward, grad_check, no_grad, recording
from src.training.loss import label_smoothed_nll
from src.utils.container import parameter_hash

from oracles import loop_matvec, module_attention, module_ffn, module_norm

SRC_LEN, TGT_LEN, LEN_B = 2, 3, 5


def build(model_config, variant="full", seed=0, **overrides) -> FusedModel:
    return FusedModel(model_config(variant=variant, **overrides)).initialize(seed).eval()


def token_inputs(rng, model, batch=1, src_len=SRC_LEN, tgt_len=TGT_LEN):
    cfg = model.config
    src = rng.integers(0, cfg.src_vocab, size=(batch, src_len))
    tgt_in = rng.integers(0, cfg.tgt_vocab, size=(batch, tgt_len))
    return src, np.ones(src.shape, dtype=bool), tgt_in


def embedded(table, ids):
    return table.values[ids] + sinusoidal_positions(len(ids), table.shape[1])


def encoder_oracle(model, src, provider):
    """One encoder layer of the full variant; provider branch averaged with self-attention."""
    layer = model.encoder[0]
    h0 = embedded(model.src_embed.table, src[0])
    HB, visible = provider.states.values[0], provider.mask[0]
    rows = []
    for t in range(len(h0)):
        mixed = 0.5 * (module_attention(layer.self_attn, h0[t], h0) + module_attention(layer.provider_attn, h0[t], HB, visible))
        h1 = module_norm(layer.norm_attn, h0[t] + mixed)
        rows.append(module_norm(layer.norm_ffn, h1 + module_ffn(layer.ffn, h1)))
    return np.array(rows)


def decoder_oracle(model, tgt_in, HE, provider, stacked=False):
    """One decoder layer followed by the output projection."""
    layer = model.decoder[0]
    s0 = embedded(model.tgt_embed.table, tgt_in[0])
    HB, visible = provider.states.values[0], provider.mask[0]
    rows = []
    for t in range(len(s0)):
        causal = [j <= t for j in range(len(s0))]
        s_hat = module_norm(layer.norm_self, s0[t] + module_attention(layer.self_attn, s0[t], s0, causal))
        if stacked:
            s_bar = module_norm(layer.norm_cross, s_hat + module_attention(layer.enc_attn, s_hat, HE))
            s_tilde = module_norm(layer.norm_provider, s_bar + module_attention(layer.provider_attn, s_bar, HB, visible))
        else:
            mixed = 0.5 * (module_attention(layer.provider_attn, s_hat, HB, visible) + module_attention(layer.enc_attn, s_hat, HE))
            s_tilde = module_norm(layer.norm_cross, s_hat + mixed)
        out = module_norm(layer.norm_ffn, s_tilde + module_ffn(layer.ffn, s_tilde))
        rows.append(loop_matvec(out, model.output.weight.values) + model.output.bias.values)
    return np.array(rows)


class TestLoopOracles:
    def test_encoder_layer(self, rng, model_config, provider_batch):
        model = build(model_config)
        src, mask, _ = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        enc = model.encode(src, mask, provider)
        assert np.max(np.abs(enc.output.values[0] - encoder_oracle(model, src, provider))) <= 1e-10

    def test_encoder_layer_with_padded_provider(self, rng, model_config, provider_batch):
        model = build(model_config, seed=1)
        src, mask, _ = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        provider.mask[0, 3:] = False
        enc = model.encode(src, mask, provider)
        assert np.max(np.abs(enc.output.values[0] - encoder_oracle(model, src, provider))) <= 1e-10

    def test_decoder_layer(self, rng, model_config, provider_batch):
        model = build(model_config, seed=2)
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        enc = model.encode(src, mask, provider)
        logits = model.decode(enc, tgt_in, provider).logits.values[0]
        expected = decoder_oracle(model, tgt_in, enc.output.values[0], provider)
        assert np.max(np.abs(logits - expected)) <= 1e-10

    def test_stacked_decoder_layer(self, rng, model_config, provider_batch):
        model = build(model_config, "stacked_decoder", seed=3)
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        enc = model.encode(src, mask, provider)
        logits = model.decode(enc, tgt_in, provider).logits.values[0]
        expected = decoder_oracle(model, tgt_in, enc.output.values[0], provider, stacked=True)
        assert np.max(np.abs(logits - expected)) <= 1e-10

    def test_linear_feed_encoder_layer(self, rng, model_config, provider_batch):
        model = build(model_config, "linear_feed", seed=4)
        src, mask, _ = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        layer = model.encoder[0]
        h0 = embedded(model.src_embed.table, src[0])
        features = provider.outputs[0].aligned(SRC_LEN)
        rows = []
        for t in range(SRC_LEN):
            mixed = 0.5 * (module_attention(layer.self_attn, h0[t], h0) + loop_matvec(features[t], layer.provider_linear.weight.values))
            h1 = module_norm(layer.norm_attn, h0[t] + mixed)
            rows.append(module_norm(layer.norm_ffn, h1 + module_ffn(layer.ffn, h1)))
        enc = model.encode(src, mask, provider)
        assert np.max(np.abs(enc.output.values[0] - np.array(rows))) <= 1e-10

    def test_embedding_feed_replaces_word_embeddings(self, rng, model_config, provider_batch):
        model = build(model_config, "embedding_feed", seed=5)
        assert model.src_embed is None
        src, mask, _ = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        layer = model.encoder[0]
        features = provider.outputs[0].aligned(SRC_LEN)
        h0 = np.array([loop_matvec(f, model.provider_proj.weight.values) + model.provider_proj.bias.values for f in features])
        h0 = h0 + sinusoidal_positions(SRC_LEN, 4)
        rows = []
        for t in range(SRC_LEN):
            h1 = module_norm(layer.norm_attn, h0[t] + module_attention(layer.self_attn, h0[t], h0))
            rows.append(module_norm(layer.norm_ffn, h1 + module_ffn(layer.ffn, h1)))
        enc = model.encode(src, mask, provider)
        assert np.max(np.abs(enc.output.values[0] - np.array(rows))) <= 1e-10


class TestBranchIdentities:
    def test_zero_provider_values_halve_self_attention(self, rng, model_config, provider_batch):
        model = build(model_config)
        model.encoder[0].provider_attn.W_v.values[...] = 0.0
        src, mask, _ = token_inputs(rng, model)
        enc = model.encode(src, mask, provider_batch(rng, 1, LEN_B, 3))
        a = model.encoder[0].self_attn.forward(enc.layers[0], enc.layers[0], enc.layers[0], mask)
        np.testing.assert_allclose(enc.mixes[0].values, 0.5 * a.values, atol=1e-15)

    def test_identical_branches_average_to_one(self, rng, model_config):
        model = build(model_config, provider_dim=4)
        layer = model.encoder[0]
        for name in ("W_q", "W_k", "W_v"):
            getattr(layer.provider_attn, name).values[...] = getattr(layer.self_attn, name).values
        src, mask, _ = token_inputs(rng, model)
        h0 = model.src_embed.forward(src)
        provider = collate_provider([ProviderOutput(h0.values[0].copy(), np.ones(SRC_LEN, dtype=bool), (0, SRC_LEN))])
        enc = model.encode(src, mask, provider)
        a = layer.self_attn.forward(h0, h0, h0, mask)
        np.testing.assert_allclose(enc.mixes[0].values, a.values, atol=1e-14)

    def test_removing_the_provider_branch_drops_the_average(self, rng, model_config, provider_batch):
        full = build(model_config)
        full.encoder[0].provider_attn.W_v.values[...] = 0.0
        dropped = build(model_config, "drop_enc_attnB", p_net=0.0)
        dropped.load_state_dict(full.state_dict(), strict=False)
        src, mask, _ = token_inputs(rng, full)
        provider = provider_batch(rng, 1, LEN_B, 3)
        np.testing.assert_allclose(
            dropped.encode(src, mask, provider).mixes[0].values,
            2.0 * full.encode(src, mask, provider).mixes[0].values,
            atol=1e-14,
        )

    def test_zero_provider_values_in_decoder(self, rng, model_config, provider_batch):
        model = build(model_config)
        model.decoder[0].provider_attn.W_v.values[...] = 0.0
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        enc = model.encode(src, mask, provider)
        dec = model.decode(enc, tgt_in, provider)
        s_hat = dec.self_attended[0]
        m = model.decoder[0].enc_attn.forward(s_hat, enc.output, enc.output, enc.mask)
        np.testing.assert_allclose(dec.mixes[0].values, 0.5 * m.values, atol=1e-15)
        probs = model.decode_step(tgt_in, enc, provider).values
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_dropnet_draws_select_single_branches(self, rng, model_config, provider_batch):
        model = build(model_config, p_net=1.0).train()
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        encoder, decoder = model.encoder[0], model.decoder[0]

        enc = model.encode(src, mask, provider, DropNetSample.fixed(1, 0.2))
        h0 = enc.layers[0]
        np.testing.assert_array_equal(enc.mixes[0].values, encoder.self_attn.forward(h0, h0, h0, mask).values)
        dec = model.decode(enc, tgt_in, provider, DropNetSample.fixed(1, 0.2))
        s_hat = dec.self_attended[0]
        expected = decoder.provider_attn.forward(s_hat, provider.states, provider.states, provider.mask)
        np.testing.assert_array_equal(dec.mixes[0].values, expected.values)

        enc = model.encode(src, mask, provider, DropNetSample.fixed(1, 0.9))
        h0 = enc.layers[0]
        expected = encoder.provider_attn.forward(h0, provider.states, provider.states, provider.mask)
        np.testing.assert_array_equal(enc.mixes[0].values, expected.values)
        dec = model.decode(enc, tgt_in, provider, DropNetSample.fixed(1, 0.9))
        s_hat = dec.self_attended[0]
        expected = decoder.enc_attn.forward(s_hat, enc.output, enc.output, enc.mask)
        np.testing.assert_array_equal(dec.mixes[0].values, expected.values)


class TestInvariances:
    def test_provider_padding_leaves_outputs_unchanged(self, model_config, provider_batch):
        with no_grad():
            for seed in range(100):
                rng = np.random.default_rng(seed)
                variant = ("full", "stacked_decoder", "linear_feed")[seed % 3]
                model = build(model_config, variant, seed=seed, layers=2)
                src, mask, tgt_in = token_inputs(rng, model, batch=1)
                plain = provider_batch(rng, 1, int(rng.integers(3, 7)), 3)
                padded = collate_provider([plain.outputs[0].padded(int(rng.integers(1, 4)))])
                enc_plain = model.encode(src, mask, plain)
                enc_padded = model.encode(src, mask, padded)
                np.testing.assert_array_equal(enc_padded.output.values, enc_plain.output.values)
                np.testing.assert_array_equal(
                    model.decode(enc_padded, tgt_in, padded).logits.values,
                    model.decode(enc_plain, tgt_in, plain).logits.values,
                )

    def test_future_targets_do_not_reach_the_past(self, model_config, provider_batch):
        with no_grad():
            for seed in range(100):
                rng = np.random.default_rng(1000 + seed)
                model = build(model_config, seed=seed, layers=2)
                src, mask, tgt_in = token_inputs(rng, model, batch=2, tgt_len=4)
                provider = provider_batch(rng, 2, LEN_B, 3)
                enc = model.encode(src, mask, provider)
                keep = int(rng.integers(1, 4))
                perturbed = tgt_in.copy()
                perturbed[:, keep:] = rng.integers(0, model.config.tgt_vocab, size=(2, 4 - keep))
                before = model.decode(enc, tgt_in, provider).logits.values
                after = model.decode(enc, perturbed, provider).logits.values
                np.testing.assert_array_equal(after[:, :keep], before[:, :keep])

    def test_decode_step_matches_full_prefix_decode(self, rng, model_config, provider_batch):
        model = build(model_config, layers=2)
        src, mask, tgt_in = token_inputs(rng, model, tgt_len=4)
        provider = provider_batch(rng, 1, LEN_B, 3)
        enc = model.encode(src, mask, provider)
        logits = model.decode(enc, tgt_in, provider).logits.values[0]
        for position in range(4):
            probs = model.decode_step(tgt_in, enc, provider, position=position).values[0]
            expected = np.exp(logits[position] - logits[position].max())
            np.testing.assert_allclose(probs, expected / expected.sum(), atol=1e-12)

    def test_position_beyond_prefix_rejected(self, rng, model_config, provider_batch):
        model = build(model_config)
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        enc = model.encode(src, mask, provider)
        with pytest.raises(DecodingError, match="beyond"):
            model.decode_step(tgt_in, enc, provider, position=TGT_LEN)

    def test_eval_mode_is_deterministic(self, rng, model_config, provider_batch):
        model = build(model_config, layers=2, dropout=0.3)
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        first = model.decode(model.encode(src, mask, provider), tgt_in, provider).logits.values
        second = model.decode(model.encode(src, mask, provider), tgt_in, provider).logits.values
        np.testing.assert_array_equal(first, second)


class TestVariants:
    @pytest.mark.parametrize("variant", [
        "full",
        "linear_feed",
        "drop_enc_attnB",
        "drop_dec_attnB",
        "embedding_feed",
        "stacked_decoder",
        "stacked_decoder+drop_enc_attnB",
        "linear_feed+drop_dec_attnB",
    ])
    def test_forward_shapes(self, rng, model_config, provider_batch, variant):
        model = build(model_config, variant, layers=2)
        src, mask, tgt_in = token_inputs(rng, model, batch=2)
        provider = provider_batch(rng, 2, LEN_B, 3)
        logits = model.decode(model.encode(src, mask, provider), tgt_in, provider).logits
        assert logits.shape == (2, TGT_LEN, model.config.tgt_vocab)
        assert model.uses_provider
        assert model.provider_parameter_names()

    def test_baseline_has_no_provider_modules(self, rng, model_config):
        model = build(model_config, "no_provider_baseline")
        assert not model.uses_provider
        assert model.provider_parameter_names() == []
        src, mask, tgt_in = token_inputs(rng, model)
        assert model.decode(model.encode(src, mask), tgt_in).logits.shape == (1, TGT_LEN, 6)

    def test_removed_branches_have_no_parameters(self, model_config):
        names = build(model_config, "drop_dec_attnB").provider_parameter_names()
        assert any(n.startswith("encoder.0.provider_attn") for n in names)
        assert not any(n.startswith("decoder.") for n in names)
        stacked = build(model_config, "stacked_decoder").provider_parameter_names()
        assert "decoder.0.norm_provider.gain" in stacked

    @pytest.mark.parametrize("variant", [
        "stacked_decoder+drop_dec_attnB",
        "drop_enc_attnB+drop_dec_attnB",
        "full+linear_feed",
        "no_such_variant",
        "linear_feed+linear_feed",
    ])
    def test_contradictions_rejected(self, variant):
        with pytest.raises(ConfigError):
            resolve_wiring(variant)

    def test_contradictory_config_rejected(self, model_config):
        with pytest.raises(ValueError):
            model_config(variant="stacked_decoder+drop_dec_attnB")

    def test_provider_width_mismatch_rejected(self, rng, model_config, provider_batch):
        model = build(model_config)
        src, mask, _ = token_inputs(rng, model)
        with pytest.raises(ShapeError, match="d_B=3"):
            model.encode(src, mask, provider_batch(rng, 1, LEN_B, 5))

    def test_missing_provider_rejected(self, rng, model_config):
        model = build(model_config)
        src, mask, _ = token_inputs(rng, model)
        with pytest.raises(ValueError, match="provider"):
            model.encode(src, mask)

    def test_tied_embeddings(self, rng, model_config, provider_batch):
        model = build(model_config, tie_embeddings=True)
        assert "output.weight" not in dict(model.named_parameters())
        src, mask, tgt_in = token_inputs(rng, model)
        provider = provider_batch(rng, 1, LEN_B, 3)
        assert model.decode(model.encode(src, mask, provider), tgt_in, provider).logits.shape == (1, TGT_LEN, 6)


class TestWarmStart:
    def test_shared_parameters_are_copied(self, model_config):
        baseline = build(model_config, "no_provider_baseline", seed=1)
        fused = build(model_config, seed=2)
        fresh = {n: p.values.copy() for n, p in fused.named_parameters()}
        shared = warm_start(fused, baseline.state_dict())

        stage1 = baseline.state_dict()
        stage2 = fused.state_dict()
        assert set(shared) == set(stage1)
        assert parameter_hash({n: stage2[n] for n in shared}) == parameter_hash(stage1)
        provider_names = fused.provider_parameter_names()
        assert set(stage2) - set(shared) == set(provider_names)
        for name in provider_names:
            np.testing.assert_array_equal(stage2[name], fresh[name])

    def test_shape_mismatch_lists_every_parameter(self, model_config):
        baseline = build(model_config, "no_provider_baseline", d_ff=5)
        fused = build(model_config)
        with pytest.raises(CheckpointError) as info:
            warm_start(fused, baseline.state_dict())
        message = str(info.value)
        for name in ("encoder.0.ffn.W_1", "encoder.0.ffn.b_1", "decoder.0.ffn.W_2"):
            assert name in message


def fused_loss(model, src, mask, tgt_in, tgt_out, provider, sample):
    enc = model.encode(src, mask, provider, sample)
    logits = model.decode(enc, tgt_in, provider, sample).logits
    return label_smoothed_nll(logits, tgt_out, pad_id=0, smoothing=0.1)


GRADIENT_VARIANTS = [
    *VARIANTS,
    "linear_feed+drop_dec_attnB",
    "linear_feed+stacked_decoder",
    "stacked_decoder+drop_enc_attnB",
]


def random_gradient_case(model_config, provider_batch, variant, seed):
    """A small random configuration of `variant` in training mode with its inputs and a frozen drop-net draw."""
    rng = np.random.default_rng(seed)
    heads = int(rng.integers(1, 3))
    model = FusedModel(model_config(
        variant=variant,
        layers=int(rng.integers(1, 3)),
        d_model=4,
        d_ff=int(rng.integers(2, 6)),
        heads=heads,
        src_vocab=5,
        tgt_vocab=5,
        provider_dim=int(rng.integers(2, 6)),
        p_net=float(rng.uniform()),
        attention_scaling=bool(rng.integers(0, 2)),
        tie_embeddings=bool(rng.integers(0, 2)),
        linear_feed_operand=str(rng.choice(["provider", "printed"])),
    )).initialize(seed).train()
    layers = model.config.layers
    src = rng.integers(1, 5, size=(2, 3))
    mask = np.ones(src.shape, dtype=bool)
    tgt_in = rng.integers(1, 5, size=(2, 3))
    tgt_out = np.concatenate([tgt_in[:, 1:], [[2], [0]]], axis=1)
    provider = provider_batch(rng, 2, 5, model.config.provider_dim)
    provider.mask[1, 4] = False
    sample = DropNetSample(encoder=rng.random(layers), decoder=rng.random(layers))
    return model, (src, mask, tgt_in, tgt_out, provider, sample)


def check_gradients(model, inputs):
    # Entries whose absolute error is below the central-difference noise of a
    # loss near 1 pass on that bound.
    report = grad_check(lambda: fused_loss(model, *inputs), model.trainable_parameters(), tol=1e-4, atol=1e-8)
    assert report.passed, f"{model.config.variant}: {report.summary()}"
    assert {e.name for e in report.entries} == {n for n, _ in model.named_parameters()}


class TestGradients:
    def test_full_model_matches_finite_differences(self, model_config, provider_batch):
        rng = np.random.default_rng(7)
        model = FusedModel(model_config(
            layers=2, d_model=8, d_ff=8, heads=2, src_vocab=5, tgt_vocab=5, provider_dim=4,
            p_net=0.0, attention_scaling=True,
        )).initialize(3).train()
        src = rng.integers(1, 5, size=(2, 3))
        mask = np.ones(src.shape, dtype=bool)
        tgt_in = rng.integers(1, 5, size=(2, 3))
        tgt_out = np.concatenate([tgt_in[:, 1:], [[2], [0]]], axis=1)
        provider = provider_batch(rng, 2, 5, 4)
        provider.mask[1, 4] = False
        check_gradients(model, (src, mask, tgt_in, tgt_out, provider, DropNetSample.fixed(2, 0.5)))

    @pytest.mark.parametrize("seed", range(20))
    def test_random_configurations(self, model_config, provider_batch, seed):
        variant = GRADIENT_VARIANTS[seed % len(GRADIENT_VARIANTS)]
        check_gradients(*random_gradient_case(model_config, provider_batch, variant, seed))

    @pytest.mark.slow
    @pytest.mark.parametrize("variant", GRADIENT_VARIANTS)
    @pytest.mark.parametrize("seed", range(20))
    def test_every_variant_over_seeds(self, model_config, provider_batch, variant, seed):
        check_gradients(*random_gradient_case(model_config, provider_batch, variant, 100 + seed))

    def test_frozen_provider_receives_no_gradient(self, model_config):
        from src.config import ProviderConfig
        from src.provider import pretrain_provider

        sentences = [("aAnN bBoO", None), ("cCpP aAnN dDqQ", None)]
        provider = pretrain_provider(sentences, ProviderConfig(layers=1, d_model=4, heads=1, d_ff=4, pretrain_steps=0), seed=0)
        outputs = provider.encode_many(sentences)
        batch = collate_provider(outputs)
        model = FusedModel(model_config(provider_dim=4)).initialize(0).train()
        src = np.array([[1, 2, 0], [1, 3, 4]])
        mask = src != 0
        tgt_in = np.array([[1, 3, 4], [1, 4, 5]])
        with recording():
            backward(fused_loss(model, src, mask, tgt_in, tgt_in, batch, DropNetSample.fixed(1, 0.5)))
        assert all(p.grad is None for p in provider.parameters())
        assert all(not p.requires_grad for p in provider.parameters())
        assert all(p.grad is not None for n, p in model.named_parameters() if "provider_attn" in n)
