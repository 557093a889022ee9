import pytest

from src.config import (
    DecodeConfig,
    ExperimentConfig,
    FusedModelConfig,
    apply_overrides,
    build_config,
    dump_config,
    load_config,
    parse_pairs,
    save_config,
)
from src.errors import ConfigError
from src.model.wiring import resolve_wiring


class TestParsePairs:
    def test_comments_and_blanks(self):
        pairs = parse_pairs(["# run", "", "  seed = 4 ", "model.variant=full+x=y"])
        assert pairs == {"seed": "4", "model.variant": "full+x=y"}

    @pytest.mark.parametrize("line", ["seed", "=4"])
    def test_malformed_lines(self, line):
        with pytest.raises(ConfigError, match="<config>:1"):
            parse_pairs([line])


class TestBuildConfig:
    def test_defaults(self):
        config = build_config({})
        assert config == ExperimentConfig()
        assert config.model.p_net == 1.0
        assert config.train.patience == 5

    def test_values_are_coerced(self):
        config = build_config({"model.p_net": "0.4", "train.until_convergence": "false", "seed": "9"})
        assert config.model.p_net == 0.4
        assert config.train.until_convergence is False
        assert config.seed == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="model.depth"):
            build_config({"model.depth": "3"})

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError, match="p_net"):
            build_config({"model.p_net": "1.5"})

    def test_provider_width_must_match(self):
        with pytest.raises(ConfigError, match="provider_dim"):
            build_config({"model.provider_dim": "16", "provider.d_model": "32"})

    def test_nmt_encoder_width_is_free(self):
        config = build_config({"model.provider_dim": "16", "provider.kind": "nmt_encoder"})
        assert config.model.provider_dim == 16

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError, match="divisible"):
            build_config({"model.heads": "3"})


class TestPersistence:
    def test_dump_and_load_round_trip(self, tmp_path):
        config = apply_overrides(ExperimentConfig(), ["model.variant=stacked_decoder+drop_enc_attnB", "train.max_lr=0.001"])
        path = save_config(config, str(tmp_path / "config.snapshot"))
        assert load_config(path) == config

    def test_dump_is_sorted_key_value_lines(self):
        lines = dump_config(ExperimentConfig()).splitlines()
        assert lines == sorted(lines)
        assert "model.attention_scaling=true" in lines
        assert "decode.beam=5" in lines

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "missing.cfg"))

    def test_overrides_apply_on_top(self, tiny_config):
        config = apply_overrides(tiny_config, ["decode.alpha=0.6"])
        assert config.decode.alpha == 0.6
        assert config.model.d_model == tiny_config.model.d_model == 8

    def test_override_of_unknown_key(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["decode.width=3"])


class TestVariants:
    @pytest.mark.parametrize(
        "variant, enc, dec, embed",
        [
            ("full", "attn", "parallel", "words"),
            ("no_provider_baseline", None, None, "words"),
            ("embedding_feed", None, None, "provider"),
            ("linear_feed", "linear", "parallel", "words"),
            ("drop_enc_attnB", None, "parallel", "words"),
            ("drop_dec_attnB", "attn", None, "words"),
            ("stacked_decoder", "attn", "stacked", "words"),
            ("stacked_decoder+drop_enc_attnB", None, "stacked", "words"),
            ("linear_feed+drop_dec_attnB", "linear", None, "words"),
        ],
    )
    def test_wiring(self, variant, enc, dec, embed):
        wiring = resolve_wiring(variant)
        assert (wiring.enc_branch, wiring.dec_branch, wiring.enc_embed) == (enc, dec, embed)

    @pytest.mark.parametrize(
        "variant",
        [
            "bogus",
            "full+stacked_decoder",
            "stacked_decoder+stacked_decoder",
            "stacked_decoder+drop_dec_attnB",
            "linear_feed+drop_enc_attnB",
            "drop_enc_attnB+drop_dec_attnB",
        ],
    )
    def test_rejected_combinations(self, variant):
        with pytest.raises(ConfigError):
            resolve_wiring(variant)

    def test_model_config_validates_the_variant(self):
        with pytest.raises(ValueError):
            FusedModelConfig(variant="full+embedding_feed")


class TestDecodeConfig:
    def test_default_matches_preset(self):
        assert DecodeConfig() == DecodeConfig.preset("default")
