# Configuration constants and models for the fused translation experiments
import os
from typing import Any, Dict, Iterable, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import ConfigError

# Optimizer / schedule defaults (inverse_sqrt, Adam)
MAX_LR = 0.0005
WARMUP_INIT_LR = 1e-7
WARMUP_UPDATES = 4000
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.0001

# Beam presets: name -> (width, length penalty alpha)
BEAM_PRESETS = {
    "default": (5, 1.0),
    "wmt": (4, 0.6),
}

DROPNET_SWEEP = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

ABLATION_ROWS = (
    "full",
    "random_init",
    "linear_feed",
    "drop_enc_attnB",
    "drop_dec_attnB",
    "embedding_feed",
    "stacked_decoder",
    "no_provider_baseline",
    "random_provider",
    "nmt_encoder_provider",
)

# Special tokens
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
CLS, SEP, MASK = "[CLS]", "[SEP]", "[MASK]"
PIECE_PAD, PIECE_UNK = "[PAD]", "[UNK]"
CONTINUATION = "##"

# Run directory layout
CONFIG_SNAPSHOT = "config.snapshot"
TRAIN_LOG = "train_log.csv"
METRICS_FILE = "metrics.json"
PROVIDER_FILE = "provider.ckpt"
STAGE1_CHECKPOINT = "stage1.ckpt"
STAGE2_CHECKPOINT = "stage2.ckpt"
TASK_SPEC_FILE = "task.spec"

LOG_LEVEL_ENV = "FUSED_NMT_LOG_LEVEL"

VARIANTS = (
    "full",
    "no_provider_baseline",
    "embedding_feed",
    "linear_feed",
    "drop_enc_attnB",
    "drop_dec_attnB",
    "stacked_decoder",
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FusedModelConfig(_Strict):
    layers: int = Field(default=2, ge=1, description="Layer count L for both stacks")
    d_model: int = Field(default=32, ge=2)
    d_ff: int = Field(default=64, ge=1)
    heads: int = Field(default=1, ge=1)
    src_vocab: int = Field(default=0, ge=0, description="Filled from the source vocabulary when 0")
    tgt_vocab: int = Field(default=0, ge=0, description="Filled from the target vocabulary when 0")
    provider_vocab: int = Field(default=0, ge=0, description="Informational; the provider owns its tokenizer")
    provider_dim: int = Field(default=32, ge=1, description="d_B, width of the provider states")
    p_net: float = Field(default=1.0, ge=0.0, le=1.0)
    variant: str = Field(default="full", description="One variant name, or several joined with '+'")
    attention_scaling: bool = True
    dropout: float = Field(default=0.3, ge=0.0, lt=1.0)
    tie_embeddings: bool = False
    linear_feed_operand: Literal["provider", "printed"] = "provider"
    shared_dropnet_draws: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        # Resolving the wiring validates the variant combination.
        from src.model.wiring import resolve_wiring
        resolve_wiring(self.variant)
        return self


class ProviderConfig(_Strict):
    kind: Literal["pretrained", "random_frozen", "nmt_encoder"] = "pretrained"
    mode: Literal["sentence", "document"] = "sentence"
    layers: int = Field(default=4, ge=1)
    d_model: int = Field(default=32, ge=2)
    heads: int = Field(default=2, ge=1)
    d_ff: int = Field(default=64, ge=1)
    pretrain_steps: int = Field(default=1500, ge=0)
    batch_size: int = Field(default=32, ge=1)
    mask_prob: float = Field(default=0.15, gt=0.0, lt=1.0)
    max_lr: float = Field(default=2e-3, gt=0.0)
    warmup_updates: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.d_model % self.heads:
            raise ValueError(f"provider d_model={self.d_model} is not divisible by heads={self.heads}")
        return self


class SyntheticTaskSpec(_Strict):
    task: Literal["copy", "reverse", "substitute", "context_disambiguation"] = "copy"
    vocab_size: int = Field(default=64, ge=4, le=169, description="Lexicon size; 13 x 13 twin-letter words at most")
    min_len: int = Field(default=3, ge=1)
    max_len: int = Field(default=12, ge=1)
    train_size: int = Field(default=10000, ge=1)
    valid_size: int = Field(default=1000, ge=1)
    test_size: int = Field(default=1000, ge=1)
    seed: int = 1

    @model_validator(mode="after")
    def _check(self):
        if self.min_len > self.max_len:
            raise ValueError(f"length range is inverted: min_len={self.min_len} > max_len={self.max_len}")
        return self


class TrainConfig(_Strict):
    init: Literal["warm", "random"] = Field(default="warm", description="warm = two-stage protocol")
    max_steps: int = Field(default=2000, ge=1)
    stage1_max_steps: int = Field(default=2000, ge=1)
    until_convergence: bool = True
    patience: int = Field(default=5, ge=1)
    eval_interval: int = Field(default=100, ge=1)
    log_interval: int = Field(default=10, ge=1)
    batch_tokens: int = Field(default=512, ge=1)
    accumulate: int = Field(default=1, ge=1)
    label_smoothing: float = Field(default=0.1, ge=0.0, lt=1.0)
    max_lr: float = Field(default=MAX_LR, gt=0.0)
    warmup_init_lr: float = Field(default=WARMUP_INIT_LR, ge=0.0)
    warmup_updates: int = Field(default=WARMUP_UPDATES, ge=1)
    beta1: float = Field(default=ADAM_BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=ADAM_BETA2, ge=0.0, lt=1.0)
    eps: float = Field(default=ADAM_EPS, gt=0.0)
    weight_decay: float = Field(default=WEIGHT_DECAY, ge=0.0)
    continue_schedule: bool = False
    valid_decode_size: int = Field(default=200, ge=1)


class DecodeConfig(_Strict):
    beam: int = Field(default=BEAM_PRESETS["default"][0], ge=1)
    alpha: float = Field(default=BEAM_PRESETS["default"][1], ge=0.0)
    max_len_offset: int = Field(default=5, ge=1)
    split: Literal["train", "valid", "test"] = "test"

    @classmethod
    def preset(cls, name: str) -> "DecodeConfig":
        if name not in BEAM_PRESETS:
            raise ConfigError(f"unknown beam preset '{name}', expected one of {sorted(BEAM_PRESETS)}")
        beam, alpha = BEAM_PRESETS[name]
        return cls(beam=beam, alpha=alpha)


class ExperimentConfig(_Strict):
    model: FusedModelConfig = Field(default_factory=FusedModelConfig)
    provider: ProviderConfig = Field(default_factory=ProviderConfig)
    task: SyntheticTaskSpec = Field(default_factory=SyntheticTaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    output_dir: str = "runs/default"
    seed: int = 1

    @model_validator(mode="after")
    def _check(self):
        if self.model.provider_dim != self.provider.d_model and self.provider.kind != "nmt_encoder":
            raise ValueError(
                f"model.provider_dim={self.model.provider_dim} does not match provider.d_model={self.provider.d_model}"
            )
        return self


# --- key=value persistence ---

def _flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _nest(flat: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key '{key}' conflicts with scalar '{part}'")
            node = child
        node[parts[-1]] = value
    return nested


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """Parse `key=value` lines, ignoring blanks and `#` comments."""
    pairs: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got '{line}'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{number}: empty key")
        pairs[key] = value.strip()
    return pairs


def build_config(pairs: Dict[str, str], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Validate flat pairs on top of `base` (defaults when None)."""
    data = _flatten(base.model_dump()) if base is not None else {}
    data.update(pairs)
    try:
        return ExperimentConfig.model_validate(_nest(data))
    except ValidationError as e:
        raise ConfigError(_describe_validation_error(e)) from e
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _describe_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item.get("loc", ()))
        parts.append(f"{location}: {item.get('msg')}")
    return "; ".join(parts)


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} not found")
    with open(path, "r") as f:
        return build_config(parse_pairs(f, source=path))


def apply_overrides(config: ExperimentConfig, overrides: List[str]) -> ExperimentConfig:
    """Apply `--set key=value` overrides; unknown keys are rejected."""
    return build_config(parse_pairs(overrides, source="--set"), base=config)


def dump_config(config: ExperimentConfig) -> str:
    flat = _flatten(config.model_dump())
    return "\n".join(f"{key}={_format_value(flat[key])}" for key in sorted(flat)) + "\n"


def save_config(config: ExperimentConfig, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(dump_config(config))
    return path


def dump_task_spec(spec: SyntheticTaskSpec) -> str:
    data = spec.model_dump()
    return "\n".join(f"{key}={_format_value(data[key])}" for key in sorted(data)) + "\n"


def load_task_spec(path: str) -> SyntheticTaskSpec:
    with open(path, "r") as f:
        pairs = parse_pairs(f, source=path)
    try:
        return SyntheticTaskSpec.model_validate(pairs)
    except ValidationError as e:
        raise ConfigError(_describe_validation_error(e)) from e
