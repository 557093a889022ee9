import numpy as np
import pytest

from src.config import ExperimentConfig, FusedModelConfig, apply_overrides
from src.provider.output import ProviderOutput, collate_provider

# Small enough that a whole two-stage run takes seconds.
TINY_RUN = [
    "seed=3",
    "task.task=copy",
    "task.vocab_size=6",
    "task.min_len=2",
    "task.max_len=3",
    "task.train_size=24",
    "task.valid_size=6",
    "task.test_size=6",
    "model.layers=1",
    "model.d_model=8",
    "model.d_ff=8",
    "model.provider_dim=8",
    "model.dropout=0.0",
    "provider.layers=1",
    "provider.d_model=8",
    "provider.heads=1",
    "provider.d_ff=8",
    "provider.pretrain_steps=3",
    "provider.batch_size=4",
    "provider.warmup_updates=2",
    "train.max_steps=4",
    "train.stage1_max_steps=4",
    "train.eval_interval=2",
    "train.log_interval=2",
    "train.batch_tokens=24",
    "train.warmup_updates=10",
    "train.valid_decode_size=4",
    "decode.beam=2",
    "decode.max_len_offset=2",
]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def model_config():
    """Factory for tiny model configs: dropout off, unscaled attention, one head."""
    def make(**overrides) -> FusedModelConfig:
        values = dict(
            layers=1,
            d_model=4,
            d_ff=6,
            heads=1,
            src_vocab=7,
            tgt_vocab=6,
            provider_dim=3,
            dropout=0.0,
            attention_scaling=False,
        )
        values.update(overrides)
        return FusedModelConfig(**values)
    return make


@pytest.fixture
def provider_batch():
    """Factory for random provider batches; span covers the middle of each sequence."""
    def make(rng: np.random.Generator, batch: int, length: int, width: int):
        outputs = [
            ProviderOutput(
                states=rng.normal(size=(length, width)),
                mask=np.ones(length, dtype=bool),
                x_span=(1, length - 1),
            )
            for _ in range(batch)
        ]
        return collate_provider(outputs)
    return make


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return apply_overrides(ExperimentConfig(), TINY_RUN)


@pytest.fixture
def tiny_data(tiny_config):
    from src.data.synthetic import generate
    from src.experiments import prepare_data

    return prepare_data(tiny_config, generate(tiny_config.task))
