from .blocks import (
    Attention,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    add_positions,
    attn,
    dropout,
    embed,
    ffn,
    sinusoidal_positions,
)
from .module import Module, Parameter, init_parameter

__all__ = [
    "Attention",
    "Embedding",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "add_positions",
    "attn",
    "dropout",
    "embed",
    "ffn",
    "init_parameter",
    "sinusoidal_positions",
]
