from .encoder import ContextProvider, masked_piece_accuracy, pretrain_provider
from .output import ProviderBatch, ProviderOutput, collate_provider
from .tokenizer import PieceTokenizer

__all__ = [
    "ContextProvider",
    "PieceTokenizer",
    "ProviderBatch",
    "ProviderOutput",
    "collate_provider",
    "masked_piece_accuracy",
    "pretrain_provider",
]
