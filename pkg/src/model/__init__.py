from .dropnet import DropNetSample, combine_eval, combine_train, draw_sample
from .fused import DecoderState, EncoderState, FusedModel, warm_start
from .wiring import Wiring, resolve_wiring

__all__ = [
    "DecoderState",
    "DropNetSample",
    "EncoderState",
    "FusedModel",
    "Wiring",
    "combine_eval",
    "combine_train",
    "draw_sample",
    "resolve_wiring",
    "warm_start",
]
