from .loss import label_smoothed_nll
from .optim import Adam, InverseSqrtSchedule, OptimizerState, adam_step, lr_at

__all__ = [
    "Adam",
    "InverseSqrtSchedule",
    "OptimizerState",
    "adam_step",
    "label_smoothed_nll",
    "lr_at",
]
