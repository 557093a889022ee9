"""Dense float64 tensors with reverse-mode differentiation."""
from .core import (
    ComputationTape,
    Tensor,
    add,
    add_bias,
    backward,
    concat_last,
    constant,
    current_tape,
    exp,
    gather_rows,
    grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean_all,
    mul,
    no_grad,
    pick,
    recording,
    relu,
    reshape,
    scale,
    shift,
    slice_axis,
    slice_last,
    softmax,
    sub,
    sum_all,
    sum_last,
    transpose,
)
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "ComputationTape",
    "GradCheckReport",
    "Tensor",
    "add",
    "add_bias",
    "backward",
    "concat_last",
    "constant",
    "current_tape",
    "exp",
    "gather_rows",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean_all",
    "mul",
    "no_grad",
    "pick",
    "recording",
    "relu",
    "reshape",
    "scale",
    "shift",
    "slice_axis",
    "slice_last",
    "softmax",
    "sub",
    "sum_all",
    "sum_last",
    "transpose",
]
