"""Dense-tensor numerics: reverse-mode autodiff, Adam, seeded rng, checkpoints."""

from .optim import Adam, AdamState, adam_step
from .rng import Rng
from .serial import load_checkpoint, save_checkpoint
from .tensor import (
    DimensionError,
    NumericError,
    Tape,
    Tensor,
    add,
    add_scalar,
    affine,
    avg_pool2d,
    backward,
    bce_loss,
    clamp_passthrough,
    concat,
    conv2d,
    conv_transpose2d,
    debug_checks_enabled,
    elementwise,
    exp,
    layer_norm,
    linear,
    mean_all,
    minimum,
    mse_loss,
    mul,
    narrow,
    no_grad,
    relu,
    reshape,
    scale,
    set_debug_checks,
    sigmoid,
    sub,
    sum_all,
    tanh,
)
from . import kernels

__all__ = [
    "Adam", "AdamState", "adam_step", "Rng", "load_checkpoint", "save_checkpoint",
    "DimensionError", "NumericError", "Tape", "Tensor", "add", "add_scalar",
    "affine", "avg_pool2d", "backward", "bce_loss", "clamp_passthrough", "concat",
    "conv2d", "conv_transpose2d", "debug_checks_enabled", "elementwise", "exp",
    "layer_norm", "linear", "mean_all", "minimum", "mse_loss", "mul", "narrow",
    "no_grad", "relu", "reshape", "scale", "set_debug_checks", "sigmoid", "sub",
    "sum_all", "tanh", "kernels",
]
