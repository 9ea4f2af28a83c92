"""A small reverse-mode autodiff engine over numpy arrays."""
from .ops import (
    add,
    bce_with_logits,
    bilinear_resize,
    clip,
    concat_channels,
    conv2d,
    deconv2d,
    maxpool2d,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    smooth_l1,
    sum_all,
)
from .params import CheckpointError, ParamStore, adam_step, sgd_step
from .tensor import Tensor

__all__ = [
    "Tensor",
    "ParamStore",
    "CheckpointError",
    "sgd_step",
    "adam_step",
    "add",
    "mul",
    "scale",
    "sum_all",
    "mean_all",
    "reshape",
    "relu",
    "sigmoid",
    "clip",
    "concat_channels",
    "conv2d",
    "deconv2d",
    "maxpool2d",
    "bilinear_resize",
    "bce_with_logits",
    "smooth_l1",
]
