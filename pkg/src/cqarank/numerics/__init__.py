from .tensor import (
    Tensor,
    add,
    clamp_min,
    concat,
    default_dtype,
    exp,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    mul,
    narrow,
    no_grad,
    pair_concat,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    set_default_dtype,
    set_strict,
    sigmoid,
    softmax,
    take,
    take_rows,
    transpose,
)
from .layers import BatchNorm1d, Conv1d, Linear, batchnorm_train, conv1d, dropout, maxpool1d
from .optim import Adam, AdamState, adam_step, learning_rate
from .gradcheck import gradcheck

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm1d",
    "Conv1d",
    "Linear",
    "Tensor",
    "adam_step",
    "add",
    "batchnorm_train",
    "clamp_min",
    "concat",
    "conv1d",
    "default_dtype",
    "dropout",
    "exp",
    "gradcheck",
    "is_grad_enabled",
    "learning_rate",
    "log",
    "log_softmax",
    "matmul",
    "maxpool1d",
    "mul",
    "narrow",
    "no_grad",
    "pair_concat",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "set_default_dtype",
    "set_strict",
    "sigmoid",
    "softmax",
    "take",
    "take_rows",
    "transpose",
]
