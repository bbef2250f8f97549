"""Minimal reverse-mode autodiff: tensors, layers, Adam and checkpoints."""
from .checkpoint import CheckpointError, load_parameters, read_manifest, save_parameters
from .core import Parameter, Tensor, as_tensor, backward, zero_grad
from .functional import (
    RELU,
    SIGMOID,
    TANH,
    LeakyReLU,
    activation,
    concat,
    conv,
    conv2d,
    conv3d,
    conv_transpose,
    conv_transpose3d,
    dense,
    leaky_relu,
    log,
    mean,
    mse,
    relu,
    reshape,
    sigmoid,
    tanh,
)
from .functional import sum as tsum
from .gradcheck import grad_check
from .optim import DEFAULT_LR, AdamState, adam_step

__all__ = [
    "AdamState",
    "CheckpointError",
    "DEFAULT_LR",
    "LeakyReLU",
    "Parameter",
    "RELU",
    "SIGMOID",
    "TANH",
    "Tensor",
    "activation",
    "adam_step",
    "as_tensor",
    "backward",
    "concat",
    "conv",
    "conv2d",
    "conv3d",
    "conv_transpose",
    "conv_transpose3d",
    "dense",
    "grad_check",
    "leaky_relu",
    "load_parameters",
    "log",
    "mean",
    "mse",
    "read_manifest",
    "relu",
    "reshape",
    "save_parameters",
    "sigmoid",
    "tanh",
    "tsum",
    "zero_grad",
]
