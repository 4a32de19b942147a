"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import KERNEL_BACKEND
from .optim import OptimizerConfig, Parameter, clip_gradients, sgd_step, zero_grads
from .tensor import Tensor, as_tensor, backward, constant

from . import ops

__all__ = [
    "KERNEL_BACKEND",
    "OptimizerConfig",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "clip_gradients",
    "constant",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
    "sgd_step",
    "zero_grads",
]
