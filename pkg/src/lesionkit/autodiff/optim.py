"""SGD with momentum and a step-decay learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor


@dataclass
class OptimizerConfig:
    base_lr: float = 0.004
    momentum: float = 0.9
    epochs: int = 8
    decay_epochs: tuple = (4, 6)
    decay_factor: float = 0.1

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.decay_factor <= 0:
            raise ConfigError("decay_factor must be positive")
        de = tuple(self.decay_epochs)
        if any(b <= a for a, b in zip(de, de[1:])):
            raise ConfigError("decay_epochs must be strictly increasing")
        if any(not 0 <= d < self.epochs for d in de):
            raise ConfigError("decay_epochs must lie within [0, epochs)")
        self.decay_epochs = de

    def learning_rate(self, epoch):
        passed = sum(1 for d in self.decay_epochs if epoch >= d)
        return self.base_lr * self.decay_factor ** passed


class Parameter:
    """A learnable tensor plus its momentum buffer."""

    __slots__ = ("name", "tensor", "momentum", "learnable")

    def __init__(self, name, data, learnable=True):
        self.name = name
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=learnable)
        self.momentum = np.zeros_like(self.tensor.data)
        self.learnable = learnable

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None


def sgd_step(params, config, epoch, lr_scale=1.0):
    """v <- momentum*v + g;  p <- p - lr(epoch)*v.

    lr_scale multiplies the scheduled rate (used for warmup ramps).
    """
    lr = config.learning_rate(epoch) * lr_scale
    for p in params:
        if not p.learnable:
            continue
        if p.tensor.grad is None:
            raise ValueError(f"sgd_step: parameter {p.name!r} has no gradient")
        p.momentum *= config.momentum
        p.momentum += p.tensor.grad
        p.tensor.data = p.tensor.data - lr * p.momentum


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.learnable and p.tensor.grad is not None:
            total += float((p.tensor.grad ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.learnable and p.tensor.grad is not None:
                p.tensor.grad = p.tensor.grad * scale
    return norm


def zero_grads(params):
    for p in params:
        p.zero_grad()
