"""Thin parameter-owning layers on top of the autodiff ops."""

import numpy as np

from ..autodiff import Parameter, ops


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d:
    def __init__(self, name, rng, c_in, c_out, k=3, stride=1, pad=None, init="he"):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        if init == "he":
            w = he_normal(rng, (c_out, c_in, k, k), c_in * k * k)
        elif init == "small":
            w = rng.standard_normal((c_out, c_in, k, k)) * 0.01
        elif init == "zero":
            w = np.zeros((c_out, c_in, k, k))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x):
        return ops.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.pad)

    def params(self):
        return [self.weight, self.bias]


class Linear:
    def __init__(self, name, rng, n_in, n_out, init="he"):
        if init == "he":
            w = he_normal(rng, (n_out, n_in), n_in)
        elif init == "small":
            w = rng.standard_normal((n_out, n_in)) * 0.01
        elif init == "zero":
            w = np.zeros((n_out, n_in))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out))

    def __call__(self, x):
        return ops.linear(x, self.weight.tensor, self.bias.tensor)

    def params(self):
        return [self.weight, self.bias]


class BiasFreeConv2d:
    """3x3/1x1 conv without bias; used in the feature pyramid so that a
    zeroed input stage contributes exactly zero."""

    def __init__(self, name, rng, c_in, c_out, k=1):
        self.pad = k // 2
        w = he_normal(rng, (c_out, c_in, k, k), c_in * k * k)
        self.weight = Parameter(f"{name}.weight", w)
        self._zero_bias = Parameter(f"{name}._zero", np.zeros(c_out), learnable=False)

    def __call__(self, x):
        return ops.conv2d(x, self.weight.tensor, self._zero_bias.tensor, 1, self.pad)

    def params(self):
        return [self.weight]
