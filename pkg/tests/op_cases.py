"""Table of differentiable ops wired for the finite-difference oracle.

Inputs are drawn away from non-differentiable points (relu/abs kinks,
pool ties) so central differences stay valid.
"""

import numpy as np

from lesionkit.autodiff import ops


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return x + np.sign(x) * gap


def _distinct(rng, shape):
    # Distinct values so max-pool argmax is stable under small perturbation.
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.1 + rng.standard_normal(n) * 0.01
    return vals.reshape(shape)


OP_CASES = {
    "add": (lambda rng: [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))],
            lambda t: ops.add(t[0], t[1])),
    "add_broadcast": (lambda rng: [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))],
                      lambda t: ops.add(t[0], t[1])),
    "sub": (lambda rng: [rng.standard_normal((2, 5)), rng.standard_normal((2, 5))],
            lambda t: ops.sub(t[0], t[1])),
    "mul": (lambda rng: [rng.standard_normal((3, 3)), rng.standard_normal((3, 3))],
            lambda t: ops.mul(t[0], t[1])),
    "div": (lambda rng: [rng.standard_normal((3, 3)), _away_from_zero(rng, (3, 3), 0.5)],
            lambda t: ops.div(t[0], t[1])),
    "power": (lambda rng: [rng.uniform(0.5, 2.0, (3, 3))],
              lambda t: ops.power(t[0], 1.7)),
    "exp": (lambda rng: [rng.standard_normal((3, 3))],
            lambda t: ops.exp(t[0])),
    "log": (lambda rng: [rng.uniform(0.2, 3.0, (3, 3))],
            lambda t: ops.log(t[0])),
    "absolute": (lambda rng: [_away_from_zero(rng, (3, 4))],
                 lambda t: ops.absolute(t[0])),
    "clip": (lambda rng: [_away_from_zero(rng, (4, 4), 0.2) * 2.0],
             lambda t: ops.clip(t[0], -1.1, 1.1)),
    "relu": (lambda rng: [_away_from_zero(rng, (4, 4))],
             lambda t: ops.relu(t[0])),
    "sigmoid": (lambda rng: [rng.standard_normal((3, 4)) * 3],
                lambda t: ops.sigmoid(t[0])),
    "log_sigmoid": (lambda rng: [rng.standard_normal((3, 4)) * 5],
                    lambda t: ops.log_sigmoid(t[0])),
    "softplus": (lambda rng: [rng.standard_normal((3, 4)) * 5],
                 lambda t: ops.softplus(t[0])),
    "sum_all": (lambda rng: [rng.standard_normal((2, 3, 4))],
                lambda t: ops.sum_(t[0])),
    "sum_axis": (lambda rng: [rng.standard_normal((2, 3, 4))],
                 lambda t: ops.sum_(t[0], axis=1)),
    "mean": (lambda rng: [rng.standard_normal((3, 5))],
             lambda t: ops.mean(t[0])),
    "reshape": (lambda rng: [rng.standard_normal((2, 6))],
                lambda t: ops.reshape(t[0], (3, 4))),
    "transpose": (lambda rng: [rng.standard_normal((2, 3, 4))],
                  lambda t: ops.transpose(t[0], (2, 0, 1))),
    "concat": (lambda rng: [rng.standard_normal((2, 3)), rng.standard_normal((2, 2))],
               lambda t: ops.concat(t, axis=1)),
    "stack": (lambda rng: [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))],
              lambda t: ops.stack(t)),
    "narrow": (lambda rng: [rng.standard_normal((4, 6))],
               lambda t: ops.narrow(t[0], 1, 2, 3)),
    "take_rows": (lambda rng: [rng.standard_normal((5, 3))],
                  lambda t: ops.take_rows(t[0], [4, 0, 0, 2])),
    "matmul": (lambda rng: [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))],
               lambda t: ops.matmul(t[0], t[1])),
    "linear": (lambda rng: [rng.standard_normal((4, 3)), rng.standard_normal((2, 3)),
                            rng.standard_normal(2)],
               lambda t: ops.linear(t[0], t[1], t[2])),
    "conv2d": (lambda rng: [rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((2, 2, 3, 3)),
                            rng.standard_normal(2)],
               lambda t: ops.conv2d(t[0], t[1], t[2], stride=1, pad=1)),
    "conv2d_strided": (lambda rng: [rng.standard_normal((2, 1, 6, 7)),
                                    rng.standard_normal((2, 1, 3, 3)), rng.standard_normal(2)],
                       lambda t: ops.conv2d(t[0], t[1], t[2], stride=2, pad=1)),
    "max_pool2d": (lambda rng: [_distinct(rng, (1, 2, 6, 6))],
                   lambda t: ops.max_pool2d(t[0], 2, 2)),
    "bilinear_resize_up": (lambda rng: [rng.standard_normal((1, 2, 3, 4))],
                           lambda t: ops.bilinear_resize(t[0], 6, 8)),
    "bilinear_resize_down": (lambda rng: [rng.standard_normal((1, 2, 6, 6))],
                             lambda t: ops.bilinear_resize(t[0], 4, 4)),
    "roi_align": (lambda rng: [rng.standard_normal((2, 8, 8))],
                  lambda t: ops.roi_align(
                      t[0], [[1.0, 1.5, 6.0, 5.5], [-2.0, -1.0, 4.0, 5.0]], 3, 1)),
    "roi_align_strided": (lambda rng: [rng.standard_normal((2, 6, 6))],
                          lambda t: ops.roi_align(t[0], [[2.0, 2.0, 20.0, 16.0]], 4, 4)),
    "zero_interleave": (lambda rng: [rng.standard_normal((1, 2, 3, 3))],
                        lambda t: ops.zero_interleave(t[0], 2)),
}
