"""Differentiable operations over Tensors.

Forward results are computed with numpy (shape-moving hot loops delegated
to the kernel backend); each op returns a Tensor wired to a gradient
function that maps the output gradient to per-parent gradients.
"""

import numpy as np
from scipy.special import expit

from . import kernels
from .tensor import Tensor, as_tensor


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out, (a, b), grad_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(out, (a, b), grad_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._from_op(out, (a, b), grad_fn)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), grad_fn)


def power(x, p):
    x = as_tensor(x)
    p = float(p)
    out = x.data ** p

    def grad_fn(g):
        return (g * p * x.data ** (p - 1),)

    return Tensor._from_op(out, (x,), grad_fn)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def grad_fn(g):
        return (g * out,)

    return Tensor._from_op(out, (x,), grad_fn)


def log(x):
    x = as_tensor(x)
    out = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return Tensor._from_op(out, (x,), grad_fn)


def absolute(x):
    x = as_tensor(x)
    out = np.abs(x.data)

    def grad_fn(g):
        return (g * np.sign(x.data),)

    return Tensor._from_op(out, (x,), grad_fn)


def clip(x, lo, hi):
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def grad_fn(g):
        return (g * inside,)

    return Tensor._from_op(out, (x,), grad_fn)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = x.data * mask

    def grad_fn(g):
        return (g * mask,)

    return Tensor._from_op(out, (x,), grad_fn)


def sigmoid(x):
    x = as_tensor(x)
    out = expit(x.data)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), grad_fn)


def log_sigmoid(x):
    """log(sigmoid(x)) computed as -log(1 + exp(-x)); stable for large |x|."""
    x = as_tensor(x)
    out = -np.logaddexp(0.0, -x.data)

    def grad_fn(g):
        return (g * expit(-x.data),)

    return Tensor._from_op(out, (x,), grad_fn)


def softplus(x):
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def grad_fn(g):
        return (g * expit(x.data),)

    return Tensor._from_op(out, (x,), grad_fn)


def safe_log_prob(x, eps=0.01):
    """log(x) for probabilities that may stray outside (0, 1].

    Equals log(x) on [eps, 1]. Below eps it continues with the tangent
    line (slope 1/eps), so badly out-of-range values keep a restoring
    gradient instead of being trapped by a hard clip; above 1 it is 0,
    matching cross-entropy's indifference to over-confident scores.
    """
    x = as_tensor(x)
    low = x.data < eps
    clipped = clip(x, eps, 1.0)
    tail = (x - eps) * (low.astype(np.float64) / eps)
    return log(clipped) + tail


# ---------------------------------------------------------------------------
# reductions and shape moves


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), grad_fn)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.data.shape),)

    return Tensor._from_op(out, (x,), grad_fn)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), grad_fn)


def concat(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tuple(xs), grad_fn)


def stack(xs):
    xs = [as_tensor(x) for x in xs]
    out = np.stack([x.data for x in xs], axis=0)

    def grad_fn(g):
        return tuple(g[i] for i in range(len(xs)))

    return Tensor._from_op(out, tuple(xs), grad_fn)


def narrow(x, axis, start, length):
    """Slice ``length`` entries from ``start`` along ``axis``."""
    x = as_tensor(x)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = x.data[index]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return Tensor._from_op(out.copy(), (x,), grad_fn)


def take_rows(x, idx):
    """Gather rows along axis 0; duplicate indices accumulate in backward."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor._from_op(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(out, (a, b), grad_fn)


def linear(x, w, b):
    """x[N,F] @ w[O,F]^T + b[O]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"linear: input features {x.data.shape[1]} != weight features {w.data.shape[1]}"
        )
    out = x.data @ w.data.T + b.data

    def grad_fn(g):
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return Tensor._from_op(out, (x, w, b), grad_fn)


# ---------------------------------------------------------------------------
# spatial ops (kernel-backed)


def conv2d(x, w, b, stride=1, pad=0):
    """2D cross-correlation of [N,C,H,W] with [K,C,kh,kw] plus bias [K]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    n, c, h, wd = x.data.shape
    k, cw, kh, kw = w.data.shape
    if c != cw:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {cw}")
    ho = kernels.conv_out_extent(h, kh, stride, pad)
    wo = kernels.conv_out_extent(wd, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: non-positive output extent {ho}x{wo}")

    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    w2 = w.data.reshape(k, c * kh * kw)
    out = (cols @ w2.T).reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out) + b.data[None, :, None, None]

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, k)
        gw = (g2.T @ cols).reshape(w.data.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = g2 @ w2
        gx = kernels.col2im(gcols, x.data.shape, kh, kw, stride, pad)
        return gx, gw, gb

    return Tensor._from_op(out, (x, w, b), grad_fn)


def max_pool2d(x, k, stride):
    x = as_tensor(x)
    y, idx = kernels.max_pool_forward(x.data, k, stride)

    def grad_fn(g):
        return (kernels.max_pool_backward(g, idx, x.data.shape),)

    return Tensor._from_op(y, (x,), grad_fn)


def concat_channels(xs):
    return concat(xs, axis=1)


def bilinear_resize(x, out_h, out_w):
    """Resize [N,C,H,W] with centers at (i+0.5)*scale-0.5, borders replicated."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: output extents must be >= 1")
    if x.data.shape[2:] == (out_h, out_w):
        return reshape(x, x.data.shape)  # identity, but still on the tape
    y = kernels.bilinear_resize_forward(x.data, out_h, out_w)

    def grad_fn(g):
        return (kernels.bilinear_resize_backward(g, x.data.shape, out_h, out_w),)

    return Tensor._from_op(y, (x,), grad_fn)


def roi_align(fm, boxes, out, fm_stride):
    """Crop out x out grids from fm[C,H,W] for boxes in image coordinates.

    One bilinear tap per output bin, taken at the bin center scaled by
    1/fm_stride. Taps outside the map read zero. Pixel centers sit at
    half-integer image coordinates.
    """
    fm = as_tensor(fm)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if np.any(boxes[:, 2] <= boxes[:, 0]) or np.any(boxes[:, 3] <= boxes[:, 1]):
        raise ValueError("roi_align: degenerate box with non-positive extent")
    y = kernels.roi_align_forward(fm.data, boxes, out, fm_stride)

    def grad_fn(g):
        return (kernels.roi_align_backward(g, boxes, out, fm_stride, fm.data.shape),)

    return Tensor._from_op(y, (fm,), grad_fn)


def zero_interleave(x, stride):
    """Upsample [N,C,H,W] to [N,C,H*s,W*s] placing values at (i*s, j*s)."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    out = np.zeros((n, c, h * stride, w * stride), dtype=np.float64)
    out[:, :, ::stride, ::stride] = x.data

    def grad_fn(g):
        return (np.ascontiguousarray(g[:, :, ::stride, ::stride]),)

    return Tensor._from_op(out, (x,), grad_fn)
