"""Pure-numpy fallback for the hot kernels.

Mirrors the interface of the compiled extension ``_kernels_cy``. Data
movement (im2col/col2im, pooling, resampling) is done with strided views
and slice arithmetic; the heavy matrix products stay in BLAS either way,
so both backends produce identical convolution results.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Unfold [N,C,H,W] into rows of [N*Ho*Wo, C*kh*kw], zero-padded."""
    n, c, h, w = x.shape
    ho = conv_out_extent(h, kh, stride, pad)
    wo = conv_out_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: [N, C, Ho, Wo, kh, kw] -> rows ordered (n, i, j), cols (c, di, dj)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add unfolded rows back onto the image."""
    n, c, h, w = x_shape
    ho = conv_out_extent(h, kh, stride, pad)
    wo = conv_out_extent(w, kw, stride, pad)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    cols6 = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for di in range(kh):
        for dj in range(kw):
            out[:, :, di:di + ho * stride:stride, dj:dj + wo * stride:stride] += cols6[:, :, di, dj]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def max_pool_forward(x, k, stride):
    """Max pool [N,C,H,W]; returns values and flat argmax indices into x."""
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, k * k)
    local = flat.argmax(axis=-1)  # first max wins, row-major in the window
    y = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    di, dj = local // k, local % k
    ii = np.arange(ho)[None, None, :, None] * stride + di
    jj = np.arange(wo)[None, None, None, :] * stride + dj
    base = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
    idx = base + ii * w + jj
    return np.ascontiguousarray(y), np.ascontiguousarray(idx.astype(np.int64))


def max_pool_backward(gy, idx, x_shape):
    gx = np.zeros(int(np.prod(x_shape)), dtype=np.float64)
    np.add.at(gx, idx.ravel(), gy.ravel())
    return gx.reshape(x_shape)


def _resize_axis_coords(out_size, in_size):
    # Sample centers at (i + 0.5) * scale - 0.5; indices edge-clamped so a
    # constant map stays constant and borders replicate.
    pos = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    lo_c = np.clip(lo, 0, in_size - 1)
    hi_c = np.clip(lo + 1, 0, in_size - 1)
    return lo_c, hi_c, frac


def bilinear_resize_forward(x, oh, ow):
    n, c, h, w = x.shape
    y0, y1, ty = _resize_axis_coords(oh, h)
    x0, x1, tx = _resize_axis_coords(ow, w)
    ty = ty[:, None]
    tx = tx[None, :]
    top = x[:, :, y0[:, None], x0[None, :]] * (1 - tx) + x[:, :, y0[:, None], x1[None, :]] * tx
    bot = x[:, :, y1[:, None], x0[None, :]] * (1 - tx) + x[:, :, y1[:, None], x1[None, :]] * tx
    return top * (1 - ty) + bot * ty


def bilinear_resize_backward(gy, x_shape, oh, ow):
    n, c, h, w = x_shape
    y0, y1, ty = _resize_axis_coords(oh, h)
    x0, x1, tx = _resize_axis_coords(ow, w)
    ty = ty[:, None]
    tx = tx[None, :]
    gx = np.zeros(x_shape, dtype=np.float64)
    for yi, xi, wgt in (
        (y0, x0, (1 - ty) * (1 - tx)),
        (y0, x1, (1 - ty) * tx),
        (y1, x0, ty * (1 - tx)),
        (y1, x1, ty * tx),
    ):
        np.add.at(gx, (slice(None), slice(None), yi[:, None], xi[None, :]), gy * wgt)
    return gx


def _roi_sample_grid(box, out, stride, h, w):
    x1, y1, x2, y2 = (float(v) / stride for v in box)
    bw = x2 - x1
    bh = y2 - y1
    xs = x1 + (np.arange(out) + 0.5) * (bw / out) - 0.5
    ys = y1 + (np.arange(out) + 0.5) * (bh / out) - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    tx = xs - x0
    ty = ys - y0
    corners = []
    for yi, wy in ((y0, 1 - ty), (y0 + 1, ty)):
        for xi, wx in ((x0, 1 - tx), (x0 + 1, tx)):
            valid = ((yi >= 0) & (yi < h))[:, None] * ((xi >= 0) & (xi < w))[None, :]
            wgt = wy[:, None] * wx[None, :] * valid  # out-of-bounds taps read zero
            corners.append((np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1), wgt))
    return corners


def roi_align_forward(fm, boxes, out, stride):
    c, h, w = fm.shape
    res = np.zeros((len(boxes), c, out, out), dtype=np.float64)
    for r, box in enumerate(boxes):
        for yi, xi, wgt in _roi_sample_grid(box, out, stride, h, w):
            res[r] += fm[:, yi[:, None], xi[None, :]] * wgt
    return res


def roi_align_backward(gy, boxes, out, stride, fm_shape):
    c, h, w = fm_shape
    gfm = np.zeros(fm_shape, dtype=np.float64)
    for r, box in enumerate(boxes):
        for yi, xi, wgt in _roi_sample_grid(box, out, stride, h, w):
            np.add.at(gfm, (slice(None), yi[:, None], xi[None, :]), gy[r] * wgt)
    return gfm
