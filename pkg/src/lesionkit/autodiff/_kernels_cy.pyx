# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: im2col/col2im, pooling, resizing, ROI sampling.

Interface and arithmetic order match the numpy fallback ``_kernels_np``;
the convolution matmuls themselves happen in BLAS on the caller side.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def conv_out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(cnp.ndarray x_arr, int kh, int kw, int stride, int pad):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n * ho * wo, c * kh * kw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ni, i, j, ci, di, dj, row, sy, sx
    with nogil:
        for ni in range(n):
            for i in range(ho):
                for j in range(wo):
                    row = (ni * ho + i) * wo + j
                    for ci in range(c):
                        for di in range(kh):
                            sy = i * stride + di - pad
                            if sy < 0 or sy >= h:
                                continue
                            for dj in range(kw):
                                sx = j * stride + dj - pad
                                if sx < 0 or sx >= w:
                                    continue
                                out[row, (ci * kh + di) * kw + dj] = x[ni, ci, sy, sx]
    return out_arr


def col2im(cnp.ndarray cols_arr, x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    cdef double[:, ::1] cols = np.ascontiguousarray(cols_arr, dtype=np.float64)
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ni, i, j, ci, di, dj, row, sy, sx
    with nogil:
        for ni in range(n):
            for i in range(ho):
                for j in range(wo):
                    row = (ni * ho + i) * wo + j
                    for ci in range(c):
                        for di in range(kh):
                            sy = i * stride + di - pad
                            if sy < 0 or sy >= h:
                                continue
                            for dj in range(kw):
                                sx = j * stride + dj - pad
                                if sx < 0 or sx >= w:
                                    continue
                                out[ni, ci, sy, sx] += cols[row, (ci * kh + di) * kw + dj]
    return out_arr


def max_pool_forward(cnp.ndarray x_arr, int k, int stride):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    y_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t ni, ci, i, j, di, dj, by, bx
    cdef double best, v
    cdef Py_ssize_t besty, bestx
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        by = i * stride
                        bx = j * stride
                        best = x[ni, ci, by, bx]
                        besty = by
                        bestx = bx
                        for di in range(k):
                            for dj in range(k):
                                v = x[ni, ci, by + di, bx + dj]
                                if v > best:  # first max wins, row-major
                                    best = v
                                    besty = by + di
                                    bestx = bx + dj
                        y[ni, ci, i, j] = best
                        idx[ni, ci, i, j] = ((ni * c + ci) * h + besty) * w + bestx
    return y_arr, idx_arr


def max_pool_backward(cnp.ndarray gy_arr, cnp.ndarray idx_arr, x_shape):
    gx_arr = np.zeros(int(np.prod(x_shape)), dtype=np.float64)
    cdef double[::1] gx = gx_arr
    cdef double[::1] gy = np.ascontiguousarray(gy_arr, dtype=np.float64).ravel()
    cdef long long[::1] idx = np.ascontiguousarray(idx_arr, dtype=np.int64).ravel()
    cdef Py_ssize_t i
    with nogil:
        for i in range(gy.shape[0]):
            gx[idx[i]] += gy[i]
    return gx_arr.reshape(x_shape)


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t hi) nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def bilinear_resize_forward(cnp.ndarray x_arr, int oh, int ow):
    cdef double[:, :, :, ::1] x = np.ascontiguousarray(x_arr, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out_arr = np.empty((n, c, oh, ow), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double sy = h / <double>oh, sx = w / <double>ow
    cdef Py_ssize_t ni, ci, i, j, y0, y1, x0, x1
    cdef double py, px, ty, tx, top, bot
    with nogil:
        for i in range(oh):
            py = (i + 0.5) * sy - 0.5
            y0 = <Py_ssize_t>floor(py)
            ty = py - y0
            y1 = _clampi(y0 + 1, h - 1)
            y0 = _clampi(y0, h - 1)
            for j in range(ow):
                px = (j + 0.5) * sx - 0.5
                x0 = <Py_ssize_t>floor(px)
                tx = px - x0
                x1 = _clampi(x0 + 1, w - 1)
                x0 = _clampi(x0, w - 1)
                for ni in range(n):
                    for ci in range(c):
                        top = x[ni, ci, y0, x0] * (1 - tx) + x[ni, ci, y0, x1] * tx
                        bot = x[ni, ci, y1, x0] * (1 - tx) + x[ni, ci, y1, x1] * tx
                        out[ni, ci, i, j] = top * (1 - ty) + bot * ty
    return out_arr


def bilinear_resize_backward(cnp.ndarray gy_arr, x_shape, int oh, int ow):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef double[:, :, :, ::1] gy = np.ascontiguousarray(gy_arr, dtype=np.float64)
    gx_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double sy = h / <double>oh, sx = w / <double>ow
    cdef Py_ssize_t ni, ci, i, j, y0, y1, x0, x1
    cdef double py, px, ty, tx, g
    with nogil:
        for i in range(oh):
            py = (i + 0.5) * sy - 0.5
            y0 = <Py_ssize_t>floor(py)
            ty = py - y0
            y1 = _clampi(y0 + 1, h - 1)
            y0 = _clampi(y0, h - 1)
            for j in range(ow):
                px = (j + 0.5) * sx - 0.5
                x0 = <Py_ssize_t>floor(px)
                tx = px - x0
                x1 = _clampi(x0 + 1, w - 1)
                x0 = _clampi(x0, w - 1)
                for ni in range(n):
                    for ci in range(c):
                        g = gy[ni, ci, i, j]
                        gx[ni, ci, y0, x0] += g * (1 - ty) * (1 - tx)
                        gx[ni, ci, y0, x1] += g * (1 - ty) * tx
                        gx[ni, ci, y1, x0] += g * ty * (1 - tx)
                        gx[ni, ci, y1, x1] += g * ty * tx
    return gx_arr


def roi_align_forward(cnp.ndarray fm_arr, cnp.ndarray boxes_arr, int out, int stride):
    cdef double[:, :, ::1] fm = np.ascontiguousarray(fm_arr, dtype=np.float64)
    cdef double[:, ::1] boxes = np.ascontiguousarray(boxes_arr, dtype=np.float64)
    cdef Py_ssize_t c = fm.shape[0], h = fm.shape[1], w = fm.shape[2]
    cdef Py_ssize_t nb = boxes.shape[0]
    res_arr = np.zeros((nb, c, out, out), dtype=np.float64)
    cdef double[:, :, :, ::1] res = res_arr
    cdef Py_ssize_t r, ci, i, j, y0, y1, x0, x1
    cdef double bx1, by1, bw, bh, cx, cy, tx, ty, v, w00, w01, w10, w11
    with nogil:
        for r in range(nb):
            bx1 = boxes[r, 0] / stride
            by1 = boxes[r, 1] / stride
            bw = boxes[r, 2] / stride - bx1
            bh = boxes[r, 3] / stride - by1
            for i in range(out):
                cy = by1 + (i + 0.5) * (bh / out) - 0.5
                y0 = <Py_ssize_t>floor(cy)
                ty = cy - y0
                y1 = y0 + 1
                for j in range(out):
                    cx = bx1 + (j + 0.5) * (bw / out) - 0.5
                    x0 = <Py_ssize_t>floor(cx)
                    tx = cx - x0
                    x1 = x0 + 1
                    w00 = (1 - ty) * (1 - tx)
                    w01 = (1 - ty) * tx
                    w10 = ty * (1 - tx)
                    w11 = ty * tx
                    for ci in range(c):
                        v = 0.0
                        if 0 <= y0 < h and 0 <= x0 < w:
                            v += fm[ci, y0, x0] * w00
                        if 0 <= y0 < h and 0 <= x1 < w:
                            v += fm[ci, y0, x1] * w01
                        if 0 <= y1 < h and 0 <= x0 < w:
                            v += fm[ci, y1, x0] * w10
                        if 0 <= y1 < h and 0 <= x1 < w:
                            v += fm[ci, y1, x1] * w11
                        res[r, ci, i, j] = v
    return res_arr


def roi_align_backward(cnp.ndarray gy_arr, cnp.ndarray boxes_arr, int out, int stride, fm_shape):
    cdef double[:, :, :, ::1] gy = np.ascontiguousarray(gy_arr, dtype=np.float64)
    cdef double[:, ::1] boxes = np.ascontiguousarray(boxes_arr, dtype=np.float64)
    cdef Py_ssize_t c = fm_shape[0], h = fm_shape[1], w = fm_shape[2]
    cdef Py_ssize_t nb = boxes.shape[0]
    gfm_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] gfm = gfm_arr
    cdef Py_ssize_t r, ci, i, j, y0, y1, x0, x1
    cdef double bx1, by1, bw, bh, cx, cy, tx, ty, g, w00, w01, w10, w11
    with nogil:
        for r in range(nb):
            bx1 = boxes[r, 0] / stride
            by1 = boxes[r, 1] / stride
            bw = boxes[r, 2] / stride - bx1
            bh = boxes[r, 3] / stride - by1
            for i in range(out):
                cy = by1 + (i + 0.5) * (bh / out) - 0.5
                y0 = <Py_ssize_t>floor(cy)
                ty = cy - y0
                y1 = y0 + 1
                for j in range(out):
                    cx = bx1 + (j + 0.5) * (bw / out) - 0.5
                    x0 = <Py_ssize_t>floor(cx)
                    tx = cx - x0
                    x1 = x0 + 1
                    w00 = (1 - ty) * (1 - tx)
                    w01 = (1 - ty) * tx
                    w10 = ty * (1 - tx)
                    w11 = ty * tx
                    for ci in range(c):
                        g = gy[r, ci, i, j]
                        if 0 <= y0 < h and 0 <= x0 < w:
                            gfm[ci, y0, x0] += g * w00
                        if 0 <= y0 < h and 0 <= x1 < w:
                            gfm[ci, y0, x1] += g * w01
                        if 0 <= y1 < h and 0 <= x0 < w:
                            gfm[ci, y1, x0] += g * w10
                        if 0 <= y1 < h and 0 <= x1 < w:
                            gfm[ci, y1, x1] += g * w11
    return gfm_arr
