"""Kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
pure-numpy fallback is used. Set LESIONKIT_KERNELS=numpy|cython to force a
backend (forcing cython raises if the extension is missing).
"""

import os

_requested = os.environ.get("LESIONKIT_KERNELS", "auto").lower()

if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"LESIONKIT_KERNELS must be auto, cython or numpy, got {_requested!r}")

if _requested == "numpy":
    from . import _kernels_np as _impl

    KERNEL_BACKEND = "numpy"
else:
    try:
        from . import _kernels_cy as _impl  # type: ignore[attr-defined]

        KERNEL_BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from . import _kernels_np as _impl

        KERNEL_BACKEND = "numpy"

conv_out_extent = _impl.conv_out_extent
im2col = _impl.im2col
col2im = _impl.col2im
max_pool_forward = _impl.max_pool_forward
max_pool_backward = _impl.max_pool_backward
bilinear_resize_forward = _impl.bilinear_resize_forward
bilinear_resize_backward = _impl.bilinear_resize_backward
roi_align_forward = _impl.roi_align_forward
roi_align_backward = _impl.roi_align_backward
