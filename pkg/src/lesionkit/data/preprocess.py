"""Preprocessing chain: window -> resample -> clip borders -> extract.

The chain is order-fixed. Applying it to its own output is the identity:
after one pass the spacing is canonical and black borders are gone.
"""

import numpy as np

from ..errors import DataError

TARGET_INPLANE_MM = 0.8
TARGET_INTERVAL_MM = 2.0
BLACK_BORDER_MAX = 5.0  # windowed units, about -944 HU
SLICES_BEFORE_AFTER = 4  # 9-slice context window
IMAGES_PER_SAMPLE = 3


def hu_window(hu):
    """Map HU linearly onto [0, 255] over the -1024..3071 window, clamped."""
    hu = np.asarray(hu, dtype=np.float64)
    return np.clip(255.0 * (hu + 1024.0) / 4095.0, 0.0, 255.0)


def resample_plane(plane, scale_y, scale_x):
    """Bilinear in-plane resample; destination pixel j samples source j/scale.

    Origin-aligned so annotation coordinates transform as x' = x * scale.
    Source positions are edge-clamped.
    """
    if scale_y == 1.0 and scale_x == 1.0:
        return plane
    h, w = plane.shape
    oh = max(1, int(round(h * scale_y)))
    ow = max(1, int(round(w * scale_x)))
    ys = np.minimum(np.arange(oh) / scale_y, h - 1.0)
    xs = np.minimum(np.arange(ow) / scale_x, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = plane[y0[:, None], x0[None, :]] * (1 - tx) + plane[y0[:, None], x1[None, :]] * tx
    bot = plane[y1[:, None], x0[None, :]] * (1 - tx) + plane[y1[:, None], x1[None, :]] * tx
    return top * (1 - ty) + bot * ty


def resample(stack, spacing):
    """Resample [D,H,W] to 0.8 mm/px in-plane and 2 mm slice interval.

    Returns (stack', scales) with scales = (scale_z, scale_y, scale_x);
    annotation coordinates map as x' = x*scale_x, slice' = slice*scale_z.
    Already-canonical input is returned unchanged (bit-equal).
    """
    sz, sy, sx = spacing
    if sz <= 0 or sy <= 0 or sx <= 0:
        raise DataError(f"non-positive spacing {spacing}")
    scale_z = sz / TARGET_INTERVAL_MM
    scale_y = sy / TARGET_INPLANE_MM
    scale_x = sx / TARGET_INPLANE_MM
    stack = np.asarray(stack, dtype=np.float64)
    if scale_z == 1.0 and scale_y == 1.0 and scale_x == 1.0:
        return stack, (1.0, 1.0, 1.0)

    d = stack.shape[0]
    planes = np.stack([resample_plane(stack[k], scale_y, scale_x) for k in range(d)])
    if scale_z == 1.0:
        return planes, (scale_z, scale_y, scale_x)

    od = int(np.floor((d - 1) * scale_z)) + 1
    zs = np.minimum(np.arange(od) / scale_z, d - 1.0)
    z0 = np.floor(zs).astype(np.int64)
    z1 = np.minimum(z0 + 1, d - 1)
    tz = (zs - z0)[:, None, None]
    out = planes[z0] * (1 - tz) + planes[z1] * tz
    return out, (scale_z, scale_y, scale_x)


def clip_black_borders(stack):
    """Drop leading/trailing all-black rows and columns (windowed max < 5).

    Works on [H,W] planes or [D,H,W] stacks (a border is black only if it
    is black in every slice). Returns (clipped, (offset_y, offset_x));
    annotation coordinates shift by -offset.
    """
    arr = np.asarray(stack, dtype=np.float64)
    proj = arr if arr.ndim == 2 else arr.max(axis=0)
    rows = np.nonzero(proj.max(axis=1) >= BLACK_BORDER_MAX)[0]
    cols = np.nonzero(proj.max(axis=0) >= BLACK_BORDER_MAX)[0]
    if rows.size == 0 or cols.size == 0:
        raise DataError("image is fully black")
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    if arr.ndim == 2:
        return arr[y0:y1, x0:x1], (y0, x0)
    return arr[:, y0:y1, x0:x1], (y0, x0)


def extract_slices(stack, key_slice):
    """The 9-slice window [key-4 .. key+4], edge-replicated out of range."""
    d = stack.shape[0]
    if not 0 <= key_slice < d:
        raise DataError(f"key slice {key_slice} outside volume of depth {d}")
    idx = np.clip(
        np.arange(key_slice - SLICES_BEFORE_AFTER, key_slice + SLICES_BEFORE_AFTER + 1),
        0,
        d - 1,
    )
    return stack[idx]


def group_slices(nine):
    """Group 9 slices as 3 consecutive 3-channel images: [3, 3, H, W]."""
    if nine.shape[0] != 3 * IMAGES_PER_SAMPLE:
        raise DataError(f"expected 9 slices, got {nine.shape[0]}")
    return nine.reshape(IMAGES_PER_SAMPLE, 3, *nine.shape[1:])
