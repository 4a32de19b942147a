"""Training-time augmentation: resize, translate, and slice-shift."""

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from . import preprocess


@dataclass
class AugmentConfig:
    enabled: bool = True
    scale_range: tuple = (0.8, 1.2)
    translate_px: int = 8
    slice_shift: bool = True
    max_retries: int = 5


def _resize_stack(stack, ratio):
    if ratio == 1.0:
        return stack
    return np.stack([preprocess.resample_plane(p, ratio, ratio) for p in stack])


def _translate_plane_stack(stack, tx, ty):
    if tx == 0 and ty == 0:
        return stack
    out = np.zeros_like(stack)
    h, w = stack.shape[-2:]
    src_y = slice(max(0, -ty), min(h, h - ty))
    src_x = slice(max(0, -tx), min(w, w - tx))
    dst_y = slice(max(0, ty), min(h, h + ty))
    dst_x = slice(max(0, tx), min(w, w + tx))
    out[..., dst_y, dst_x] = stack[..., src_y, src_x]
    return out


def max_slice_shift(records, spacing_mm, interval_mm):
    """Half of the smallest lesion short diameter, converted to slices."""
    if not records:
        return 0
    half_mm = min(r.measurement.short_len_px for r in records) / 2.0 * spacing_mm
    return int(np.floor(half_mm / interval_mm))


def _boxes_inside(boxes, extent):
    h, w = extent
    boxes = np.asarray(boxes).reshape(-1, 4)
    return bool(np.all((boxes[:, 2] > 0) & (boxes[:, 0] < w)
                       & (boxes[:, 3] > 0) & (boxes[:, 1] < h)))


def augment_sample(volume_stack, key_slice, records, rng, cfg):
    """Draw one augmentation and apply it consistently to pixels and targets.

    Draw order per attempt: scale ratio, x translation, y translation,
    slice shift. A draw that pushes every part of some lesion off the
    canvas is rejected and redrawn (up to cfg.max_retries, then None).
    Returns (nine_slices, transformed_records) or None for a skipped sample.
    """
    d = volume_stack.shape[0]
    spacing = records[0].spacing_mm if records else 1.0
    interval = records[0].interval_mm if records else 1.0
    shift_cap = max_slice_shift(records, spacing, interval) if cfg.slice_shift else 0

    for _ in range(cfg.max_retries):
        ratio = float(rng.uniform(*cfg.scale_range))
        tx = int(rng.integers(-cfg.translate_px, cfg.translate_px + 1))
        ty = int(rng.integers(-cfg.translate_px, cfg.translate_px + 1))
        shift = int(rng.integers(-shift_cap, shift_cap + 1)) if shift_cap else 0

        k = int(np.clip(key_slice + shift, 0, d - 1))
        nine = preprocess.extract_slices(volume_stack, k)
        nine = _resize_stack(nine, ratio)
        nine = _translate_plane_stack(nine, tx, ty)

        moved = [r.transformed(scale_xy=ratio, offset_xy=(tx, ty)) for r in records]
        if _boxes_inside([r.bbox for r in moved], nine.shape[-2:]):
            return nine, moved
    return None
