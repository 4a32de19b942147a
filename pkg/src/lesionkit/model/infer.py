"""Inference: NMS, thresholding, mask pasting, measurement estimation."""

from dataclasses import dataclass

import numpy as np

from ..autodiff import kernels
from ..geometry import estimate_recist, mask_to_contour
from . import anchors as anchor_lib


@dataclass
class LesionPrediction:
    box: tuple
    score: float  # refined when the refinement layer is on
    score_unrefined: float
    tag_scores: np.ndarray
    tag_scores_unrefined: np.ndarray
    mask_probs: np.ndarray  # [out, out] on the box grid
    mask: np.ndarray  # bool canvas [H, W]
    measurement: object  # RecistMeasurement or None when the mask is empty


def paste_mask(mask_probs, box, extent, threshold=0.5):
    """Resize box-grid probabilities onto the image canvas and binarize."""
    h, w = extent
    x1 = int(np.floor(max(box[0], 0)))
    y1 = int(np.floor(max(box[1], 0)))
    x2 = int(np.ceil(min(box[2], w)))
    y2 = int(np.ceil(min(box[3], h)))
    canvas = np.zeros((h, w), dtype=bool)
    if x2 - x1 < 1 or y2 - y1 < 1:
        return canvas
    resized = kernels.bilinear_resize_forward(
        mask_probs[None, None].astype(np.float64), y2 - y1, x2 - x1
    )[0, 0]
    canvas[y1:y2, x1:x2] = resized >= threshold
    return canvas


def predictions_for_sample(net, sample, score_threshold=None):
    """Run the full pipeline on one sample and return kept predictions."""
    cfg = net.head_cfg
    thr = cfg.score_threshold if score_threshold is None else score_threshold
    raw = net.raw_detections(sample)
    boxes, scores = raw["boxes"], raw["scores"]
    if len(boxes) == 0:
        return []
    keep = anchor_lib.nms(boxes, scores, cfg.test_nms_iou)
    keep = keep[scores[keep] >= thr]
    if len(keep) == 0:
        return []
    masks = net.mask_probabilities(raw["fm3"], boxes[keep])
    preds = []
    for i, k in enumerate(keep):
        canvas = paste_mask(masks[i], boxes[k], sample.image_extent)
        measurement = None
        if canvas.any():
            contour = mask_to_contour(canvas)
            if len(contour) >= 3:
                measurement = estimate_recist(contour, spacing_mm=sample.spacing_mm)
        preds.append(
            LesionPrediction(
                box=tuple(float(v) for v in boxes[k]),
                score=float(scores[k]),
                score_unrefined=float(raw["scores_unrefined"][k]),
                tag_scores=raw["tag_scores"][k].copy(),
                tag_scores_unrefined=raw["tag_scores_unrefined"][k].copy(),
                mask_probs=masks[i],
                mask=canvas,
                measurement=measurement,
            )
        )
    return preds
