"""Anchor generation and box arithmetic (IoU, deltas, NMS, clipping)."""

import numpy as np

PAPER_ANCHOR_SCALES = (16, 24, 32, 48, 96)
ANCHOR_RATIOS = (0.5, 1.0, 2.0)  # width / height

# exp() clamp for decoded sizes, as in the Mask R-CNN lineage
_MAX_DELTA_WH = np.log(1000.0 / 16.0)


def anchor_templates(scales, ratios):
    """(w, h) per anchor: area = scale^2, w/h = ratio."""
    out = []
    for s in scales:
        for r in ratios:
            w = s * np.sqrt(r)
            h = s / np.sqrt(r)
            out.append((w, h))
    return np.array(out)


def generate_anchors(fm_h, fm_w, stride, scales, ratios=ANCHOR_RATIOS):
    """All anchors for a feature map, ordered (template, row, col).

    Anchors are centered at feature-map pixel centers scaled to image
    coordinates: ((j + 0.5) * stride, (i + 0.5) * stride).
    """
    wh = anchor_templates(scales, ratios)
    cx = (np.arange(fm_w) + 0.5) * stride
    cy = (np.arange(fm_h) + 0.5) * stride
    cxg, cyg = np.meshgrid(cx, cy)
    boxes = np.empty((len(wh), fm_h, fm_w, 4))
    boxes[..., 0] = cxg[None] - wh[:, 0, None, None] / 2
    boxes[..., 1] = cyg[None] - wh[:, 1, None, None] / 2
    boxes[..., 2] = cxg[None] + wh[:, 0, None, None] / 2
    boxes[..., 3] = cyg[None] + wh[:, 1, None, None] / 2
    return boxes.reshape(-1, 4)


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU with the continuous-coordinate area convention."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


def encode_deltas(anchors, targets):
    """(dx, dy, dw, dh) mapping each anchor onto its target box."""
    anchors = np.asarray(anchors, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + aw / 2
    ay = anchors[:, 1] + ah / 2
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + tw / 2
    ty = targets[:, 1] + th / 2
    return np.stack(
        [(tx - ax) / aw, (ty - ay) / ah, np.log(tw / aw), np.log(th / ah)], axis=1
    )


def decode_deltas(anchors, deltas):
    anchors = np.asarray(anchors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + aw / 2
    ay = anchors[:, 1] + ah / 2
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    w = aw * np.exp(np.minimum(deltas[:, 2], _MAX_DELTA_WH))
    h = ah * np.exp(np.minimum(deltas[:, 3], _MAX_DELTA_WH))
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def clip_boxes(boxes, extent):
    h, w = extent
    out = np.asarray(boxes, dtype=np.float64).copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0, w)
    out[:, 1::2] = np.clip(out[:, 1::2], 0, h)
    return out


def nms(boxes, scores, iou_threshold):
    """Greedy NMS; ties broken by index so results are deterministic."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = []
    alive = np.ones(len(scores), dtype=bool)
    for idx in order:
        if not alive[idx]:
            continue
        keep.append(int(idx))
        ious = iou_matrix(boxes[idx:idx + 1], boxes[alive])[0]
        suppress = np.nonzero(alive)[0][ious > iou_threshold]
        alive[suppress] = False
        alive[idx] = False
    return np.array(keep, dtype=np.int64)
