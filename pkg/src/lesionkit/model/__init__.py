"""Backbone, heads, score refinement, training and inference."""

from .anchors import (
    ANCHOR_RATIOS,
    PAPER_ANCHOR_SCALES,
    decode_deltas,
    encode_deltas,
    generate_anchors,
    iou_matrix,
    nms,
)
from .backbone import Backbone, BackboneConfig
from .heads import HeadConfig, LossBreakdown, assemble_losses, dice_loss
from .infer import LesionPrediction, paste_mask, predictions_for_sample
from .network import AblationFlags, LesionNetwork
from .train import train_network

__all__ = [
    "ANCHOR_RATIOS",
    "AblationFlags",
    "Backbone",
    "BackboneConfig",
    "HeadConfig",
    "LesionNetwork",
    "LesionPrediction",
    "LossBreakdown",
    "PAPER_ANCHOR_SCALES",
    "assemble_losses",
    "decode_deltas",
    "dice_loss",
    "encode_deltas",
    "generate_anchors",
    "iou_matrix",
    "nms",
    "paste_mask",
    "predictions_for_sample",
    "train_network",
]
