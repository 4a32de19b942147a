"""RPN, head branches, score refinement layer, targets and loss assembly."""

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, NumericError
from . import anchors as anchor_lib
from .nn import Conv2d, Linear

DICE_EPS = 1.0


@dataclass
class HeadConfig:
    anchor_scales: tuple = anchor_lib.PAPER_ANCHOR_SCALES
    anchor_ratios: tuple = anchor_lib.ANCHOR_RATIOS
    fc_width: int = 256  # 2048 at paper scale
    roi_size: int = 7
    mask_roi_size: int = 14
    mask_out: int = 28
    rpn_batch: int = 128
    rpn_pos_fraction: float = 0.5
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_nms_iou: float = 0.7
    rpn_pre_nms: int = 1000
    rpn_post_nms_train: int = 2000
    rpn_post_nms_test: int = 300
    proposal_batch: int = 64
    proposal_pos_fraction: float = 0.25
    pos_iou: float = 0.5
    neg_iou: float = 0.4
    add_gt_proposals: bool = True
    test_nms_iou: float = 0.5
    score_threshold: float = 0.5
    rhem_k: int = 3
    rhem_weight: float = 2.0
    srl_stop_gradient: bool = False
    shared_det_tag_trunk: bool = False  # a merged branch loses accuracy; refused

    def __post_init__(self):
        if self.shared_det_tag_trunk:
            raise ConfigError(
                "shared detection/tagging trunk is not supported: the tagging "
                "branch needs its own FC features"
            )
        if not 0 <= self.neg_iou <= self.pos_iou <= 1:
            raise ConfigError("need 0 <= neg_iou <= pos_iou <= 1")
        if self.mask_out != 2 * self.mask_roi_size:
            raise ConfigError("mask_out must be twice mask_roi_size (one 2x upsample)")

    @property
    def anchors_per_cell(self):
        return len(self.anchor_scales) * len(self.anchor_ratios)


class RPN:
    def __init__(self, rng, channels, n_anchors):
        self.conv = Conv2d("rpn.conv", rng, channels, channels, k=3)
        self.objectness = Conv2d("rpn.objectness", rng, channels, n_anchors, k=1, init="small")
        self.deltas = Conv2d("rpn.deltas", rng, channels, 4 * n_anchors, k=1, init="small")
        self.n_anchors = n_anchors

    def __call__(self, fm):
        """fm [1,P,h,w] -> objectness [A*h*w], deltas [A*h*w, 4]."""
        t = ops.relu(self.conv(fm))
        h, w = t.shape[2], t.shape[3]
        a = self.n_anchors
        obj = ops.reshape(self.objectness(t), (a * h * w,))
        d = ops.reshape(self.deltas(t), (a, 4, h, w))
        d = ops.reshape(ops.transpose(d, (0, 2, 3, 1)), (a * h * w, 4))
        return obj, d

    def params(self):
        return self.conv.params() + self.objectness.params() + self.deltas.params()


class TwoFCTrunk:
    def __init__(self, name, rng, n_in, width):
        self.fc1 = Linear(f"{name}.fc1", rng, n_in, width)
        self.fc2 = Linear(f"{name}.fc2", rng, width, width)

    def __call__(self, flat_rois):
        return ops.relu(self.fc2(ops.relu(self.fc1(flat_rois))))

    def params(self):
        return self.fc1.params() + self.fc2.params()


class DetectionBranch:
    """Lesion score and box regression from ROI features."""

    def __init__(self, rng, n_in, width):
        self.trunk = TwoFCTrunk("det", rng, n_in, width)
        self.score = Linear("det.score", rng, width, 1, init="small")
        self.box = Linear("det.box", rng, width, 4, init="small")

    def __call__(self, flat_rois):
        t = self.trunk(flat_rois)
        return ops.reshape(self.score(t), (flat_rois.shape[0],)), self.box(t)

    def params(self):
        return self.trunk.params() + self.score.params() + self.box.params()


class TaggingBranch:
    """Per-tag logits from ROI features; a dedicated trunk, never shared."""

    def __init__(self, rng, n_in, width, n_tags):
        self.trunk = TwoFCTrunk("tag", rng, n_in, width)
        self.out = Linear("tag.out", rng, width, n_tags, init="small")

    def __call__(self, flat_rois):
        return self.out(self.trunk(flat_rois))

    def params(self):
        return self.trunk.params() + self.out.params()


class MaskBranch:
    """Conv stack, one 2x transposed upsample, per-pixel mask logits."""

    def __init__(self, rng, channels):
        self.conv1 = Conv2d("mask.conv1", rng, channels, channels, k=3)
        self.conv2 = Conv2d("mask.conv2", rng, channels, channels, k=3)
        self.up = Conv2d("mask.up", rng, channels, channels, k=3)
        self.out = Conv2d("mask.out", rng, channels, 1, k=1, init="small")

    def __call__(self, rois):
        x = ops.relu(self.conv1(rois))
        x = ops.relu(self.conv2(x))
        x = ops.relu(self.up(ops.zero_interleave(x, 2)))
        return self.out(x)  # [R, 1, out, out] logits

    def params(self):
        return self.conv1.params() + self.conv2.params() + self.up.params() + self.out.params()


class ScoreRefinementLayer:
    """One linear map over [lesion score, tag scores, box stats, gender, age].

    Identity-initialized on the score block so refined scores equal the
    inputs before training; the extra-feature columns start at zero.
    """

    def __init__(self, n_tags):
        from ..autodiff import Parameter

        n_scores = 1 + n_tags
        w = np.zeros((n_scores, n_scores + 6))
        w[:, :n_scores] = np.eye(n_scores)
        self.weight = Parameter("srl.weight", w)
        self.bias = Parameter("srl.bias", np.zeros(n_scores))
        self.n_scores = n_scores

    def __call__(self, features):
        if features.shape[1] != self.n_scores + 6:
            raise ValueError(
                f"srl expects {self.n_scores + 6} features, got {features.shape[1]}"
            )
        return ops.linear(features, self.weight.tensor, self.bias.tensor)

    def params(self):
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# target assignment and sampling


def assign_targets(boxes, gt_boxes, pos_iou, neg_iou):
    """Labels per box: 1 positive, 0 negative, -1 ignored; plus matched gt.

    Positive iff max IoU >= pos_iou, negative iff < neg_iou, in between
    ignored. With no gt everything is negative.
    """
    n = len(boxes)
    if len(gt_boxes) == 0:
        return np.zeros(n, dtype=np.int8), np.full(n, -1, dtype=np.int64)
    iou = anchor_lib.iou_matrix(boxes, gt_boxes)
    best = iou.max(axis=1)
    matched = iou.argmax(axis=1)
    labels = np.full(n, -1, dtype=np.int8)
    labels[best >= pos_iou] = 1
    labels[best < neg_iou] = 0
    matched = np.where(labels == 1, matched, -1)
    return labels, matched


def assign_rpn_targets(all_anchors, gt_boxes, pos_iou, neg_iou):
    """RPN anchor labels; the best anchor of each gt is forced positive."""
    labels, matched = assign_targets(all_anchors, gt_boxes, pos_iou, neg_iou)
    if len(gt_boxes):
        iou = anchor_lib.iou_matrix(all_anchors, gt_boxes)
        forced = iou.argmax(axis=0)
        labels[forced] = 1
        matched[forced] = np.arange(len(gt_boxes))
    return labels, matched


def sample_balanced(labels, batch, pos_fraction, rng):
    """Deterministically subsample positives and negatives for a loss batch."""
    pos = np.nonzero(labels == 1)[0]
    neg = np.nonzero(labels == 0)[0]
    n_pos = min(len(pos), int(round(batch * pos_fraction)))
    if len(pos) > n_pos:
        pos = pos[rng.permutation(len(pos))[:n_pos]]
    n_neg = min(len(neg), batch - len(pos))
    if len(neg) > n_neg:
        neg = neg[rng.permutation(len(neg))[:n_neg]]
    return np.sort(np.concatenate([pos, neg]))


# ---------------------------------------------------------------------------
# loss pieces


def bce_with_logits_mean(logits, targets01):
    y = np.asarray(targets01, dtype=np.float64)
    terms = ops.log_sigmoid(logits) * y + ops.log_sigmoid(-logits) * (1.0 - y)
    return -terms.mean()


def bce_probs_mean(probs, targets01, eps=0.01):
    """Cross-entropy on probability-valued scores (tangent-tailed log)."""
    y = np.asarray(targets01, dtype=np.float64)
    terms = (
        ops.safe_log_prob(probs, eps) * y
        + ops.safe_log_prob(1.0 - probs, eps) * (1.0 - y)
    )
    return -terms.mean()


def smooth_l1(pred, target):
    """Sum over coordinates, mean over rows; quadratic inside |d| < 1."""
    d = pred - Tensor(np.asarray(target, dtype=np.float64))
    a = ops.absolute(d)
    quad = (a.data < 1.0).astype(np.float64)
    elements = (d * d) * (0.5 * quad) + (a - 0.5) * (1.0 - quad)
    return elements.sum() * (1.0 / pred.shape[0])


def dice_loss(pred_probs, targets):
    """Mean over rows of 1 - (2*sum(pg)+eps)/(sum(p)+sum(g)+eps)."""
    r = pred_probs.shape[0]
    flat = ops.reshape(pred_probs, (r, -1))
    g = np.asarray(targets, dtype=np.float64).reshape(r, -1)
    inter = (flat * g).sum(axis=1)
    denom = flat.sum(axis=1) + Tensor(g.sum(axis=1))
    dice = (inter * 2.0 + DICE_EPS) / (denom + DICE_EPS)
    return (1.0 - dice).mean()


ZERO = lambda: Tensor(0.0)  # noqa: E731 - loss placeholder for empty selections


@dataclass
class LossBreakdown:
    rpn_cls: Tensor
    rpn_box: Tensor
    det_cls: Tensor
    det_box: Tensor
    seg_dice: Tensor
    tag_wce: Tensor
    tag_rhem: Tensor
    srl_cls: Tensor
    srl_wce: Tensor

    PART_NAMES = (
        "rpn_cls", "rpn_box", "det_cls", "det_box", "seg_dice",
        "tag_wce", "tag_rhem", "srl_cls", "srl_wce",
    )
    DET_BOX_WEIGHT = 10.0

    def parts(self):
        return {name: getattr(self, name) for name in self.PART_NAMES}

    def total(self):
        t = ZERO()
        for name, part in self.parts().items():
            weight = self.DET_BOX_WEIGHT if name == "det_box" else 1.0
            t = t + part * weight
        return t

    def values(self):
        return {name: float(part.data) for name, part in self.parts().items()}


def assemble_losses(**parts):
    """Build the LossBreakdown and its weighted total, checking finiteness."""
    for name in LossBreakdown.PART_NAMES:
        if name not in parts:
            raise ValueError(f"missing loss part {name!r}")
        value = parts[name]
        if not np.isfinite(np.asarray(value.data)).all():
            raise NumericError(f"loss part {name!r} is not finite")
    breakdown = LossBreakdown(**parts)
    return breakdown, breakdown.total()
