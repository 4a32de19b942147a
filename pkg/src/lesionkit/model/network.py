"""Full detector: backbone + RPN + branches + score refinement.

One sample (M grouped images) is one forward pass; minibatches average
per-sample losses over a shared tape so backward reaches every parameter
once per step.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, load_checkpoint, ops, save_checkpoint
from ..errors import ConfigError, DataError
from ..geometry import pseudo_mask
from ..ontology import rhem_loss, wce_loss, wce_loss_probs
from . import anchors as anchor_lib
from .backbone import Backbone, BackboneConfig
from .heads import (
    ZERO,
    DetectionBranch,
    HeadConfig,
    MaskBranch,
    RPN,
    ScoreRefinementLayer,
    TaggingBranch,
    assemble_losses,
    assign_rpn_targets,
    assign_targets,
    bce_probs_mean,
    bce_with_logits_mean,
    dice_loss,
    sample_balanced,
    smooth_l1,
)

FM_STRIDE = 4
PROB_EPS = 1e-7


@dataclass
class AblationFlags:
    no_fusion: bool = False
    no_pyramid: bool = False
    no_detection: bool = False
    no_tagging: bool = False
    no_mask: bool = False
    no_srl: bool = False


class LesionNetwork:
    def __init__(self, backbone_cfg, head_cfg, n_tags, seed=0, ablation=None):
        self.ablation = ablation or AblationFlags()
        if self.ablation.no_fusion:
            backbone_cfg = BackboneConfig(
                **{**backbone_cfg.__dict__, "fusion_points": ()}
            )
        self.backbone_cfg = backbone_cfg
        self.head_cfg = head_cfg
        self.n_tags = n_tags

        rng = np.random.default_rng(seed)
        self.backbone = Backbone(
            backbone_cfg, rng, with_pyramid=not self.ablation.no_pyramid
        )
        p = backbone_cfg.pyramid_channels
        self.rpn = RPN(rng, p, head_cfg.anchors_per_cell)
        roi_feats = p * head_cfg.roi_size ** 2
        self.detection = (
            None if self.ablation.no_detection
            else DetectionBranch(rng, roi_feats, head_cfg.fc_width)
        )
        self.tagging = (
            None if self.ablation.no_tagging
            else TaggingBranch(rng, roi_feats, head_cfg.fc_width, n_tags)
        )
        self.mask = None if self.ablation.no_mask else MaskBranch(rng, p)
        self.srl = None
        if not self.ablation.no_srl:
            if self.tagging is None:
                raise ConfigError("score refinement needs the tagging branch")
            self.srl = ScoreRefinementLayer(n_tags)

        self.beta_p = np.ones(n_tags)
        self.beta_n = np.ones(n_tags)
        self.ontology = None
        self._anchor_cache = {}

    # -- plumbing -----------------------------------------------------------

    def set_tag_context(self, ontology, beta_p, beta_n):
        if len(ontology) != self.n_tags:
            raise ConfigError(
                f"network built for {self.n_tags} tags, ontology has {len(ontology)}"
            )
        self.ontology = ontology
        self.beta_p = np.asarray(beta_p, dtype=np.float64)
        self.beta_n = np.asarray(beta_n, dtype=np.float64)

    def parameters(self):
        out = list(self.backbone.params()) + list(self.rpn.params())
        for branch in (self.detection, self.tagging, self.mask, self.srl):
            if branch is not None:
                out += branch.params()
        return out

    def named_arrays(self):
        return [(p.name, p.tensor.data) for p in self.parameters()]

    def save(self, path):
        save_checkpoint(path, self.named_arrays())

    def load(self, path):
        state = load_checkpoint(path)
        params = {p.name: p for p in self.parameters()}
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise DataError(f"checkpoint mismatch: missing {missing}, extra {extra}")
        for name, arr in state.items():
            if params[name].tensor.data.shape != arr.shape:
                raise DataError(f"shape mismatch for {name}")
            params[name].tensor.data = arr.copy()
            params[name].momentum = np.zeros_like(arr)

    def _anchors(self, fm_h, fm_w):
        key = (fm_h, fm_w)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = anchor_lib.generate_anchors(
                fm_h, fm_w, FM_STRIDE, self.head_cfg.anchor_scales,
                self.head_cfg.anchor_ratios,
            )
        return self._anchor_cache[key]

    # -- shared forward pieces ----------------------------------------------

    def feature_map(self, sample):
        """Central-image stride-4 features as [P, h, w]."""
        images = Tensor(sample.images / 127.5 - 1.0)
        fm = self.backbone.forward(images)
        return ops.reshape(fm, fm.shape[1:]), fm

    def _propose(self, fm3, objectness, deltas, extent, post_nms):
        """Decode, clip, filter, NMS. Returns (boxes, scores) as plain arrays."""
        cfg = self.head_cfg
        anchors = self._anchors(fm3.shape[1], fm3.shape[2])
        boxes = anchor_lib.decode_deltas(anchors, deltas.data)
        boxes = anchor_lib.clip_boxes(boxes, extent)
        scores = objectness.data
        ok = (boxes[:, 2] - boxes[:, 0] > 1.0) & (boxes[:, 3] - boxes[:, 1] > 1.0)
        boxes, scores, idx = boxes[ok], scores[ok], np.nonzero(ok)[0]
        order = np.lexsort((np.arange(len(scores)), -scores))[: cfg.rpn_pre_nms]
        boxes, scores = boxes[order], scores[order]
        keep = anchor_lib.nms(boxes, scores, cfg.rpn_nms_iou)[:post_nms]
        return boxes[keep], scores[keep]

    def _roi_features(self, fm3, boxes, out):
        rois = ops.roi_align(fm3, boxes, out, FM_STRIDE)
        return rois

    def _branch_scores(self, fm3, boxes, rpn_scores=None):
        """Run detection + tagging on boxes; returns dict of Tensors."""
        cfg = self.head_cfg
        rois = self._roi_features(fm3, boxes, cfg.roi_size)
        flat = ops.reshape(rois, (len(boxes), -1))
        if self.detection is not None:
            det_logits, det_deltas = self.detection(flat)
        else:
            # ablation (c): score proposals by RPN objectness, no regression
            base = np.zeros(len(boxes)) if rpn_scores is None else rpn_scores
            det_logits = Tensor(base)
            det_deltas = Tensor(np.zeros((len(boxes), 4)))
        tag_logits = self.tagging(flat) if self.tagging is not None else None
        return det_logits, det_deltas, tag_logits

    def _srl_refine(self, det_logits, tag_logits, boxes, extent, gender_age):
        """Refined [R, 1+C] probabilities (or None when SRL is disabled)."""
        if self.srl is None:
            return None
        h, w = extent
        b = np.asarray(boxes)
        stats = np.stack(
            [
                (b[:, 0] + b[:, 2]) / 2.0 / w,
                (b[:, 1] + b[:, 3]) / 2.0 / h,
                (b[:, 2] - b[:, 0]) / w,
                (b[:, 3] - b[:, 1]) / h,
            ],
            axis=1,
        )
        ga = np.tile(np.asarray(gender_age, dtype=np.float64), (len(b), 1))
        lesion_sig = ops.reshape(ops.sigmoid(det_logits), (len(b), 1))
        tag_sig = ops.sigmoid(tag_logits)
        if self.head_cfg.srl_stop_gradient:
            lesion_sig = lesion_sig.detach()
            tag_sig = tag_sig.detach()
        feats = ops.concat([lesion_sig, tag_sig, Tensor(stats), Tensor(ga)], axis=1)
        return self.srl(feats)

    def _mask_targets(self, gt_masks, boxes, matched):
        out = self.head_cfg.mask_out
        targets = np.zeros((len(boxes), 1, out, out))
        from ..autodiff import kernels

        for i, (box, g) in enumerate(zip(boxes, matched)):
            crop = kernels.roi_align_forward(
                gt_masks[g][None], np.asarray(box, dtype=np.float64).reshape(1, 4), out, 1
            )
            targets[i, 0] = crop[0, 0] >= 0.5
        return targets

    # -- training ------------------------------------------------------------

    def training_losses(self, sample, rng):
        """One sample's LossBreakdown on the shared tape."""
        from ..data.volume import encode_gender_age

        cfg = self.head_cfg
        extent = sample.image_extent
        fm3, _ = self.feature_map(sample)
        objectness, rpn_deltas = self.rpn(
            ops.reshape(fm3, (1, *fm3.shape))
        )
        anchors = self._anchors(fm3.shape[1], fm3.shape[2])
        gt = sample.gt_boxes

        # RPN losses over a balanced anchor sample
        labels, matched = assign_rpn_targets(anchors, gt, cfg.rpn_pos_iou, cfg.rpn_neg_iou)
        chosen = sample_balanced(labels, cfg.rpn_batch, cfg.rpn_pos_fraction, rng)
        rpn_cls = bce_with_logits_mean(
            ops.take_rows(objectness, chosen), labels[chosen].astype(np.float64)
        )
        pos_anchor = chosen[labels[chosen] == 1]
        if len(pos_anchor) and len(gt):
            target_deltas = anchor_lib.encode_deltas(
                anchors[pos_anchor], gt[matched[pos_anchor]]
            )
            rpn_box = smooth_l1(ops.take_rows(rpn_deltas, pos_anchor), target_deltas)
        else:
            rpn_box = ZERO()

        # proposals for the second stage
        boxes, scores = self._propose(
            fm3, objectness, rpn_deltas, extent, cfg.rpn_post_nms_train
        )
        if cfg.add_gt_proposals and len(gt):
            boxes = np.concatenate([gt, boxes]) if len(boxes) else gt.copy()
        p_labels, p_matched = assign_targets(boxes, gt, cfg.pos_iou, cfg.neg_iou)
        keep = sample_balanced(p_labels, cfg.proposal_batch, cfg.proposal_pos_fraction, rng)
        boxes, p_labels, p_matched = boxes[keep], p_labels[keep], p_matched[keep]
        pos = np.nonzero(p_labels == 1)[0]

        det_logits, det_deltas, tag_logits = self._branch_scores(fm3, boxes)
        if self.detection is not None:
            det_cls = bce_with_logits_mean(det_logits, p_labels.astype(np.float64))
            if len(pos):
                target = anchor_lib.encode_deltas(boxes[pos], gt[p_matched[pos]])
                det_box = smooth_l1(ops.take_rows(det_deltas, pos), target)
            else:
                det_box = ZERO()
        else:
            det_cls, det_box = ZERO(), ZERO()

        # tag losses on true-lesion rows only
        tag_wce = tag_rhem = ZERO()
        if self.tagging is not None and len(pos):
            tag_targets = sample.gt_tag_vectors[p_matched[pos]]
            pos_logits = ops.take_rows(tag_logits, pos)
            tag_wce = wce_loss(pos_logits, tag_targets, self.beta_p, self.beta_n)
            tag_rhem = rhem_loss(
                pos_logits, tag_targets, self.ontology, cfg.rhem_k, cfg.rhem_weight
            )

        # mask loss on true-lesion rows only
        seg_dice = ZERO()
        if self.mask is not None and len(pos):
            gt_masks = [
                pseudo_mask(m, extent).astype(np.float64)
                for m in sample.gt_measurements
            ]
            mask_rois = self._roi_features(fm3, boxes[pos], cfg.mask_roi_size)
            mask_logits = self.mask(mask_rois)
            targets = self._mask_targets(gt_masks, boxes[pos], p_matched[pos])
            seg_dice = dice_loss(ops.sigmoid(mask_logits), targets)

        # score refinement losses
        srl_cls = srl_wce = ZERO()
        if self.srl is not None:
            refined = self._srl_refine(
                det_logits, tag_logits, boxes, extent,
                encode_gender_age(sample.gender, sample.age),
            )
            srl_cls = bce_probs_mean(
                ops.narrow(refined, 1, 0, 1).reshape(len(boxes)),
                p_labels.astype(np.float64),
            )
            if len(pos):
                refined_tags = ops.take_rows(ops.narrow(refined, 1, 1, self.n_tags), pos)
                srl_wce = wce_loss_probs(
                    refined_tags, sample.gt_tag_vectors[p_matched[pos]],
                    self.beta_p, self.beta_n,
                )

        return assemble_losses(
            rpn_cls=rpn_cls, rpn_box=rpn_box, det_cls=det_cls, det_box=det_box,
            seg_dice=seg_dice, tag_wce=tag_wce, tag_rhem=tag_rhem,
            srl_cls=srl_cls, srl_wce=srl_wce,
        )

    # -- inference ------------------------------------------------------------

    def raw_detections(self, sample):
        """Proposals through heads and refinement; no NMS or thresholding.

        Returns a dict of plain arrays: boxes (regressed), scores (refined
        when SRL is on), unrefined scores, tag scores both ways.
        """
        from ..data.volume import encode_gender_age

        cfg = self.head_cfg
        extent = sample.image_extent
        fm3, _ = self.feature_map(sample)
        objectness, rpn_deltas = self.rpn(ops.reshape(fm3, (1, *fm3.shape)))
        boxes, rpn_scores = self._propose(
            fm3, objectness, rpn_deltas, extent, cfg.rpn_post_nms_test
        )
        if len(boxes) == 0:
            empty = np.zeros((0,))
            return {
                "boxes": np.zeros((0, 4)), "scores": empty, "scores_unrefined": empty,
                "tag_scores": np.zeros((0, self.n_tags)),
                "tag_scores_unrefined": np.zeros((0, self.n_tags)),
                "fm3": fm3,
            }
        det_logits, det_deltas, tag_logits = self._branch_scores(fm3, boxes, rpn_scores)
        regressed = anchor_lib.clip_boxes(
            anchor_lib.decode_deltas(boxes, det_deltas.data), extent
        )
        lesion_sig = 1.0 / (1.0 + np.exp(-det_logits.data))
        valid = (regressed[:, 2] - regressed[:, 0] >= 1.0) & (
            regressed[:, 3] - regressed[:, 1] >= 1.0
        )
        tag_sig = (
            1.0 / (1.0 + np.exp(-tag_logits.data))
            if tag_logits is not None
            else np.zeros((len(boxes), self.n_tags))
        )
        if self.srl is not None:
            refined = self._srl_refine(
                det_logits, tag_logits, boxes, extent,
                encode_gender_age(sample.gender, sample.age),
            ).data
            # raw refined outputs: clipping would tie saturated scores and
            # destroy the ranking the FROC sweep depends on
            scores = refined[:, 0]
            tag_scores = refined[:, 1:]
        else:
            scores = lesion_sig
            tag_scores = tag_sig
        return {
            "boxes": regressed[valid],
            "scores": scores[valid],
            "scores_unrefined": lesion_sig[valid],
            "tag_scores": tag_scores[valid],
            "tag_scores_unrefined": tag_sig[valid],
            "fm3": fm3,
        }

    def mask_probabilities(self, fm3, boxes):
        """[R, out, out] mask probabilities for given boxes (plain array)."""
        if self.mask is None or len(boxes) == 0:
            return np.zeros((len(boxes), self.head_cfg.mask_out, self.head_cfg.mask_out))
        rois = self._roi_features(fm3, boxes, self.head_cfg.mask_roi_size)
        logits = self.mask(rois)
        return 1.0 / (1.0 + np.exp(-logits.data[:, 0]))

    def scores_on_boxes(self, sample, boxes):
        """Tag scores and masks for externally supplied boxes (GT protocol)."""
        from ..data.volume import encode_gender_age

        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        fm3, _ = self.feature_map(sample)
        det_logits, _, tag_logits = self._branch_scores(fm3, boxes)
        tag_sig = (
            1.0 / (1.0 + np.exp(-tag_logits.data))
            if tag_logits is not None
            else np.zeros((len(boxes), self.n_tags))
        )
        if self.srl is not None:
            refined = self._srl_refine(
                det_logits, tag_logits, boxes, sample.image_extent,
                encode_gender_age(sample.gender, sample.age),
            ).data
            tag_scores = np.clip(refined[:, 1:], 0.0, 1.0)
        else:
            tag_scores = tag_sig
        masks = self.mask_probabilities(fm3, boxes)
        return {"tag_scores": tag_scores, "tag_scores_unrefined": tag_sig, "masks": masks}
