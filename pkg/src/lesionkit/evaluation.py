"""Detection FROC, tagging AUC/F1, and segmentation surrogate metrics."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .geometry import (
    diameter_error,
    endpoint_contour_distance,
    estimate_recist,
    mask_to_contour,
)
from .model.anchors import iou_matrix
from .ontology import NEGATIVE, POSITIVE, calibrate_thresholds

FP_RATES = (0.5, 1.0, 2.0, 4.0)
EXTRA_FP_RATES = (8.0, 16.0)  # reported, not an acceptance target


def match_detections(boxes, scores, gt_boxes, iou_threshold=0.5):
    """Greedy one-to-one matching in descending score order.

    Returns (sorted_scores, tp_flags): each gt matches at most one
    prediction; every unmatched prediction is a false positive. Truncating
    the sorted list at any threshold keeps the flags valid, so one matching
    serves every FROC operating point.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    boxes, scores = boxes[order], scores[order]
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    flags = np.zeros(len(boxes), dtype=bool)
    if len(gt_boxes):
        iou = iou_matrix(boxes, gt_boxes)
        for i in range(len(boxes)):
            free = ~taken
            if not free.any():
                break
            j = int(np.where(free, iou[i], -1.0).argmax())
            if iou[i, j] >= iou_threshold and free[j]:
                flags[i] = True
                taken[j] = True
    return scores, flags


def froc(per_image_detections, per_image_gts, fp_rates=FP_RATES, iou_threshold=0.5):
    """Sensitivity at the given false-positive-per-image rates, plus average.

    per_image_detections: list of (boxes, scores); per_image_gts: list of
    gt box arrays. Thresholds sweep the distinct scores (step
    interpolation); at each target rate the best sensitivity with
    fp/image <= rate is taken.
    """
    n_images = len(per_image_gts)
    if n_images == 0 or n_images != len(per_image_detections):
        raise ValueError("need one detection list per image")
    total_gt = sum(len(g) for g in per_image_gts)
    if total_gt == 0:
        raise ValueError("froc needs at least one ground-truth lesion")

    pooled_scores, pooled_flags = [], []
    for (boxes, scores), gts in zip(per_image_detections, per_image_gts):
        s, f = match_detections(boxes, scores, gts, iou_threshold)
        pooled_scores.append(s)
        pooled_flags.append(f)
    scores = np.concatenate(pooled_scores) if pooled_scores else np.zeros(0)
    flags = np.concatenate(pooled_flags) if pooled_flags else np.zeros(0, dtype=bool)

    sens = {float(r): 0.0 for r in fp_rates}
    if len(scores):
        order = np.argsort(-scores, kind="stable")
        scores, flags = scores[order], flags[order]
        cum_tp = np.cumsum(flags)
        cum_fp = np.cumsum(~flags)
        # group tied scores: a threshold includes every equal-scored pred
        distinct = np.nonzero(np.diff(scores, append=-np.inf))[0]
        sens_at_thr = cum_tp[distinct] / total_gt
        rate_at_thr = cum_fp[distinct] / n_images
        for r in fp_rates:
            ok = rate_at_thr <= r + 1e-12
            if ok.any():
                sens[float(r)] = float(sens_at_thr[ok].max())
    avg = float(np.mean([sens[float(r)] for r in fp_rates]))
    return sens, avg


def tag_auc(scores, labels01):
    """Mann-Whitney AUC; tied scores earn half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels01 = np.asarray(labels01, dtype=bool)
    n_pos = int(labels01.sum())
    n_neg = int(len(labels01) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks on ties
    u = ranks[labels01].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def tag_metrics(scores, labels, thresholds=None):
    """Per-tag AUC and F1 (macro-averaged); degenerate tags are skipped.

    labels use the ontology convention (+1/-1/0); unknown entries are
    excluded per tag. thresholds=None calibrates on the scores themselves.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = scores.shape
    if thresholds is None:
        thresholds, _ = calibrate_thresholds(scores, labels)
    auc = np.full(c, np.nan)
    f1 = np.full(c, np.nan)
    skipped = []
    for t in range(c):
        known = labels[:, t] != 0
        y = labels[known, t] == POSITIVE
        s = scores[known, t]
        if y.size == 0 or not y.any() or y.all():
            skipped.append(t)
            continue
        auc[t] = tag_auc(s, y)
        if not np.isnan(thresholds[t]):
            pred = s >= thresholds[t]
            tp = float(np.sum(pred & y))
            fp = float(np.sum(pred & ~y))
            fn = float(np.sum(~pred & y))
            f1[t] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    mean_auc = float(np.nanmean(auc)) if np.isfinite(auc).any() else float("nan")
    mean_f1 = float(np.nanmean(f1)) if np.isfinite(f1).any() else float("nan")
    return {"auc": auc, "f1": f1, "mean_auc": mean_auc, "mean_f1": mean_f1,
            "skipped": skipped}


def seg_metrics(pred_masks, gt_measurements):
    """Mean endpoint-contour distance and diameter error over lesions (mm).

    An empty predicted mask scores a penalty distance of half the gt long
    diameter and a diameter error of the mean gt diameter; those lesions
    are counted separately.
    """
    if len(pred_masks) != len(gt_measurements):
        raise ValueError("need one predicted mask per gt measurement")
    dists, errs, penalties = [], [], 0
    for mask, gt in zip(pred_masks, gt_measurements):
        mask = np.asarray(mask) >= 0.5 if np.asarray(mask).dtype != bool else np.asarray(mask)
        if not mask.any():
            penalties += 1
            dists.append(gt.long_len_mm / 2.0)
            errs.append((gt.long_len_mm + gt.short_len_mm) / 2.0)
            continue
        contour = mask_to_contour(mask)
        dists.append(endpoint_contour_distance(gt, contour))
        if len(contour) >= 3:
            est = estimate_recist(contour, spacing_mm=gt.spacing_mm)
            errs.append(diameter_error(est, gt))
        else:
            penalties += 1
            errs.append((gt.long_len_mm + gt.short_len_mm) / 2.0)
    return {
        "mean_distance_mm": float(np.mean(dists)) if dists else float("nan"),
        "mean_diameter_error_mm": float(np.mean(errs)) if errs else float("nan"),
        "empty_mask_count": penalties,
    }


@dataclass
class EvalReport:
    sensitivity: dict
    avg_sensitivity: float
    tag_auc: dict
    mean_tag_auc: float
    tag_f1: dict
    mean_tag_f1: float
    skipped_tags: list
    mean_distance_mm: float
    mean_diameter_error_mm: float
    empty_mask_count: int
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = []
        for rate in sorted(self.sensitivity):
            lines.append(f"sensitivity@{rate:g}fp = {self.sensitivity[rate]:.4f}")
        lines.append(f"avg_sensitivity = {self.avg_sensitivity:.4f}")
        lines.append(f"mean_tag_auc = {self.mean_tag_auc:.4f}")
        lines.append(f"mean_tag_f1 = {self.mean_tag_f1:.4f}")
        for tag in sorted(self.tag_auc):
            lines.append(f"tag_auc[{tag}] = {self.tag_auc[tag]:.4f}")
        for tag in sorted(self.tag_f1):
            lines.append(f"tag_f1[{tag}] = {self.tag_f1[tag]:.4f}")
        if self.skipped_tags:
            lines.append("skipped_tags = " + ",".join(self.skipped_tags))
        lines.append(f"mean_distance_mm = {self.mean_distance_mm:.4f}")
        lines.append(f"mean_diameter_error_mm = {self.mean_diameter_error_mm:.4f}")
        lines.append(f"empty_mask_count = {self.empty_mask_count}")
        for k in sorted(self.extra):
            lines.append(f"{k} = {self.extra[k]}")
        return "\n".join(lines)

    def to_json(self):
        payload = {
            "sensitivity": {str(k): v for k, v in sorted(self.sensitivity.items())},
            "avg_sensitivity": self.avg_sensitivity,
            "tag_auc": dict(sorted(self.tag_auc.items())),
            "mean_tag_auc": self.mean_tag_auc,
            "tag_f1": dict(sorted(self.tag_f1.items())),
            "mean_tag_f1": self.mean_tag_f1,
            "skipped_tags": list(self.skipped_tags),
            "mean_distance_mm": self.mean_distance_mm,
            "mean_diameter_error_mm": self.mean_diameter_error_mm,
            "empty_mask_count": self.empty_mask_count,
            "extra": dict(sorted(self.extra.items())),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_row(self):
        cols = [f"{self.sensitivity[r]:.6f}" for r in sorted(self.sensitivity)]
        cols += [
            f"{self.avg_sensitivity:.6f}",
            f"{self.mean_tag_auc:.6f}",
            f"{self.mean_tag_f1:.6f}",
            f"{self.mean_distance_mm:.6f}",
            f"{self.mean_diameter_error_mm:.6f}",
        ]
        return ",".join(cols)


def evaluate_network(net, dataset, eval_split="test", calib_split="val",
                     score_floor=0.05, include_extra_rates=True,
                     complete_labels=True):
    """The full Table-1-style protocol on synthetic data.

    Detection: full pipeline per image, FROC over the eval split. Tagging
    and segmentation: predictions on ground-truth boxes (independent of
    detection), with tag thresholds calibrated on the calibration split.
    The synthetic generator's labels are complete, so unmentioned tags
    count as negatives here (complete_labels); training keeps them unknown.
    """
    from .model.infer import paste_mask, predictions_for_sample

    def gt_protocol(split):
        scores, labels, masks, gts = [], [], [], []
        for key in dataset.sample_keys(split) or dataset.sample_keys():
            sample = dataset.load_sample(key)
            if len(sample.gt_boxes) == 0:
                continue
            out = net.scores_on_boxes(sample, sample.gt_boxes)
            scores.append(out["tag_scores"])
            vec = sample.gt_tag_vectors
            if complete_labels:
                vec = np.where(vec == POSITIVE, POSITIVE, NEGATIVE).astype(np.int8)
            labels.append(vec)
            for probs, box, m in zip(out["masks"], sample.gt_boxes, sample.gt_measurements):
                masks.append(paste_mask(probs, box, sample.image_extent))
                gts.append(m)
        scores = np.concatenate(scores) if scores else np.zeros((0, len(dataset.ontology)))
        labels = np.concatenate(labels) if labels else np.zeros((0, len(dataset.ontology)), dtype=np.int8)
        return scores, labels, masks, gts

    calib_scores, calib_labels, _, _ = gt_protocol(calib_split)
    thresholds, _ = calibrate_thresholds(calib_scores, calib_labels)

    detections, gt_boxes = [], []
    for key in dataset.sample_keys(eval_split) or dataset.sample_keys():
        sample = dataset.load_sample(key)
        preds = predictions_for_sample(net, sample, score_threshold=score_floor)
        boxes = np.array([p.box for p in preds]).reshape(-1, 4)
        scores = np.array([p.score for p in preds])
        detections.append((boxes, scores))
        gt_boxes.append(sample.gt_boxes)

    rates = FP_RATES + EXTRA_FP_RATES if include_extra_rates else FP_RATES
    sens, _ = froc(detections, gt_boxes, fp_rates=rates)
    avg = float(np.mean([sens[float(r)] for r in FP_RATES]))

    eval_scores, eval_labels, eval_masks, eval_gts = gt_protocol(eval_split)
    tags = tag_metrics(eval_scores, eval_labels, thresholds)
    seg = seg_metrics(eval_masks, eval_gts)

    names = dataset.ontology.tags
    return EvalReport(
        sensitivity={r: sens[float(r)] for r in FP_RATES},
        avg_sensitivity=avg,
        tag_auc={names[i]: float(tags["auc"][i]) for i in range(len(names))
                 if np.isfinite(tags["auc"][i])},
        mean_tag_auc=tags["mean_auc"],
        tag_f1={names[i]: float(tags["f1"][i]) for i in range(len(names))
                if np.isfinite(tags["f1"][i])},
        mean_tag_f1=tags["mean_f1"],
        skipped_tags=[names[i] for i in tags["skipped"]],
        mean_distance_mm=seg["mean_distance_mm"],
        mean_diameter_error_mm=seg["mean_diameter_error_mm"],
        empty_mask_count=seg["empty_mask_count"],
        extra={f"sensitivity@{r:g}fp": f"{sens.get(float(r), 0.0):.4f}"
               for r in EXTRA_FP_RATES if include_extra_rates},
    )
