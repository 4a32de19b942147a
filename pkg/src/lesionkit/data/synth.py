"""Synthetic CT dataset generator.

Volumes are smooth-noise backgrounds (about -200..200 HU) with elliptical
bright or dark lesions. Each lesion carries a ground-truth RECIST
measurement along its true axes, a bounding box, and tags from a 12-tag
ontology determined by position, polarity, size and shape.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..geometry import RecistMeasurement
from ..ontology import TagOntology, save_ontology
from .records import AnnotationRecord, patient_split, save_annotations
from .volume import CTVolume, save_volume

SPACING = (2.0, 0.8, 0.8)  # canonical (z, y, x) mm


def synthetic_ontology():
    """The 12-tag ontology emitted alongside every synthetic dataset."""
    tags = [
        ("body", "bodypart"),
        ("left_side", "bodypart"),
        ("right_side", "bodypart"),
        ("upper_half", "bodypart"),
        ("lower_half", "bodypart"),
        ("lesion", "type"),
        ("bright_lesion", "type"),
        ("dark_lesion", "type"),
        ("large", "attribute"),
        ("small", "attribute"),
        ("round", "attribute"),
        ("elongated", "attribute"),
    ]
    parents = [
        ("left_side", "body"),
        ("right_side", "body"),
        ("upper_half", "body"),
        ("lower_half", "body"),
        ("bright_lesion", "lesion"),
        ("dark_lesion", "lesion"),
    ]
    exclusive = [
        ("left_side", "right_side"),
        ("upper_half", "lower_half"),
        ("bright_lesion", "dark_lesion"),
        ("large", "small"),
        ("round", "elongated"),
    ]
    return TagOntology([t for t, _ in tags], dict(tags), parents, exclusive)


@dataclass
class SynthConfig:
    patients: int = 20
    volumes_per_patient: int = 2
    lesions_min: int = 1
    lesions_max: int = 3
    image_size: int = 96
    depth: int = 9
    overlap_probability: float = 0.0
    large_threshold_mm: float = 16.0
    round_ratio: float = 0.7
    split_ratios: tuple = (0.70, 0.15, 0.15)

    def __post_init__(self):
        if self.patients < 3:
            raise ConfigError("need at least 3 patients")
        if not 1 <= self.lesions_min <= self.lesions_max:
            raise ConfigError("bad lesion count range")
        if not 0.0 <= self.overlap_probability < 1.0:
            raise ConfigError("overlap probability must be in [0, 1)")
        if self.image_size < 48 or self.depth < 3:
            raise ConfigError("volume too small for lesion placement")


def _background(rng, d, h, w):
    zz = np.arange(d)[:, None, None] / max(d - 1, 1)
    yy = np.arange(h)[None, :, None] / (h - 1)
    xx = np.arange(w)[None, None, :] / (w - 1)
    field = np.zeros((d, h, w))
    for _ in range(4):
        fy, fx, fz = rng.uniform(0.5, 2.5, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.cos(2 * np.pi * (fy * yy + fx * xx + fz * zz) + phase)
    field = field / 4.0 * 140.0
    field += rng.normal(0.0, 12.0, size=(d, h, w))
    return np.clip(field, -200.0, 200.0)


def _ellipse_field(h, w, cx, cy, a, b, theta):
    """Normalized squared radius of each pixel center w.r.t. the ellipse."""
    u = np.array([np.cos(theta), np.sin(theta)])
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - cx, yy - cy
    su = dx * u[0] + dy * u[1]
    sv = -dx * u[1] + dy * u[0]
    return (su / a) ** 2 + (sv / b) ** 2


def _boxes_overlap(box, others):
    for ox1, oy1, ox2, oy2 in others:
        x1, y1, x2, y2 = box
        if x1 < ox2 and ox1 < x2 and y1 < oy2 and oy1 < y2:
            return True
    return False


def _lesion_tags(cx, cy, w, h, bright, diam_mm, ratio, cfg):
    return (
        "left_side" if cx < w / 2 else "right_side",
        "upper_half" if cy < h / 2 else "lower_half",
        "bright_lesion" if bright else "dark_lesion",
        "large" if diam_mm >= cfg.large_threshold_mm else "small",
        "round" if ratio >= cfg.round_ratio else "elongated",
    )


def _place_lesions(rng, voxels, key_slice, cfg, patient, study, series, gender, age):
    d, h, w = voxels.shape
    n_lesions = int(rng.integers(cfg.lesions_min, cfg.lesions_max + 1))
    records = []
    placed_boxes = []
    for _ in range(n_lesions):
        for _attempt in range(20):
            a = float(rng.uniform(6.0, 15.0))
            ratio = float(rng.uniform(0.45, 0.9))
            b = a * ratio
            theta = float(rng.uniform(0.0, np.pi))
            margin = a + 5.0
            cx = float(rng.uniform(margin, w - margin))
            cy = float(rng.uniform(margin, h - margin))
            half_w = float(np.hypot(a * np.cos(theta), b * np.sin(theta)))
            half_h = float(np.hypot(a * np.sin(theta), b * np.cos(theta)))
            box = (cx - half_w - 2.0, cy - half_h - 2.0, cx + half_w + 2.0, cy + half_h + 2.0)
            allow_overlap = rng.random() < cfg.overlap_probability
            if allow_overlap or not _boxes_overlap(box, placed_boxes):
                break
        else:
            continue  # no room left, emit fewer lesions
        placed_boxes.append(box)

        bright = bool(rng.random() < 0.5)
        delta = float(rng.uniform(350.0, 600.0)) * (1.0 if bright else -1.0)
        # lesion spans neighboring slices, shrinking away from the key slice
        n_z = max(1, int(np.floor(b * SPACING[1] / SPACING[0])))
        for dz in range(-n_z, n_z + 1):
            k = key_slice + dz
            if not 0 <= k < d:
                continue
            shrink = float(np.sqrt(max(0.0, 1.0 - (dz / (n_z + 0.8)) ** 2)))
            rr = _ellipse_field(h, w, cx, cy, a * shrink, b * shrink, theta)
            profile = np.clip((1.0 - rr) * 4.0, 0.0, 1.0)
            voxels[k] += delta * profile

        u = np.array([np.cos(theta), np.sin(theta)])
        v = np.array([-u[1], u[0]])
        c = np.array([cx, cy])
        m = RecistMeasurement(
            long_axis=(tuple(c - a * u), tuple(c + a * u)),
            short_axis=(tuple(c - b * v), tuple(c + b * v)),
            spacing_mm=SPACING[1],
        )
        records.append(
            AnnotationRecord(
                patient_id=patient,
                study_id=study,
                series_id=series,
                slice_idx=key_slice,
                measurement=m,
                bbox=box,
                spacing_mm=SPACING[1],
                interval_mm=SPACING[0],
                gender=gender,
                age=age,
                tags=_lesion_tags(cx, cy, w, h, bright, 2 * a * SPACING[1], ratio, cfg),
            ).validate()
        )
    return records


def synth_generate(config, seed, out_dir):
    """Write a complete synthetic dataset; byte-identical for a fixed seed.

    Emits volumes/ (MULV1), annotations.csv, ontology.txt, split files
    (one patient id per line) and gen_log.json with the tag sampling log.
    """
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ont = synthetic_ontology()

    all_records = []
    tag_counts = {t: 0 for t in ont.tags}
    for p in range(config.patients):
        patient = f"p{p:03d}"
        gender = "F" if rng.random() < 0.5 else "M"
        age = int(rng.integers(25, 90))
        for v in range(config.volumes_per_patient):
            study, series = f"s{v}", "r0"
            voxels = _background(rng, config.depth, config.image_size, config.image_size)
            key_slice = config.depth // 2
            records = _place_lesions(
                rng, voxels, key_slice, config, patient, study, series, gender, age
            )
            for rec in records:
                for t in rec.tags:
                    tag_counts[t] += 1
            all_records.extend(records)
            vol = CTVolume(
                voxels=np.clip(np.round(voxels), -1024, 3071).astype(np.int16),
                spacing=SPACING,
                patient_id=patient,
                study_id=study,
                series_id=series,
                gender=gender,
                age=age,
            )
            save_volume(out / "volumes" / f"{patient}_{study}_{series}.mulv", vol)

    save_annotations(out / "annotations.csv", all_records)
    save_ontology(out / "ontology.txt", ont)

    splits = patient_split(all_records, config.split_ratios, seed)
    for name, recs in zip(("train", "val", "test"), splits):
        ids = sorted({r.patient_id for r in recs})
        (out / f"split_{name}.txt").write_text("\n".join(ids) + "\n")

    log = {"config": asdict(config), "seed": seed, "tag_counts": tag_counts,
           "n_records": len(all_records)}
    (out / "gen_log.json").write_text(json.dumps(log, indent=2, sort_keys=True) + "\n")
    return out
