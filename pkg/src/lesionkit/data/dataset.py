"""Dataset access: preprocessed volumes, sample assembly, augmentation."""

from pathlib import Path

import numpy as np

from ..errors import DataError
from ..ontology import NEGATIVE, expand_labels, load_ontology, reliable_negatives
from . import preprocess
from .augment import AugmentConfig, augment_sample
from .records import Sample, load_annotations
from .volume import load_volume


def canonical_slice_index(record):
    """Slice index after z-resampling to the 2 mm interval."""
    return int(round(record.slice_idx * record.interval_mm / preprocess.TARGET_INTERVAL_MM))


class LesionDataset:
    """Annotation CSV + MULV1 volumes + ontology, with a preprocess cache."""

    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "annotations.csv").exists():
            raise DataError(f"{root}: missing annotations.csv")
        self.records = load_annotations(self.root / "annotations.csv")
        self.ontology = load_ontology(self.root / "ontology.txt")
        self._splits = self._load_splits()
        self._groups = {}
        for rec in self.records:
            key = (*rec.volume_key, canonical_slice_index(rec))
            self._groups.setdefault(key, []).append(rec)
        self._cache = {}

    def _load_splits(self):
        splits = {}
        for name in ("train", "val", "test"):
            path = self.root / f"split_{name}.txt"
            if path.exists():
                splits[name] = {l.strip() for l in path.read_text().splitlines() if l.strip()}
        return splits

    def sample_keys(self, split=None):
        keys = sorted(self._groups)
        if split is None:
            return keys
        if split not in self._splits:
            raise DataError(f"no split file for {split!r}")
        allowed = self._splits[split]
        return [k for k in keys if k[0] in allowed]

    def _volume_path(self, volume_key):
        patient, study, series = volume_key
        return self.root / "volumes" / f"{patient}_{study}_{series}.mulv"

    def _preprocessed(self, volume_key):
        """window -> resample -> clip, with annotations kept consistent."""
        if volume_key in self._cache:
            return self._cache[volume_key]
        vol = load_volume(self._volume_path(volume_key), *volume_key)
        windowed = preprocess.hu_window(vol.voxels)
        resampled, (sz, sy, sx) = preprocess.resample(windowed, vol.spacing)
        if abs(sy - sx) > 1e-9:
            raise DataError("anisotropic in-plane spacing is not supported")
        clipped, (oy, ox) = preprocess.clip_black_borders(resampled)
        recs = [
            r.transformed(scale_xy=sx, scale_z=sz, offset_xy=(-ox, -oy))
            for r in self.records
            if r.volume_key == volume_key
        ]
        entry = (clipped, recs, vol)
        self._cache[volume_key] = entry
        return entry

    def _tag_vector(self, tags):
        """Expanded labels with exclusivity-derived reliable negatives."""
        vec = expand_labels(self.ontology.label_vector(tags), self.ontology)
        for i in reliable_negatives(vec, self.ontology):
            vec[i] = NEGATIVE
        return vec

    def load_sample(self, key, rng=None, augment_cfg=None):
        """Assemble one Sample; returns None if augmentation rejects it."""
        volume_key, key_slice = key[:3], key[3]
        stack, recs, vol = self._preprocessed(volume_key)
        slice_recs = [r for r in recs if r.slice_idx == key_slice]

        if augment_cfg is not None and augment_cfg.enabled and rng is not None and slice_recs:
            drawn = augment_sample(stack, key_slice, slice_recs, rng, augment_cfg)
            if drawn is None:
                return None
            nine, moved = drawn
        else:
            nine = preprocess.extract_slices(stack, key_slice)
            moved = slice_recs

        ont = self.ontology
        if moved:
            tag_vectors = np.stack([self._tag_vector(r.tags) for r in moved])
            boxes = np.array([r.bbox for r in moved], dtype=np.float64)
            measurements = [r.measurement for r in moved]
            spacing = moved[0].spacing_mm
        else:
            tag_vectors = np.zeros((0, len(ont)), dtype=np.int8)
            boxes = np.zeros((0, 4))
            measurements = []
            spacing = preprocess.TARGET_INPLANE_MM

        return Sample(
            images=preprocess.group_slices(nine),
            gt_boxes=boxes,
            gt_measurements=measurements,
            gt_tag_vectors=tag_vectors,
            spacing_mm=spacing,
            gender=vol.gender,
            age=vol.age,
            key=key,
        )

    def tag_counts(self, split="train"):
        """(positives, negatives) per tag over expanded labels in a split.

        Unknown labels count toward neither side; reliable negatives from
        exclusivity count as negatives.
        """
        from ..ontology import NEGATIVE, POSITIVE, reliable_negatives

        ont = self.ontology
        counts = np.zeros((len(ont), 2), dtype=np.int64)
        allowed = self._splits.get(split)
        for rec in self.records:
            if allowed is not None and rec.patient_id not in allowed:
                continue
            vec = expand_labels(ont.label_vector(rec.tags), ont)
            for i in reliable_negatives(vec, ont):
                vec[i] = NEGATIVE
            counts[:, 0] += vec == POSITIVE
            counts[:, 1] += vec == NEGATIVE
        return counts
