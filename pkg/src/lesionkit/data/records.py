"""Annotation records, the annotation CSV, and patient-level splitting."""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DataError
from ..geometry import RecistMeasurement

CSV_HEADER = [
    "patient_id", "study_id", "series_id", "slice_idx",
    "m_x1", "m_y1", "m_x2", "m_y2", "m_x3", "m_y3", "m_x4", "m_y4",
    "bbox_x1", "bbox_y1", "bbox_x2", "bbox_y2",
    "spacing_mm", "interval_mm", "gender", "age", "tags",
]


@dataclass
class AnnotationRecord:
    patient_id: str
    study_id: str
    series_id: str
    slice_idx: int
    measurement: RecistMeasurement
    bbox: tuple  # (x1, y1, x2, y2)
    spacing_mm: float
    interval_mm: float
    gender: str = "unknown"
    age: int = None
    tags: tuple = ()

    def validate(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise DataError(f"degenerate bounding box {self.bbox}")
        eps = 1e-6
        for ex, ey in self.measurement.endpoints():
            if not (x1 - eps <= ex <= x2 + eps and y1 - eps <= ey <= y2 + eps):
                raise DataError(
                    f"measurement endpoint ({ex:.2f}, {ey:.2f}) outside box {self.bbox}"
                )
        self.measurement.validate()
        return self

    @property
    def volume_key(self):
        return (self.patient_id, self.study_id, self.series_id)

    @property
    def sample_key(self):
        return (*self.volume_key, self.slice_idx)

    def transformed(self, scale_xy=1.0, scale_z=1.0, offset_xy=(0.0, 0.0)):
        """Apply the resample/clip coordinate maps to box and measurement."""
        ox, oy = offset_xy

        def pt(p):
            return (p[0] * scale_xy + ox, p[1] * scale_xy + oy)

        m = self.measurement
        new_m = RecistMeasurement(
            long_axis=(pt(m.long_axis[0]), pt(m.long_axis[1])),
            short_axis=(pt(m.short_axis[0]), pt(m.short_axis[1])),
            spacing_mm=m.spacing_mm / scale_xy,
        )
        x1, y1, x2, y2 = self.bbox
        return replace(
            self,
            slice_idx=int(round(self.slice_idx * scale_z)),
            measurement=new_m,
            bbox=(x1 * scale_xy + ox, y1 * scale_xy + oy,
                  x2 * scale_xy + ox, y2 * scale_xy + oy),
            spacing_mm=self.spacing_mm / scale_xy,
            interval_mm=self.interval_mm * (1.0 if scale_z == 1.0 else 1.0 / scale_z),
        )


def _row_of(rec):
    e = rec.measurement.endpoints().ravel()
    return [
        rec.patient_id, rec.study_id, rec.series_id, rec.slice_idx,
        *(f"{v:.4f}" for v in e),
        *(f"{v:.4f}" for v in rec.bbox),
        f"{rec.spacing_mm:.4f}", f"{rec.interval_mm:.4f}",
        rec.gender, "" if rec.age is None else rec.age,
        "|".join(rec.tags),
    ]


def save_annotations(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(_row_of(rec))


def load_annotations(path):
    records = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DataError(f"{path}: unexpected annotation CSV header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{path}:{lineno}: wrong field count")
            try:
                vals = [float(v) for v in row[4:18]]
                rec = AnnotationRecord(
                    patient_id=row[0],
                    study_id=row[1],
                    series_id=row[2],
                    slice_idx=int(row[3]),
                    measurement=RecistMeasurement(
                        long_axis=((vals[0], vals[1]), (vals[2], vals[3])),
                        short_axis=((vals[4], vals[5]), (vals[6], vals[7])),
                        spacing_mm=vals[12],
                    ),
                    bbox=tuple(vals[8:12]),
                    spacing_mm=vals[12],
                    interval_mm=vals[13],
                    gender=row[18],
                    age=None if row[19] == "" else int(row[19]),
                    tags=tuple(t for t in row[20].split("|") if t),
                )
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec.validate())
    return records


def patient_split(records, ratios=(0.70, 0.15, 0.15), seed=0):
    """Deterministic patient-level split into (train, val, test) record lists.

    Validation and test get floor(ratio * patients) patients each; the
    remainder goes to train, so every record of a patient stays together.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    patients = sorted({r.patient_id for r in records})
    if len(patients) < 3:
        raise DataError("need at least 3 patients to split")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    n_val = int(np.floor(ratios[1] * len(patients)))
    n_test = int(np.floor(ratios[2] * len(patients)))
    n_train = len(patients) - n_val - n_test
    groups = (
        set(order[:n_train]),
        set(order[n_train:n_train + n_val]),
        set(order[n_train + n_val:]),
    )
    return tuple([r for r in records if r.patient_id in g] for g in groups)


@dataclass
class Sample:
    """One training/eval unit: 9 slices grouped as 3 three-channel images."""

    images: np.ndarray  # [3, 3, H, W] floats in [0, 255]
    gt_boxes: np.ndarray  # [G, 4]
    gt_measurements: list
    gt_tag_vectors: np.ndarray  # [G, C] int8, expanded
    spacing_mm: float
    gender: str = "unknown"
    age: int = None
    key: tuple = ()

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[:2] != (3, 3):
            raise DataError(f"sample images must be [3,3,H,W], got {self.images.shape}")
        self.gt_boxes = np.asarray(self.gt_boxes, dtype=np.float64).reshape(-1, 4)

    @property
    def image_extent(self):
        return self.images.shape[2:]

    @property
    def key_plane(self):
        return self.images[1, 1]  # key slice is the center channel of the center image
