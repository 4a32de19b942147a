"""Volume I/O, preprocessing, augmentation, splitting, synthetic data."""

from .augment import AugmentConfig, augment_sample
from .dataset import LesionDataset, canonical_slice_index
from .preprocess import (
    clip_black_borders,
    extract_slices,
    group_slices,
    hu_window,
    resample,
)
from .records import (
    AnnotationRecord,
    Sample,
    load_annotations,
    patient_split,
    save_annotations,
)
from .synth import SynthConfig, synth_generate, synthetic_ontology
from .volume import CTVolume, encode_gender_age, load_volume, save_volume

__all__ = [
    "AnnotationRecord",
    "AugmentConfig",
    "CTVolume",
    "LesionDataset",
    "Sample",
    "SynthConfig",
    "augment_sample",
    "canonical_slice_index",
    "clip_black_borders",
    "encode_gender_age",
    "extract_slices",
    "group_slices",
    "hu_window",
    "load_annotations",
    "load_volume",
    "patient_split",
    "resample",
    "save_annotations",
    "save_volume",
    "synth_generate",
    "synthetic_ontology",
]
