"""CT volumes and the MULV1 binary volume format.

MULV1 layout: magic ``MULV1``; extents D, H, W as 64-bit little-endian
unsigned; spacing z, y, x as 64-bit little-endian reals; one gender byte
(0=F, 1=M, 2=unknown); one age byte (255=unknown); then D*H*W raw
little-endian int16 voxels in row-major order.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

MAGIC = b"MULV1"
HU_MIN, HU_MAX = -1024, 3071

_GENDER_TO_BYTE = {"F": 0, "M": 1, "unknown": 2}
_BYTE_TO_GENDER = {v: k for k, v in _GENDER_TO_BYTE.items()}


@dataclass
class CTVolume:
    voxels: np.ndarray  # [D, H, W] int16 HU
    spacing: tuple  # (z, y, x) mm
    patient_id: str = ""
    study_id: str = ""
    series_id: str = ""
    gender: str = "unknown"
    age: int = None  # years, None if unknown

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise DataError(f"volume must be 3-D, got shape {self.voxels.shape}")
        if any(s <= 0 for s in self.spacing):
            raise DataError(f"spacing must be positive, got {self.spacing}")
        if self.gender not in _GENDER_TO_BYTE:
            raise DataError(f"gender must be F, M or unknown, got {self.gender!r}")
        self.voxels = np.clip(self.voxels, HU_MIN, HU_MAX).astype(np.int16)

    @property
    def shape(self):
        return self.voxels.shape


def save_volume(path, vol):
    d, h, w = vol.voxels.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3Q", d, h, w))
        fh.write(struct.pack("<3d", *vol.spacing))
        fh.write(bytes([_GENDER_TO_BYTE[vol.gender]]))
        fh.write(bytes([255 if vol.age is None else min(int(vol.age), 254)]))
        fh.write(np.ascontiguousarray(vol.voxels, dtype="<i2").tobytes())


def load_volume(path, patient_id="", study_id="", series_id=""):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a MULV1 volume")
        d, h, w = struct.unpack("<3Q", fh.read(24))
        spacing = struct.unpack("<3d", fh.read(24))
        gender_byte, age_byte = fh.read(1)[0], fh.read(1)[0]
        buf = fh.read(2 * d * h * w)
        if len(buf) != 2 * d * h * w:
            raise DataError(f"{path}: truncated voxel data")
    voxels = np.frombuffer(buf, dtype="<i2").reshape(d, h, w)
    gender = _BYTE_TO_GENDER.get(gender_byte)
    if gender is None:
        raise DataError(f"{path}: bad gender byte {gender_byte}")
    return CTVolume(
        voxels=voxels.copy(),
        spacing=spacing,
        patient_id=patient_id,
        study_id=study_id,
        series_id=series_id,
        gender=gender,
        age=None if age_byte == 255 else int(age_byte),
    )


def encode_gender_age(gender, age):
    """Numeric features for the score refinement layer input."""
    g = {"F": 0.0, "M": 1.0}.get(gender, 0.5)
    a = 0.5 if age is None else float(age) / 100.0
    return g, a
