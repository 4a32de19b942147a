"""Parameter checkpoint file.

Layout: magic ``MULW1``, then one record per parameter in order:
name length, name bytes (utf-8), rank, extents, raw values. All integers
are 64-bit little-endian unsigned; values are 64-bit little-endian reals.
"""

import struct
from collections import OrderedDict

import numpy as np

from ..errors import DataError

MAGIC = b"MULW1"


def save_checkpoint(path, named_arrays):
    """Write (name, ndarray) pairs; iteration order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in named_arrays:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an OrderedDict name -> float64 array."""
    out = OrderedDict()
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a MULW1 checkpoint")
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise DataError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<Q", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise DataError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return out
