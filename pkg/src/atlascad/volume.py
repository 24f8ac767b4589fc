"""Intensity and label volumes plus the MVOL container.

Arrays are indexed ``data[x, y, z]`` and serialized x-fastest, so the
voxel at ``(x, y, z)`` sits at linear index ``x + nx * (y + ny * z)``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, DataError, TruncationError, VolumeFormatError

MAGIC = b"MVOL"
VERSION = 1
DTYPE_SCALAR = 1
DTYPE_LABEL = 2

# magic, version, dtype code, reserved (u16), dims (3 x u32), spacing (3 x f32)
_HEADER = struct.Struct("<4sBBH3I3f")
HEADER_SIZE = _HEADER.size

_PAYLOAD_DTYPE = {
    DTYPE_SCALAR: np.dtype("<f4"),
    DTYPE_LABEL: np.dtype("<u2"),
}

AORTA = 1
PULMONARY_ARTERY = 2
STRUCTURE_NAMES = {AORTA: "aorta", PULMONARY_ARTERY: "pulmonary_artery"}


def _check_geometry(dims, spacing):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise DataError(f"dims must be 3 positive integers, got {dims}")
    if any(d > 0xFFFFFFFF for d in dims):
        raise DataError(f"dims exceed u32 range: {dims}")
    if len(spacing) != 3:
        raise DataError(f"spacing must have 3 components, got {spacing}")
    # spacing is stored as f32; round now so store/load is an identity
    spacing = tuple(float(np.float32(s)) for s in spacing)
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise DataError(f"spacing must be finite and > 0, got {spacing}")
    return dims, spacing


def _frozen(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """3D intensity grid, stored as float32."""

    dims: tuple
    spacing: tuple
    data: np.ndarray

    def __post_init__(self):
        dims, spacing = _check_geometry(self.dims, self.spacing)
        data = np.asarray(self.data)
        if data.size != int(np.prod(dims)):
            raise DataError(
                f"data has {data.size} values but dims {dims} need {int(np.prod(dims))}"
            )
        if data.dtype.kind not in "fiub":
            raise DataError(f"unsupported intensity dtype {data.dtype}")
        data = np.array(data, dtype=np.float32, order="F").reshape(dims, order="F")
        if not np.all(np.isfinite(data)):
            raise DataError("intensity volume contains non-finite values")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "data", _frozen(data))

    def __eq__(self, other):
        if not isinstance(other, ScalarVolume):
            return NotImplemented
        return (self.dims == other.dims and self.spacing == other.spacing
                and np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """3D integer label grid; 0 is background."""

    dims: tuple
    spacing: tuple
    labels: np.ndarray

    def __post_init__(self):
        dims, spacing = _check_geometry(self.dims, self.spacing)
        labels = np.asarray(self.labels)
        if labels.size != int(np.prod(dims)):
            raise DataError(
                f"labels has {labels.size} values but dims {dims} need {int(np.prod(dims))}"
            )
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise DataError("label values must be integers")
        elif labels.dtype.kind not in "iub":
            raise DataError(f"unsupported label dtype {labels.dtype}")
        if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
            raise DataError("label values must lie in [0, 65535]")
        labels = np.array(labels, dtype=np.uint16, order="F").reshape(dims, order="F")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "labels", _frozen(labels))

    def mask(self, code):
        """Boolean mask of voxels carrying ``code``."""
        if int(code) < 1:
            raise ConfigError(f"structure code must be >= 1, got {code}")
        return self.labels == int(code)

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (self.dims == other.dims and self.spacing == other.spacing
                and np.array_equal(self.labels, other.labels))


Volume = Union[ScalarVolume, LabelVolume]


def same_grid(a, b):
    """True iff ``a`` and ``b`` share dims and spacing (1e-9 relative)."""
    if tuple(a.dims) != tuple(b.dims):
        return False
    for sa, sb in zip(a.spacing, b.spacing):
        if abs(sa - sb) > 1e-9 * max(abs(sa), abs(sb)):
            return False
    return True


def linear_index(dims, x, y, z):
    return x + dims[0] * (y + dims[1] * z)


def store_volume(v, path):
    """Write ``v`` to ``path`` in MVOL format."""
    if isinstance(v, ScalarVolume):
        code, payload = DTYPE_SCALAR, v.data
    elif isinstance(v, LabelVolume):
        code, payload = DTYPE_LABEL, v.labels
    else:
        raise DataError(f"cannot store object of type {type(v).__name__}")
    header = _HEADER.pack(MAGIC, VERSION, code, 0, *v.dims, *v.spacing)
    body = np.asarray(payload, dtype=_PAYLOAD_DTYPE[code]).tobytes(order="F")
    with open(os.fspath(path), "wb") as fh:
        fh.write(header)
        fh.write(body)


def load_volume(path):
    """Read an MVOL file, returning a ScalarVolume or LabelVolume."""
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise VolumeFormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, code, reserved, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    if code not in _PAYLOAD_DTYPE:
        raise VolumeFormatError(f"{path}: unknown dtype code {code}")
    if reserved != 0:
        raise VolumeFormatError(f"{path}: reserved header bytes are not zero")
    dims = (nx, ny, nz)
    if 0 in dims:
        raise VolumeFormatError(f"{path}: zero dimension in {dims}")
    dtype = _PAYLOAD_DTYPE[code]
    expected = nx * ny * nz * dtype.itemsize
    actual = len(raw) - HEADER_SIZE
    if actual != expected:
        raise TruncationError(
            f"{path}: payload is {actual} bytes, dims {dims} require {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype, offset=HEADER_SIZE).reshape(dims, order="F")
    spacing = (sx, sy, sz)
    if code == DTYPE_SCALAR:
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{path}: scalar payload contains non-finite values")
        return ScalarVolume(dims, spacing, arr)
    return LabelVolume(dims, spacing, arr)
