"""Single-file NIfTI-1 subset and the ``ASLV`` raw volume format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import (
    BadMagicError,
    SizeMismatchError,
    TruncatedFileError,
    UnsupportedDatatypeError,
    UnsupportedDimensionsError,
    UnsupportedVersionError,
)


@dataclass(frozen=True)
class VolumeMeta:
    dims: tuple
    voxel_mm: tuple = (2.0, 2.0, 2.0)
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_mm", tuple(float(v) for v in self.voxel_mm))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"VolumeMeta.dims must be 3 positive integers, got {self.dims}")
        if len(self.voxel_mm) != 3 or any(not v > 0 for v in self.voxel_mm):
            raise ValueError(f"VolumeMeta.voxel_mm must be 3 positive values, got {self.voxel_mm}")


# --------------------------------------------------------------------- NIfTI-1

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
# datatype code -> little-endian numpy dtype
NIFTI_DTYPES = {4: "<i2", 16: "<f4", 64: "<f8"}


def read_nifti(path):
    """Read a single-file little-endian NIfTI-1 volume.

    Returns ``(volume, meta)``; the volume is float64 with ``scl_slope`` and
    ``scl_inter`` already applied and has shape ``dim[1:dim[0]+1]``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < NIFTI_HEADER_SIZE:
        raise TruncatedFileError(f"{path}: NIfTI header truncated ({len(raw)} bytes)")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    magic = raw[344:348]
    if sizeof_hdr != NIFTI_HEADER_SIZE or magic != b"n+1\x00":
        raise BadMagicError(f"{path}: not a little-endian single-file NIfTI-1 (magic {magic!r})")
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 4:
        raise UnsupportedDimensionsError(f"{path}: dim[0]={ndim}, only 1 to 4 dimensions supported")
    shape = tuple(int(d) for d in dim[1:ndim + 1])
    if any(d < 1 for d in shape):
        raise UnsupportedDimensionsError(f"{path}: non-positive dimension in {shape}")
    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported NIfTI datatype code {datatype}")
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<2f", raw, 112)
    offset = int(vox_offset)
    if offset < NIFTI_HEADER_SIZE:
        raise SizeMismatchError(f"{path}: vox_offset {vox_offset} lies inside the header")

    dtype = np.dtype(NIFTI_DTYPES[datatype])
    count = int(np.prod(shape))
    needed = offset + count * dtype.itemsize
    if len(raw) < needed:
        raise TruncatedFileError(f"{path}: truncated payload, {len(raw)} of {needed} bytes")
    data = np.frombuffer(raw, dtype, count, offset).reshape(shape, order="F").astype(np.float64)
    if slope == 0 or not np.isfinite(slope):
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0
    if (slope, inter) != (1.0, 0.0):
        data = data * slope + inter

    dims3 = (shape + (1, 1, 1))[:3]
    voxel = tuple(abs(p) if p > 0 else 1.0 for p in pixdim[1:4])
    return data, VolumeMeta(dims3, voxel, float(slope), float(inter))


def write_nifti(path, volume: np.ndarray, meta: VolumeMeta) -> None:
    """Write ``volume`` (1-4 dims) as float32 single-file NIfTI-1."""
    volume = np.asarray(volume)
    if not 1 <= volume.ndim <= 4:
        raise ValueError(f"write_nifti supports 1 to 4 dimensions, got shape {volume.shape}")
    dim = [volume.ndim] + list(volume.shape) + [1] * (7 - volume.ndim)
    pixdim = [1.0] + list(meta.voxel_mm) + [1.0] * 4

    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    hdr[38] = ord("r")  # 'regular'
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<hh", hdr, 70, 16, 32)  # float32, 32 bits
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(NIFTI_VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2 | 8  # xyzt_units: mm, seconds
    hdr[344:348] = b"n+1\x00"

    payload = np.asarray(volume, "<f4").tobytes(order="F")
    Path(path).write_bytes(bytes(hdr) + b"\x00" * 4 + payload)


# ------------------------------------------------------------------------ ASLV

RAW_MAGIC = b"ASLV"
RAW_VERSION = 1
RAW_HEADER_SIZE = 32


def write_raw(path, volume: np.ndarray, meta: VolumeMeta) -> None:
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"ASLV volumes are 3-D, got shape {volume.shape}")
    header = RAW_MAGIC + struct.pack("<I3I3f", RAW_VERSION, *volume.shape, *meta.voxel_mm)
    Path(path).write_bytes(header + np.ascontiguousarray(volume, "<f4").tobytes())


def read_raw(path):
    raw = Path(path).read_bytes()
    if len(raw) < RAW_HEADER_SIZE:
        raise TruncatedFileError(f"{path}: ASLV header truncated ({len(raw)} bytes)")
    if raw[:4] != RAW_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {RAW_MAGIC!r}")
    version, *rest = struct.unpack_from("<I3I3f", raw, 4)
    if version != RAW_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported ASLV version {version}")
    dims, voxel = tuple(rest[:3]), tuple(rest[3:])
    if any(d < 1 for d in dims):
        raise UnsupportedDimensionsError(f"{path}: non-positive dimension in {dims}")
    expected = RAW_HEADER_SIZE + 4 * int(np.prod(dims))
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: truncated payload, {len(raw)} of {expected} bytes")
    if len(raw) != expected:
        raise SizeMismatchError(f"{path}: file is {len(raw)} bytes, header implies {expected}")
    try:
        meta = VolumeMeta(dims, voxel)
    except ValueError as exc:
        raise SizeMismatchError(f"{path}: {exc}") from None
    data = np.frombuffer(raw, "<f4", offset=RAW_HEADER_SIZE).reshape(dims).astype(np.float64)
    return data, meta


def read_volume(path):
    """Dispatch on file suffix: ``.nii`` or ``.aslv``."""
    return read_nifti(path) if str(path).endswith(".nii") else read_raw(path)


def write_volume(path, volume, meta: VolumeMeta) -> None:
    if str(path).endswith(".nii"):
        write_nifti(path, volume, meta)
    else:
        write_raw(path, volume, meta)
