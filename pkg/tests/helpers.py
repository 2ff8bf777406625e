"""Independent oracle helpers shared across test modules.

The NIfTI builders here are written directly against the format with the
struct module, independent of the package's own header codec, so round-trip
and byte-order tests do not check the implementation against itself.
"""

import struct

import numpy as np
from dixonvol.nifti import SegmentationMask, VolumeGeometry, VoxelVolume

DTYPE_CODES = {"uint8": 2, "int16": 4, "int32": 8, "float32": 16, "float64": 64}


def make_geometry(dims=(6, 5, 4), spacing=(1.0, 1.0, 1.0)) -> VolumeGeometry:
    return VolumeGeometry.from_spacing(dims, spacing)


def make_volume(dims=(6, 5, 4), spacing=(1.0, 1.0, 1.0), data=None) -> VoxelVolume:
    geo = make_geometry(dims, spacing)
    if data is None:
        data = np.zeros(dims, dtype=np.float32)
    return VoxelVolume(geometry=geo, data=np.asarray(data, dtype=np.float32))


def make_mask(dims=(6, 5, 4), spacing=(1.0, 1.0, 1.0), voxels=()) -> SegmentationMask:
    data = np.zeros(dims, dtype=np.uint8)
    for idx in voxels:
        data[tuple(idx)] = 1
    return SegmentationMask(geometry=make_geometry(dims, spacing), data=data)


def build_nifti_bytes(
    data: np.ndarray,
    spacing=(1.0, 1.0, 1.0),
    byte_order: str = "<",
    datatype: str = "float32",
    scl_slope: float = 1.0,
    scl_inter: float = 0.0,
    vox_offset: float = 352.0,
    sizeof_hdr: int = 348,
    magic: bytes = b"n+1\x00",
) -> bytes:
    """Hand-packed single-file NIfTI-1, field by field at explicit offsets."""
    dims = data.shape
    code = DTYPE_CODES[datatype]
    bitpix = np.dtype(datatype).itemsize * 8

    hdr = bytearray(348)
    struct.pack_into(byte_order + "i", hdr, 0, sizeof_hdr)
    struct.pack_into(byte_order + "8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into(byte_order + "h", hdr, 70, code)
    struct.pack_into(byte_order + "h", hdr, 72, bitpix)
    struct.pack_into(
        byte_order + "8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0
    )
    struct.pack_into(byte_order + "f", hdr, 108, vox_offset)
    struct.pack_into(byte_order + "f", hdr, 112, scl_slope)
    struct.pack_into(byte_order + "f", hdr, 116, scl_inter)
    struct.pack_into("<4s", hdr, 344, magic)

    payload = np.asarray(data, dtype=np.dtype(datatype).newbyteorder(byte_order))
    body = payload.tobytes(order="F")
    pad = b"\x00" * (int(vox_offset) - 348)
    return bytes(hdr) + pad + body


