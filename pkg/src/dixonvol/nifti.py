"""Bit-exact NIfTI-1 reading and writing, plus the volume/mask value types.

Only the NIfTI-1 single-file layout (348-byte header, optional gzip) plus the
.hdr/.img pair variant is handled; NIfTI-2, DICOM and header extensions are
out of scope (extension blocks are skipped via vox_offset, never interpreted).
Supported on-disk datatypes: uint8, int16, int32, float32, float64.

Header fields consumed: sizeof_hdr, dim, datatype, bitpix, pixdim, scl_slope,
scl_inter, vox_offset, magic, srow_x/y/z. Byte order is detected from dim[0]
(valid range 1..7); everything else is carried through untouched. The affine
is metadata only: no resampling or reorientation happens anywhere, all
computation is in voxel space.
"""

from __future__ import annotations

import gzip
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    IoFailure,
    MalformedHeader,
    NonFiniteData,
    TruncatedData,
    UnsupportedDatatype,
)

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
GZIP_MAGIC = b"\x1f\x8b"

# NIfTI-1 datatype code -> numpy dtype (and expected bitpix).
DTYPE_BY_CODE = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
CODE_BY_DTYPE = {v: k for k, v in DTYPE_BY_CODE.items()}

# Fixed 348-byte header layout; offsets per the NIfTI-1 standard.
_HDR_FMT = (
    "i"      # sizeof_hdr
    "10s"    # data_type (unused)
    "18s"    # db_name (unused)
    "i"      # extents (unused)
    "h"      # session_error (unused)
    "c"      # regular (unused)
    "B"      # dim_info
    "8h"     # dim
    "3f"     # intent_p1..p3
    "h"      # intent_code
    "h"      # datatype
    "h"      # bitpix
    "h"      # slice_start
    "8f"     # pixdim
    "f"      # vox_offset
    "f"      # scl_slope
    "f"      # scl_inter
    "h"      # slice_end
    "B"      # slice_code
    "B"      # xyzt_units
    "f"      # cal_max
    "f"      # cal_min
    "f"      # slice_duration
    "f"      # toffset
    "i"      # glmax (unused)
    "i"      # glmin (unused)
    "80s"    # descrip
    "24s"    # aux_file
    "h"      # qform_code
    "h"      # sform_code
    "3f"     # quatern_b/c/d
    "3f"     # qoffset_x/y/z
    "12f"    # srow_x, srow_y, srow_z
    "16s"    # intent_name
    "4s"     # magic
)
assert struct.calcsize("<" + _HDR_FMT) == HEADER_SIZE


@dataclass(frozen=True, eq=False)
class VolumeGeometry:
    """Voxel grid geometry: per-axis counts, spacing in mm, and the affine.

    The affine maps voxel indices to world mm and is carried as metadata
    only; the volumetry itself uses nothing but ``spacing``.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    affine: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(self.spacing) != 3 or any(not (s > 0) for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError("affine must be a 4x4 matrix")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "affine", affine)

    @classmethod
    def from_spacing(
        cls, dims: tuple[int, int, int], spacing: tuple[float, float, float]
    ) -> "VolumeGeometry":
        """Geometry with a diagonal affine built from the spacing."""
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
        return cls(dims=tuple(dims), spacing=tuple(spacing), affine=affine)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume_mm3(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def matches(self, other: "VolumeGeometry", spacing_tol: float = 1e-6) -> bool:
        """Same grid: equal dims, spacing within ``spacing_tol`` per axis."""
        return self.dims == other.dims and all(
            abs(a - b) <= spacing_tol for a, b in zip(self.spacing, other.spacing)
        )


def voxel_volume_mm3(geometry: VolumeGeometry) -> float:
    """Volume of a single voxel in mm^3 (product of the three spacings)."""
    return geometry.voxel_volume_mm3


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """A scalar 3-D grid (one MRI channel or one logit plane) with geometry.

    ``data`` is float32, shaped ``geometry.dims``, already scaled by the
    header (slope, intercept) at load time.
    """

    geometry: VolumeGeometry
    data: np.ndarray
    scale: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.shape != self.geometry.dims:
            raise ValueError(
                f"data shape {data.shape} != geometry dims {self.geometry.dims}"
            )
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Binary 3-D grid aligned to a volume geometry (1 = foreground)."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.shape != self.geometry.dims:
            raise ValueError(
                f"mask shape {data.shape} != geometry dims {self.geometry.dims}"
            )
        if data.size and data.max() > 1:
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class HeaderInfo:
    """Decoded header fields needed downstream, before any payload read."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    datatype: int
    bitpix: int
    vox_offset: int
    scl_slope: float
    scl_inter: float
    magic: bytes
    byte_order: str  # "<" or ">"
    affine: np.ndarray


def _is_gzip(path: Path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(2) == GZIP_MAGIC
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _read_raw(path: Path, n: int | None = None) -> bytes:
    """File contents, transparently gunzipped; first ``n`` bytes if given."""
    try:
        if _is_gzip(path):
            with gzip.open(path, "rb") as fh:
                return fh.read(n) if n is not None else fh.read()
        with open(path, "rb") as fh:
            return fh.read(n) if n is not None else fh.read()
    except (OSError, EOFError, zlib.error) as exc:  # truncated gzip -> EOFError
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _decode_header(blob: bytes, path: Path) -> HeaderInfo:
    if len(blob) < HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than the 348-byte header")

    # Byte order: dim[0] (number of dimensions) must be in 1..7 when read
    # with the correct order.
    order = "<"
    (dim0,) = struct.unpack_from("<h", blob, 40)
    if not 1 <= dim0 <= 7:
        order = ">"
        (dim0,) = struct.unpack_from(">h", blob, 40)
        if not 1 <= dim0 <= 7:
            raise MalformedHeader(f"{path}: dim[0]={dim0} invalid in either byte order")

    fields = struct.unpack(order + _HDR_FMT, blob[:HEADER_SIZE])
    sizeof_hdr = fields[0]
    dim = fields[7:15]
    datatype = fields[19]
    bitpix = fields[20]
    pixdim = fields[22:30]
    vox_offset = fields[30]
    scl_slope = fields[31]
    scl_inter = fields[32]
    srow = fields[52:64]
    magic = fields[65]

    if sizeof_hdr != HEADER_SIZE:
        raise MalformedHeader(f"{path}: sizeof_hdr={sizeof_hdr}, expected 348")
    if magic not in (MAGIC_SINGLE, MAGIC_PAIR):
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if datatype not in DTYPE_BY_CODE:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype} not supported")
    if bitpix != DTYPE_BY_CODE[datatype].itemsize * 8:
        raise MalformedHeader(
            f"{path}: bitpix={bitpix} inconsistent with datatype {datatype}"
        )

    ndim = dim[0]
    if ndim < 3 or any(d != 1 for d in dim[4 : ndim + 1]):
        raise MalformedHeader(f"{path}: only 3-D volumes supported, dim={dim}")
    dims = (int(dim[1]), int(dim[2]), int(dim[3]))
    if any(d < 1 for d in dims):
        raise MalformedHeader(f"{path}: non-positive dimension in {dims}")
    spacing = (float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    if any(not (s > 0) for s in spacing):
        raise MalformedHeader(f"{path}: non-positive pixdim {spacing}")

    srow_mat = np.array(srow, dtype=np.float64).reshape(3, 4)
    if np.any(srow_mat):
        affine = np.vstack([srow_mat, [0.0, 0.0, 0.0, 1.0]])
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    offset = int(vox_offset)
    if magic == MAGIC_SINGLE and offset < HEADER_SIZE + 4:
        # 348-byte header plus the 4-byte extension flag.
        offset = HEADER_SIZE + 4
    if magic == MAGIC_PAIR:
        offset = max(offset, 0)

    slope = float(scl_slope)
    inter = float(scl_inter)
    if not np.isfinite(slope):
        slope = 0.0
    if not np.isfinite(inter):
        inter = 0.0

    return HeaderInfo(
        dims=dims,
        spacing=spacing,
        datatype=int(datatype),
        bitpix=int(bitpix),
        vox_offset=offset,
        scl_slope=slope,
        scl_inter=inter,
        magic=magic,
        byte_order=order,
        affine=affine,
    )


def read_header(path: str | Path) -> HeaderInfo:
    """Decode only the header; used for cheap catalog validation."""
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"no such file: {path}")
    blob = _read_raw(path, HEADER_SIZE)
    return _decode_header(blob, path)


def read_nifti(path: str | Path) -> VoxelVolume:
    """Load a NIfTI-1 volume, applying (slope, intercept) scaling.

    Data comes back as float32 shaped ``dims`` (Fortran voxel order decoded,
    stored C-contiguous). Raises MalformedHeader / UnsupportedDatatype /
    TruncatedData / NonFiniteData / IoFailure.
    """
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"no such file: {path}")
    blob = _read_raw(path)
    info = _decode_header(blob, path)

    if info.magic == MAGIC_PAIR:
        img_path = _pair_img_path(path)
        if img_path is None:
            raise IoFailure(f"{path}: missing companion .img file")
        blob = _read_raw(img_path)

    dtype = DTYPE_BY_CODE[info.datatype].newbyteorder(info.byte_order)
    n_bytes = info.dims[0] * info.dims[1] * info.dims[2] * dtype.itemsize
    payload = blob[info.vox_offset : info.vox_offset + n_bytes]
    if len(payload) < n_bytes:
        raise TruncatedData(
            f"{path}: payload {len(payload)} bytes, header implies {n_bytes}"
        )

    raw = np.frombuffer(payload, dtype=dtype).reshape(info.dims, order="F")
    data = np.ascontiguousarray(raw, dtype=np.float32)
    slope, inter = info.scl_slope, info.scl_inter
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data * np.float32(slope) + np.float32(inter)
    else:
        slope, inter = 1.0, 0.0
    if not np.isfinite(data).all():
        raise NonFiniteData(f"{path}: non-finite intensities after scaling")

    geometry = VolumeGeometry(dims=info.dims, spacing=info.spacing, affine=info.affine)
    return VoxelVolume(geometry=geometry, data=data, scale=(slope, inter))


def _pair_img_path(hdr_path: Path) -> Path | None:
    name = hdr_path.name
    for hdr_suffix, img_suffix in ((".hdr.gz", ".img.gz"), (".hdr", ".img")):
        if name.endswith(hdr_suffix):
            candidate = hdr_path.with_name(name[: -len(hdr_suffix)] + img_suffix)
            return candidate if candidate.is_file() else None
    return None


def _encode_header(
    geometry: VolumeGeometry, datatype: int, descrip: bytes = b"dixonvol"
) -> bytes:
    dtype = DTYPE_BY_CODE[datatype]
    dim = (3, *geometry.dims, 1, 1, 1, 1)
    pixdim = (1.0, *geometry.spacing, 0.0, 0.0, 0.0, 0.0)
    srow = tuple(float(v) for v in np.asarray(geometry.affine, dtype=np.float64)[:3].ravel())
    return struct.pack(
        "<" + _HDR_FMT,
        HEADER_SIZE,       # sizeof_hdr
        b"",               # data_type
        b"",               # db_name
        0,                 # extents
        0,                 # session_error
        b"r",              # regular
        0,                 # dim_info
        *dim,              # dim
        0.0, 0.0, 0.0,     # intent_p1..p3
        0,                 # intent_code
        datatype,          # datatype
        dtype.itemsize * 8,  # bitpix
        0,                 # slice_start
        *pixdim,           # pixdim
        352.0,             # vox_offset
        1.0,               # scl_slope
        0.0,               # scl_inter
        0,                 # slice_end
        0,                 # slice_code
        2,                 # xyzt_units: mm
        0.0, 0.0,          # cal_max, cal_min
        0.0, 0.0,          # slice_duration, toffset
        0, 0,              # glmax, glmin
        descrip[:80],      # descrip
        b"",               # aux_file
        0,                 # qform_code
        1,                 # sform_code
        0.0, 0.0, 0.0,     # quatern_b/c/d
        0.0, 0.0, 0.0,     # qoffset_x/y/z
        *srow,             # srow_x/y/z
        b"",               # intent_name
        MAGIC_SINGLE,      # magic
    )


def write_nifti(
    volume: VoxelVolume | SegmentationMask,
    path: str | Path,
    compress: bool | None = None,
    dtype: np.dtype | type | None = None,
) -> None:
    """Write a volume or mask as a single-file little-endian NIfTI-1.

    ``compress`` defaults to the path suffix (``.gz``). Masks are written as
    uint8; volumes default to float32. ``dtype`` selects another supported
    on-disk type; values are cast, so the caller picks a type that represents
    the data exactly when bit-exact round-trips matter. The write is atomic
    (temp file + rename) and gzip output is deterministic (mtime pinned).
    """
    path = Path(path)
    if compress is None:
        compress = path.name.endswith(".gz")

    if dtype is None:
        dtype = np.uint8 if isinstance(volume, SegmentationMask) else np.float32
    dtype = np.dtype(dtype)
    if dtype not in CODE_BY_DTYPE:
        raise UnsupportedDatatype(f"cannot write datatype {dtype}")

    header = _encode_header(volume.geometry, CODE_BY_DTYPE[dtype])
    payload = np.asarray(volume.data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    blob = header + b"\x00\x00\x00\x00" + payload

    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            if compress:
                with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                    gz.write(blob)
            else:
                fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise IoFailure(f"cannot write {path}: {exc}") from exc
