"""NIfTI-1 reader/writer: round trips, scaling, byte order, rejection paths."""

import numpy as np
import pytest

from dixonvol.errors import (
    IoFailure,
    MalformedHeader,
    TruncatedData,
    UnsupportedDatatype,
)
from dixonvol.nifti import (
    SegmentationMask,
    VolumeGeometry,
    VoxelVolume,
    read_header,
    read_nifti,
    voxel_volume_mm3,
    write_nifti,
)

from helpers import build_nifti_bytes, make_geometry, make_mask, make_volume


class TestRoundTrip:
    def test_zero_phantom_identity(self, tmp_path):
        vol = make_volume(dims=(4, 4, 4))
        write_nifti(vol, tmp_path / "z.nii")
        back = read_nifti(tmp_path / "z.nii")
        assert back.geometry.dims == (4, 4, 4)
        assert back.geometry.spacing == (1.0, 1.0, 1.0)
        assert np.array_equal(back.data, vol.data)

    @pytest.mark.parametrize("compress", [False, True])
    @pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.int32, np.float32, np.float64])
    def test_every_datatype_bit_exact(self, tmp_path, dtype, compress):
        rng = np.random.default_rng(3)
        # Values representable exactly in both float32 and the target type.
        if np.issubdtype(dtype, np.integer):
            info = np.iinfo(dtype)
            data = rng.integers(max(info.min, -1000), min(info.max, 1000), (5, 6, 7))
        else:
            data = rng.integers(-1000, 1000, (5, 6, 7))
        vol = make_volume(dims=(5, 6, 7), spacing=(0.5, 2.0, 1.25), data=data)
        path = tmp_path / ("v.nii.gz" if compress else "v.nii")
        write_nifti(vol, path, dtype=dtype)
        back = read_nifti(path)
        assert np.array_equal(back.data, vol.data)
        assert back.geometry.dims == (5, 6, 7)
        assert np.allclose(back.geometry.spacing, (0.5, 2.0, 1.25), atol=1e-6)

    def test_compress_flag_writes_gzip_magic(self, tmp_path):
        write_nifti(make_volume(), tmp_path / "c.nii", compress=True)
        assert (tmp_path / "c.nii").read_bytes()[:2] == b"\x1f\x8b"

    def test_mask_roundtrip_voxel_volume(self, tmp_path):
        voxels = [(x, y, z) for x in range(10) for y in range(10) for z in range(10)]
        mask = make_mask(dims=(12, 12, 12), spacing=(2.0, 2.0, 3.0), voxels=voxels)
        write_nifti(mask, tmp_path / "m.nii.gz")
        back = read_nifti(tmp_path / "m.nii.gz")
        assert voxel_volume_mm3(back.geometry) == 12.0
        assert int(back.data.sum()) == 1000
        # masks serialize as uint8
        assert read_header(tmp_path / "m.nii.gz").datatype == 2

    def test_affine_survives(self, tmp_path):
        geo = VolumeGeometry(
            dims=(3, 3, 3),
            spacing=(1.0, 1.0, 1.0),
            affine=np.array(
                [[0, -1.5, 0, 10], [2.0, 0, 0, -4], [0, 0, 3.0, 7], [0, 0, 0, 1]],
                dtype=np.float64,
            ),
        )
        vol = VoxelVolume(geometry=geo, data=np.zeros((3, 3, 3), np.float32))
        write_nifti(vol, tmp_path / "a.nii")
        back = read_nifti(tmp_path / "a.nii")
        assert np.allclose(back.geometry.affine, geo.affine, atol=1e-5)


class TestScaling:
    def test_slope_intercept_applied(self, tmp_nifti):
        # oracle: header math, 2 * 3 + 1 = 7
        data = np.full((2, 2, 2), 3, dtype=np.int16)
        path = tmp_nifti(
            "s.nii", build_nifti_bytes(data, datatype="int16", scl_slope=2.0, scl_inter=1.0)
        )
        vol = read_nifti(path)
        assert np.all(vol.data == 7.0)
        assert vol.scale == (2.0, 1.0)

    def test_zero_slope_means_unscaled(self, tmp_nifti):
        data = np.full((2, 2, 2), 3, dtype=np.int16)
        path = tmp_nifti("u.nii", build_nifti_bytes(data, datatype="int16", scl_slope=0.0))
        vol = read_nifti(path)
        assert np.all(vol.data == 3.0)
        assert vol.scale == (1.0, 0.0)


class TestByteOrder:
    def test_big_endian_loads_identical(self, tmp_nifti):
        rng = np.random.default_rng(11)
        data = rng.integers(-500, 500, (4, 3, 5)).astype(np.int32)
        little = tmp_nifti("le.nii", build_nifti_bytes(data, byte_order="<", datatype="int32"))
        big = tmp_nifti("be.nii", build_nifti_bytes(data, byte_order=">", datatype="int32"))
        a, b = read_nifti(little), read_nifti(big)
        assert np.array_equal(a.data, b.data)
        assert a.geometry.dims == b.geometry.dims == (4, 3, 5)


class TestRejection:
    def test_wrong_sizeof_hdr(self, tmp_nifti):
        blob = build_nifti_bytes(np.zeros((2, 2, 2), np.float32), sizeof_hdr=347)
        with pytest.raises(MalformedHeader):
            read_nifti(tmp_nifti("bad.nii", blob))

    def test_bad_magic(self, tmp_nifti):
        blob = build_nifti_bytes(np.zeros((2, 2, 2), np.float32), magic=b"abc\x00")
        with pytest.raises(MalformedHeader):
            read_nifti(tmp_nifti("bad.nii", blob))

    def test_unsupported_datatype(self, tmp_nifti):
        blob = bytearray(build_nifti_bytes(np.zeros((2, 2, 2), np.float32)))
        import struct

        struct.pack_into("<h", blob, 70, 128)  # RGB24, unsupported
        struct.pack_into("<h", blob, 72, 24)
        with pytest.raises(UnsupportedDatatype):
            read_nifti(tmp_nifti("rgb.nii", bytes(blob)))

    def test_truncated_payload(self, tmp_nifti):
        blob = build_nifti_bytes(np.ones((4, 4, 4), np.float32))
        with pytest.raises(TruncatedData):
            read_nifti(tmp_nifti("t.nii", blob[:-10]))

    def test_short_file(self, tmp_nifti):
        with pytest.raises(MalformedHeader):
            read_nifti(tmp_nifti("short.nii", b"\x00" * 100))

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_nifti(tmp_path / "nope.nii")

    def test_bitpix_mismatch(self, tmp_nifti):
        blob = bytearray(build_nifti_bytes(np.zeros((2, 2, 2), np.int16), datatype="int16"))
        import struct

        struct.pack_into("<h", blob, 72, 32)
        with pytest.raises(MalformedHeader):
            read_nifti(tmp_nifti("bp.nii", bytes(blob)))


class TestGeometry:
    def test_voxel_volume_identity(self):
        assert voxel_volume_mm3(make_geometry(spacing=(1, 1, 1))) == 1.0

    def test_voxel_volume_forced(self):
        assert voxel_volume_mm3(make_geometry(spacing=(2.0, 2.0, 3.0))) == 12.0

    def test_voxel_volume_derived(self):
        # oracle: independent multiplication 2.232 * 2.232 * 3.0 = 14.945472
        got = voxel_volume_mm3(make_geometry(spacing=(2.232, 2.232, 3.0)))
        assert got == pytest.approx(14.945472, abs=1e-3)

    def test_header_spacing_matches_after_float32_snap(self, tmp_path):
        vol = make_volume(dims=(3, 3, 3), spacing=(2.232, 2.232, 3.0))
        write_nifti(vol, tmp_path / "sp.nii")
        geo = read_nifti(tmp_path / "sp.nii").geometry
        assert voxel_volume_mm3(geo) == pytest.approx(14.945472, abs=1e-3)

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ValueError):
            VolumeGeometry.from_spacing((0, 4, 4), (1, 1, 1))
        with pytest.raises(ValueError):
            VolumeGeometry.from_spacing((4, 4, 4), (0.0, 1, 1))

    def test_positive_and_multiplicative(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = rng.uniform(0.1, 5.0, 3)
            geo = make_geometry(spacing=tuple(s))
            assert voxel_volume_mm3(geo) > 0
            doubled = make_geometry(spacing=(2 * s[0], s[1], s[2]))
            assert voxel_volume_mm3(doubled) == pytest.approx(
                2 * voxel_volume_mm3(geo), rel=1e-12
            )


class TestValueTypes:
    def test_volume_shape_enforced(self):
        with pytest.raises(ValueError):
            VoxelVolume(geometry=make_geometry((4, 4, 4)), data=np.zeros((4, 4, 5), np.float32))

    def test_mask_binary_enforced(self):
        data = np.zeros((6, 5, 4), np.uint8)
        data[0, 0, 0] = 2
        with pytest.raises(ValueError):
            SegmentationMask(geometry=make_geometry(), data=data)
