"""Phantom generator: oracle consistency between manifest and written files."""

import json

import numpy as np
import pytest

from dixonvol.cohort import load_stack, scan_catalog
from dixonvol.metrics import volume_ml
from dixonvol.nifti import SegmentationMask, read_nifti
from dixonvol.phantom import ellipsoid_mask, generate_cohort


class TestEllipsoid:
    def test_known_sphere_count(self):
        # oracle: enumerate the integer grid directly
        dims, center, r = (11, 11, 11), (5, 5, 5), (3.0, 3.0, 3.0)
        expected = sum(
            1
            for x in range(11)
            for y in range(11)
            for z in range(11)
            if (x - 5) ** 2 + (y - 5) ** 2 + (z - 5) ** 2 <= 9.0
        )
        mask = ellipsoid_mask(dims, center, r)
        assert int(mask.sum()) == expected

    def test_anisotropic_inside_outside(self):
        mask = ellipsoid_mask((20, 20, 20), (10, 10, 10), (6, 3, 2))
        assert mask[10, 10, 10]
        assert mask[15, 10, 10]  # within rx
        assert not mask[10, 15, 10]  # beyond ry
        assert not mask[10, 10, 15]  # beyond rz


class TestGenerateCohort:
    def test_manifest_matches_written_truth(self, tmp_path):
        manifest = generate_cohort(tmp_path, 5, dims=(32, 28, 20), seed=3)
        for entry in manifest["subjects"]:
            truth = read_nifti(tmp_path / "truth" / f"{entry['subject_id']}.nii.gz")
            assert int(truth.data.sum()) == entry["voxel_count"]
            mask = SegmentationMask(
                geometry=truth.geometry, data=(truth.data > 0.5).astype(np.uint8)
            )
            report = volume_ml(mask)
            assert report.volume_ml == entry["volume_ml"]

    def test_catalog_is_scannable(self, tmp_path):
        generate_cohort(tmp_path, 4, dims=(24, 24, 16), seed=1)
        records = scan_catalog(tmp_path / "catalog", expected_dims=(24, 24, 16))
        assert len(records) == 4
        assert all(r.is_valid for r in records)
        stack = load_stack(records[0])
        assert stack.geometry.dims == (24, 24, 16)

    def test_touch_faces_plan_honored(self, tmp_path):
        plan = {0: "x_min", 1: "z_max", 2: "y_max"}
        manifest = generate_cohort(
            tmp_path, 5, dims=(28, 28, 20), seed=2, touch_faces=plan
        )
        subjects = manifest["subjects"]
        assert subjects[0]["touched_faces"] == ["x_min"]
        assert subjects[1]["touched_faces"] == ["z_max"]
        assert subjects[2]["touched_faces"] == ["y_max"]
        assert subjects[3]["touched_faces"] == []
        assert subjects[4]["touched_faces"] == []

    def test_intensities_separate_classes(self, tmp_path):
        manifest = generate_cohort(tmp_path, 2, dims=(20, 20, 16), seed=5)
        threshold = manifest["stub_threshold"]
        for entry in manifest["subjects"]:
            water = read_nifti(
                tmp_path / "catalog" / entry["subject_id"] / "water.nii.gz"
            )
            truth = read_nifti(tmp_path / "truth" / f"{entry['subject_id']}.nii.gz")
            inside = water.data[truth.data > 0.5]
            outside = water.data[truth.data <= 0.5]
            assert inside.min() > threshold
            assert outside.max() < threshold

    def test_deterministic_manifest(self, tmp_path):
        m1 = generate_cohort(tmp_path / "a", 3, dims=(20, 20, 16), seed=9)
        m2 = generate_cohort(tmp_path / "b", 3, dims=(20, 20, 16), seed=9)
        s1 = [dict(s) for s in m1["subjects"]]
        s2 = [dict(s) for s in m2["subjects"]]
        assert s1 == s2

    def test_manifest_file_written(self, tmp_path):
        generate_cohort(tmp_path, 2, dims=(20, 20, 16), seed=0)
        on_disk = json.loads((tmp_path / "phantom_manifest.json").read_text())
        assert len(on_disk["subjects"]) == 2
        assert on_disk["stub_threshold"] == 550.0

    def test_tiny_dims_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_cohort(tmp_path, 1, dims=(6, 8, 8))

    def test_thin_axis_supported(self, tmp_path):
        manifest = generate_cohort(tmp_path, 3, dims=(32, 32, 8), seed=1,
                                   touch_faces={0: "z_min"})
        assert manifest["subjects"][0]["touched_faces"] == ["z_min"]
        assert all(s["voxel_count"] > 0 for s in manifest["subjects"])
