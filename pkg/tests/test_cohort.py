"""Catalog scanning, exclusion accounting, channel stacking, split generation."""

import numpy as np
import pytest

from dixonvol.cohort import (
    ExclusionKind,
    SplitManifest,
    exclusion_counts,
    load_stack,
    make_splits,
    scan_catalog,
)
from dixonvol.errors import GeometryMismatch, IoFailure, SizeMismatch
from dixonvol.nifti import write_nifti

from helpers import make_volume

DIMS = (10, 8, 6)


def write_subject(root, subject_id, dims=DIMS, channels=("water", "fat", "inphase"),
                  spacing=(1.0, 1.0, 1.0)):
    subject_dir = root / subject_id
    subject_dir.mkdir(parents=True, exist_ok=True)
    for name in channels:
        write_nifti(make_volume(dims=dims, spacing=spacing), subject_dir / f"{name}.nii.gz")
    return subject_dir


@pytest.fixture
def catalog(tmp_path):
    """10 subjects: 6 valid, 1 empty dir, 2 missing fat, 1 wrong dims."""
    root = tmp_path / "catalog"
    for i in range(6):
        write_subject(root, f"s{i:02d}")
    (root / "s06").mkdir(parents=True)  # empty: missing all data
    write_subject(root, "s07", channels=("water", "inphase"))
    write_subject(root, "s08", channels=("water", "inphase"))
    write_subject(root, "s09", dims=(10, 8, 5))  # one slice short
    return root


class TestScanCatalog:
    def test_fixture_classification(self, catalog):
        records = scan_catalog(catalog, expected_dims=DIMS)
        counts = exclusion_counts(records)
        assert counts == {
            "valid": 6,
            "missing_all_data": 1,
            "missing_window_file": 2,
            "dimension_mismatch": 1,
        }
        by_id = {r.subject_id: r for r in records}
        assert by_id["s06"].exclusion.kind is ExclusionKind.MISSING_ALL_DATA
        assert by_id["s07"].exclusion.kind is ExclusionKind.MISSING_WINDOW_FILE
        assert by_id["s09"].exclusion.kind is ExclusionKind.DIMENSION_MISMATCH

    def test_counts_sum_to_total(self, catalog):
        records = scan_catalog(catalog, expected_dims=DIMS)
        counts = exclusion_counts(records)
        assert sum(counts.values()) == len(records) == 10

    def test_empty_root(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert scan_catalog(tmp_path / "empty", expected_dims=DIMS) == []

    def test_all_valid(self, tmp_path):
        root = tmp_path / "ok"
        for i in range(3):
            write_subject(root, f"v{i}")
        counts = exclusion_counts(scan_catalog(root, expected_dims=DIMS))
        assert counts["valid"] == 3
        assert sum(v for k, v in counts.items() if k != "valid") == 0

    def test_unreadable_root(self, tmp_path):
        with pytest.raises(IoFailure):
            scan_catalog(tmp_path / "missing", expected_dims=DIMS)

    def test_parallel_scan_matches_serial(self, catalog):
        serial = scan_catalog(catalog, expected_dims=DIMS, workers=1)
        parallel = scan_catalog(catalog, expected_dims=DIMS, workers=4)
        assert [(r.subject_id, r.is_valid) for r in serial] == [
            (r.subject_id, r.is_valid) for r in parallel
        ]

    def test_corrupt_header_becomes_exclusion(self, tmp_path):
        root = tmp_path / "c"
        write_subject(root, "good")
        bad_dir = root / "bad"
        bad_dir.mkdir()
        for name in ("water", "fat", "inphase"):
            (bad_dir / f"{name}.nii").write_bytes(b"\x00" * 400)
        records = scan_catalog(root, expected_dims=DIMS)
        by_id = {r.subject_id: r for r in records}
        assert by_id["good"].is_valid
        assert not by_id["bad"].is_valid


class TestLoadStack:
    def test_valid_subject(self, tmp_path):
        root = tmp_path / "one"
        write_subject(root, "s00")
        (record,) = scan_catalog(root, expected_dims=DIMS)
        stack = load_stack(record)
        assert stack.geometry.dims == DIMS
        assert len(stack.channels) == 3

    def test_spacing_mismatch_rejected(self, tmp_path):
        root = tmp_path / "two"
        subject_dir = root / "s00"
        subject_dir.mkdir(parents=True)
        write_nifti(make_volume(dims=DIMS, spacing=(2, 2, 4)), subject_dir / "water.nii.gz")
        write_nifti(make_volume(dims=DIMS, spacing=(2, 2, 3)), subject_dir / "fat.nii.gz")
        write_nifti(make_volume(dims=DIMS, spacing=(2, 2, 4)), subject_dir / "inphase.nii.gz")
        (record,) = scan_catalog(root, expected_dims=DIMS)
        assert record.is_valid  # dims match; spacing is checked at load time
        with pytest.raises(GeometryMismatch):
            load_stack(record)

    def test_excluded_record_rejected(self, catalog):
        records = scan_catalog(catalog, expected_dims=DIMS)
        excluded = next(r for r in records if not r.is_valid)
        with pytest.raises(ValueError):
            load_stack(excluded)


class TestMakeSplits:
    def test_reference_sizes_and_folds(self):
        ids = [f"id{i:04d}" for i in range(350)]
        manifest = make_splits(ids, sizes=(313, 37, 12), n_folds=5, seed=42)
        assert len(manifest.train_ids) == 313
        assert len(manifest.test_ids) == 37
        assert len(manifest.rt_ids) == 12
        # oracle: 313 = 3*63 + 2*62
        assert sorted((len(f) for f in manifest.folds), reverse=True) == [63, 63, 63, 62, 62]

    def test_deterministic_bytes(self, tmp_path):
        ids = [f"id{i:04d}" for i in range(350)]
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        make_splits(ids, sizes=(313, 37, 12), n_folds=5, seed=42).save(a)
        make_splits(list(reversed(ids)), sizes=(313, 37, 12), n_folds=5, seed=42).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seed_differs(self):
        ids = [f"id{i:04d}" for i in range(50)]
        m1 = make_splits(ids, sizes=(40, 10, 3), n_folds=5, seed=1)
        m2 = make_splits(ids, sizes=(40, 10, 3), n_folds=5, seed=2)
        assert m1.train_ids != m2.train_ids

    def test_size_mismatch(self):
        ids = [f"id{i:04d}" for i in range(350)]
        with pytest.raises(SizeMismatch):
            make_splits(ids, sizes=(313, 36, 12), n_folds=5, seed=42)
        with pytest.raises(SizeMismatch):
            make_splits(ids, sizes=(313, 37, 38), n_folds=5, seed=42)
        with pytest.raises(SizeMismatch):
            make_splits(ids, sizes=(313, 37, 12), n_folds=1, seed=42)

    def test_invariants_random(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n = int(rng.integers(20, 120))
            n_test = int(rng.integers(2, n // 3))
            n_rt = int(rng.integers(0, n_test))
            ids = [f"r{i:05d}" for i in rng.choice(100_000, size=n, replace=False)]
            manifest = make_splits(
                ids, sizes=(n - n_test, n_test, n_rt), n_folds=5, seed=int(rng.integers(1e6))
            )
            assert not set(manifest.train_ids) & set(manifest.test_ids)
            assert set(manifest.rt_ids) <= set(manifest.test_ids)
            fold_all = [fid for fold in manifest.folds for fid in fold]
            assert sorted(fold_all) == sorted(manifest.train_ids)
            sizes = [len(f) for f in manifest.folds]
            assert max(sizes) - min(sizes) <= 1

    def test_roundtrip_file(self, tmp_path):
        ids = [f"id{i:03d}" for i in range(30)]
        manifest = make_splits(ids, sizes=(25, 5, 2), n_folds=5, seed=7)
        manifest.save(tmp_path / "m.json")
        assert SplitManifest.load(tmp_path / "m.json") == manifest


class TestAllowlist:
    def test_scan_respects_allowlist(self, catalog):
        records = scan_catalog(
            catalog, expected_dims=DIMS, id_allowlist={"s00", "s03", "s09"}
        )
        assert [r.subject_id for r in records] == ["s00", "s03", "s09"]
        counts = exclusion_counts(records)
        assert counts["valid"] == 2  # s09 has wrong dims
        assert counts["dimension_mismatch"] == 1

    def test_none_allowlist_scans_everything(self, catalog):
        assert len(scan_catalog(catalog, expected_dims=DIMS, id_allowlist=None)) == 10
