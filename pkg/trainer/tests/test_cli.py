"""Trainer CLI wiring over the file-format boundary (manifest JSON, NIfTIs)."""

import json

import torch
import yaml

from dixonvol.cohort import make_splits
from dixontrain.cli import main

from conftest import DIMS


def test_cv_final_export_flow(small_cohort, tmp_path):
    root, _, subjects = small_cohort
    ids = [s.subject_id for s in subjects]
    manifest = make_splits(ids, sizes=(10, 2, 0), n_folds=5, seed=3)
    manifest_path = tmp_path / "split.json"
    manifest.save(manifest_path)

    config_path = tmp_path / "train.yaml"
    config_path.write_text(yaml.safe_dump({
        "architecture": "unet3d",
        "max_epochs": 1,
        "early_stopping_patience": 1,
        "seed": 2,
    }))
    common = [
        "--catalog", str(root / "catalog"),
        "--truth", str(root / "truth"),
        "--manifest", str(manifest_path),
        "--config", str(config_path),
    ]

    assert main(["cv", *common, "--out", str(tmp_path / "cv")]) == 0
    table = (tmp_path / "cv" / "cv_results.csv").read_text().splitlines()
    assert table[0] == "model,mean,sd"
    folds = json.loads((tmp_path / "cv" / "cv_folds.json").read_text())
    assert len(folds["fold_dice"]) == 5

    assert main(["final", *common, "--out", str(tmp_path / "final")]) == 0
    checkpoint = tmp_path / "final" / "final_model.ckpt"
    assert checkpoint.exists()
    payload = torch.load(checkpoint, map_location="cpu", weights_only=False)
    assert payload["config"]["architecture"] == "unet3d"

    assert main([
        "export",
        "--checkpoint", str(checkpoint),
        "--out", str(tmp_path / "graph.pt2"),
        "--input-shape", "3", *map(str, DIMS),
        "--verify-catalog", str(root / "catalog"),
        "--verify-truth", str(root / "truth"),
    ]) == 0
    sidecar = json.loads((tmp_path / "graph.meta.json").read_text())
    assert sidecar["is_3d"] is True
    assert sidecar["decision"]["kind"] == "sigmoid"


def test_bad_command_exit_code(small_cohort, tmp_path):
    root, _, _ = small_cohort
    rc = main([
        "cv",
        "--catalog", str(root / "catalog"),
        "--truth", str(root / "truth"),
        "--manifest", str(tmp_path / "missing.json"),
        "--out", str(tmp_path / "cv"),
    ])
    assert rc == 1
