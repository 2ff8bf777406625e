"""Exported graph driven through the volumetry CLI, pool workers included."""

import csv
import subprocess
import sys

import torch
import yaml

from dixonvol.phantom import generate_cohort
from dixonvol.preprocess import NormalizationSpec
from dixontrain.config import TrainConfig
from dixontrain.export import export_graph

from conftest import DIMS
from test_export import ThresholdNet


def test_cli_infer_runs_exported_graph(tmp_path):
    manifest = generate_cohort(tmp_path / "cohort", 3, dims=DIMS, seed=8)
    model = ThresholdNet(manifest["stub_threshold"]).eval()
    graph = export_graph(
        model,
        TrainConfig(),
        NormalizationSpec.identity(),  # threshold net works on raw intensities
        (3, *DIMS[:2]),
        tmp_path / "thr.pt2",
    )

    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump({
        "catalog_root": str(tmp_path / "cohort" / "catalog"),
        "output_dir": str(tmp_path / "out"),
        "expected_dims": list(DIMS),
        "model": str(graph),
        "workers": 2,
    }))
    proc = subprocess.run(
        [sys.executable, "-m", "dixonvol", "infer", "--config", str(config_path)],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr

    rows = {
        r["subject_id"]: r
        for r in csv.DictReader(open(tmp_path / "out" / "volumes.csv"))
    }
    assert len(rows) == 3
    for entry in manifest["subjects"]:
        row = rows[entry["subject_id"]]
        assert row["status"] == "ok"
        assert int(row["voxel_count"]) == entry["voxel_count"]
        assert row["model_id"] == "thr"
