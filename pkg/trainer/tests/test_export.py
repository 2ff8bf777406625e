"""Graph export, sidecar contents, and cross-boundary mask equivalence."""

import json

import numpy as np
import torch
from torch import nn

from dixonvol.inference import load_model, stub_threshold_model
from dixonvol.preprocess import NormalizationSpec
from dixontrain.config import TrainConfig
from dixontrain.export import export_graph, sidecar_dict, verify_equivalence
from dixontrain.models import build_model
from dixontrain.train import predict_subject_mask, seed_all

from conftest import DIMS


class ThresholdNet(nn.Module):
    """Two-class net equivalent to the pipeline's built-in threshold model:
    background logit 0, foreground logit K*(water - t)."""

    def __init__(self, threshold: float, gain: float = 4.0):
        super().__init__()
        self.conv = nn.Conv2d(3, 2, kernel_size=1)
        with torch.no_grad():
            self.conv.weight.zero_()
            self.conv.bias.zero_()
            self.conv.weight[1, 0, 0, 0] = gain
            self.conv.bias[1] = -gain * threshold

    def forward(self, x):
        return self.conv(x)


class TestSidecar:
    def test_2d_sidecar_fields(self):
        config = TrainConfig(architecture="unet_resnet34")
        d = sidecar_dict(config, NormalizationSpec(), (3, 32, 32), "m1")
        assert d["decision"] == {"kind": "argmax2"}
        assert d["channel_order"] == ["water", "fat", "in_phase"]
        assert d["is_3d"] is False
        assert d["input_shape"] == [3, 32, 32]

    def test_3d_sidecar_decision(self):
        config = TrainConfig(architecture="unet3d")
        d = sidecar_dict(config, NormalizationSpec(), (3, *DIMS), "m3")
        assert d["decision"] == {"kind": "sigmoid", "threshold": 0.5}
        assert d["is_3d"] is True


class TestExportGraph:
    def test_pt2_and_sidecar(self, tmp_path):
        config = TrainConfig()
        model = ThresholdNet(0.5)
        path = export_graph(
            model, config, NormalizationSpec(), (3, 32, 32), tmp_path / "m.pt2"
        )
        assert path.suffix == ".pt2"
        sidecar = json.loads((tmp_path / "m.meta.json").read_text())
        assert sidecar["normalization_hash"] == NormalizationSpec().spec_hash()
        handle = load_model(path)
        assert handle.output_classes == 2
        assert handle.metadata.slice_axis == 2

    def test_threshold_net_matches_builtin_stub_exactly(self, small_cohort, tmp_path):
        """Deterministic tiny net: pipeline-side masks equal both the
        trainer-side masks and the built-in threshold oracle, voxel for voxel."""
        _, manifest, subjects = small_cohort
        # identity normalization in the sidecar so raw intensities flow in
        spec = NormalizationSpec.identity()
        threshold = manifest["stub_threshold"]
        config = TrainConfig()
        model = ThresholdNet(threshold).eval()
        path = export_graph(model, config, spec, (3, *DIMS[:2]), tmp_path / "thr.pt2")

        from dixonvol.cohort import load_stack, scan_catalog
        from dixonvol.preprocess import extract_slices
        from dixonvol.inference import predict_subject, to_mask

        handle = load_model(path)
        stub = stub_threshold_model(threshold)
        records = [
            r for r in scan_catalog(
                (small_cohort[0]) / "catalog", expected_dims=DIMS
            ) if r.is_valid
        ]
        for record in records[:3]:
            stack = load_stack(record)  # raw, matching the identity spec
            batch = extract_slices(stack, axis=2)
            graph_mask = to_mask(
                predict_subject(handle, batch), handle.metadata.decision
            )
            stub_mask = to_mask(
                predict_subject(stub, batch), stub.metadata.decision
            )
            assert np.array_equal(graph_mask.data, stub_mask.data)

    def test_verify_equivalence_trained_model(self, small_cohort, tmp_path):
        _, _, subjects = small_cohort
        config = TrainConfig(architecture="unet3d", max_epochs=1, seed=2)
        seed_all(config.seed)
        model = build_model("unet3d", 1)
        path = export_graph(
            model, config, NormalizationSpec(), (3, *DIMS), tmp_path / "v.pt2"
        )
        agreement = verify_equivalence(path, model, subjects[:3], config)
        assert agreement >= 0.999

    def test_predict_subject_mask_shapes(self, small_cohort):
        _, _, subjects = small_cohort
        config = TrainConfig(architecture="unet3d")
        model = build_model("unet3d", 1)
        mask = predict_subject_mask(model, subjects[0], config)
        assert mask.shape == DIMS
        assert mask.dtype == np.uint8
