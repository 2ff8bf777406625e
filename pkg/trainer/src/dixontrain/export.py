"""Export trained models as portable graphs the inference pipeline can run.

The preferred format is a torch exported program (.pt2) with a dynamic batch
dimension; TorchScript tracing is the fallback for modules the exporter
cannot handle. Every graph ships with a metadata sidecar recording the
normalization spec, channel order, slice axis, decision rule and input
shape, which is everything the pipeline needs to reproduce training-time
preprocessing bit for bit.
"""

from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path

import numpy as np
import torch
from torch import nn

from dixonvol.inference import load_model
from dixonvol.preprocess import CHANNEL_ORDER, NormalizationSpec

from .config import TrainConfig
from .data import SubjectArrays
from .train import predict_subject_mask

logger = logging.getLogger(__name__)


class ExportFailure(RuntimeError):
    pass


class EquivalenceFailure(RuntimeError):
    pass


def sidecar_dict(
    config: TrainConfig,
    normalization: NormalizationSpec,
    input_shape: tuple[int, ...],
    model_id: str,
) -> dict:
    decision = (
        {"kind": "sigmoid", "threshold": 0.5}
        if config.is_3d
        else {"kind": "argmax2"}
    )
    return {
        "model_id": model_id,
        "normalization": normalization.to_dict(),
        "normalization_hash": normalization.spec_hash(),
        "channel_order": list(CHANNEL_ORDER),
        "slice_axis": config.slice_axis,
        "decision": decision,
        "is_3d": config.is_3d,
        "input_shape": list(input_shape),
    }


def export_graph(
    model: nn.Module,
    config: TrainConfig,
    normalization: NormalizationSpec,
    input_shape: tuple[int, ...],
    path: str | Path,
    model_id: str | None = None,
) -> Path:
    """Serialize the model plus its metadata sidecar; returns the graph path.

    ``input_shape`` is (3, H, W) for 2-D models or (3, X, Y, Z) for the 3-D
    model; the batch dimension is exported as dynamic where the exporter
    allows it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = model.eval()
    example = torch.zeros(2, *input_shape)

    exported = False
    if path.suffix == ".pt2":
        try:
            batch = torch.export.Dim("batch", min=1, max=4096)
            program = torch.export.export(
                model, (example,), dynamic_shapes=({0: batch},)
            )
            torch.export.save(program, str(path))
            exported = True
        except Exception as exc:
            logger.warning("torch.export failed (%s); falling back to TorchScript", exc)
            path = path.with_suffix(".pt")
    if not exported:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                traced = torch.jit.trace(model, example)
                traced.save(str(path))
        except Exception as exc:
            raise ExportFailure(f"could not serialize model: {exc}") from exc

    sidecar = path.with_name(path.stem + ".meta.json")
    sidecar.write_text(
        json.dumps(
            sidecar_dict(config, normalization, input_shape, model_id or path.stem),
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    logger.info("exported %s (+ %s)", path, sidecar.name)
    return path


def verify_equivalence(
    graph_path: str | Path,
    model: nn.Module,
    subjects: list[SubjectArrays],
    config: TrainConfig,
    min_agreement: float = 0.999,
) -> float:
    """Voxel agreement between pipeline-side and trainer-side masks.

    The exported graph is loaded back through the inference package and both
    sides segment the same held-out subjects; disagreement beyond
    ``1 - min_agreement`` raises EquivalenceFailure.
    """
    from dixonvol.inference import predict_subject, predict_whole_volume, to_mask
    from dixonvol.preprocess import SliceBatch

    handle = load_model(graph_path)
    decision = handle.metadata.decision
    total = agree = 0
    for subject in subjects:
        trainer_mask = predict_subject_mask(model, subject, config)
        if handle.metadata.is_3d:
            pred = predict_whole_volume(handle, subject.channels, subject.geometry)
        else:
            axis = config.slice_axis
            moved = np.moveaxis(subject.channels, axis + 1, 1)
            slices = np.ascontiguousarray(
                np.moveaxis(np.swapaxes(moved, 0, 1), 1, 3)
            )  # (n, h, w, 3)
            batch = SliceBatch(
                subject_id=subject.subject_id,
                slices=slices,
                slice_axis=axis,
                slice_indices=tuple(range(slices.shape[0])),
                geometry=subject.geometry,
            )
            pred = predict_subject(handle, batch, inference_batch_size=config.batch_size)
        pipeline_mask = to_mask(pred, decision).data
        total += trainer_mask.size
        agree += int((pipeline_mask == trainer_mask).sum())
    agreement = agree / total
    if agreement < min_agreement:
        raise EquivalenceFailure(
            f"mask agreement {agreement:.6f} below required {min_agreement}"
        )
    logger.info("cross-boundary agreement: %.6f over %d subjects", agreement,
                len(subjects))
    return agreement
