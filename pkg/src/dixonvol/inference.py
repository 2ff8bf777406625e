"""Segmentation inference over serialized graphs, plus restacking to 3-D.

The executor is a pluggable boundary: a serialized operator graph goes in,
per-slice logits come out, and this package carries no training-framework
dependency of its own. Recognized graph formats, sniffed from the file:
torch archives (zip magic; exported programs or TorchScript, executed via
torch when installed) and ONNX protobufs (via onnxruntime when installed).
A metadata sidecar (``<model>.meta.json``) carries the normalization spec,
channel order, slice axis and decision rule; missing sidecars fall back to
defaults with a warning.

A built-in threshold model (`stub_threshold_model`) provides an exact,
analytically known oracle so the whole pipeline can be exercised without
any trained weights.

Output plane convention for two-class models: plane 0 is background, plane 1
is foreground. Ties at equal logits resolve to background, the safe default.
Single-class models binarize as sigmoid(logit) > t, evaluated in logit space
(logit > ln(t/(1-t))), which is exact because sigmoid is strictly monotone.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import (
    CountMismatch,
    DecisionMismatch,
    ExecutorFailure,
    InvalidGraph,
    IoFailure,
    ShapeMismatch,
)
from .nifti import SegmentationMask, VolumeGeometry
from .preprocess import CHANNEL_ORDER, NormalizationSpec, SliceBatch

logger = logging.getLogger(__name__)

DEFAULT_INFERENCE_BATCH_SIZE = 128


# --- decision rules ---------------------------------------------------------

@dataclass(frozen=True)
class ArgmaxTwoClass:
    """Foreground iff foreground logit > background logit (strict)."""

    kind: str = field(default="argmax2", init=False)


@dataclass(frozen=True)
class SigmoidThreshold:
    """Foreground iff sigmoid(logit) > threshold (strict)."""

    threshold: float = 0.5
    kind: str = field(default="sigmoid", init=False)

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("sigmoid threshold must lie strictly in (0, 1)")


DecisionRule = ArgmaxTwoClass | SigmoidThreshold


def decision_from_dict(d: dict) -> DecisionRule:
    kind = d.get("kind")
    if kind == "argmax2":
        return ArgmaxTwoClass()
    if kind == "sigmoid":
        return SigmoidThreshold(threshold=float(d.get("threshold", 0.5)))
    raise ValueError(f"unknown decision rule {d!r}")


def decision_to_dict(rule: DecisionRule) -> dict:
    if isinstance(rule, ArgmaxTwoClass):
        return {"kind": "argmax2"}
    return {"kind": "sigmoid", "threshold": rule.threshold}


# --- model metadata and handle ----------------------------------------------

@dataclass(frozen=True)
class ModelMetadata:
    """Sidecar contract a model carries across the export boundary."""

    model_id: str = ""
    normalization: NormalizationSpec | None = None
    channel_order: tuple[str, str, str] = CHANNEL_ORDER
    slice_axis: int | None = 2  # None = no preference, caller's config decides
    decision: DecisionRule | None = None
    is_3d: bool = False
    input_shape: tuple[int, ...] | None = None  # (3, H, W) or (3, D, H, W)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelMetadata":
        norm = d.get("normalization")
        decision = d.get("decision")
        shape = d.get("input_shape")
        axis = d.get("slice_axis", 2)
        return cls(
            model_id=str(d.get("model_id", "")),
            normalization=NormalizationSpec.from_dict(norm) if norm else None,
            channel_order=tuple(d.get("channel_order", CHANNEL_ORDER)),
            slice_axis=None if axis is None else int(axis),
            decision=decision_from_dict(decision) if decision else None,
            is_3d=bool(d.get("is_3d", False)),
            input_shape=tuple(shape) if shape else None,
        )

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "normalization": self.normalization.to_dict() if self.normalization else None,
            "normalization_hash": (
                self.normalization.spec_hash() if self.normalization else None
            ),
            "channel_order": list(self.channel_order),
            "slice_axis": self.slice_axis,
            "decision": decision_to_dict(self.decision) if self.decision else None,
            "is_3d": self.is_3d,
            "input_shape": list(self.input_shape) if self.input_shape else None,
        }


@dataclass(frozen=True, eq=False)
class ModelHandle:
    """Loaded graph plus its contract; immutable and shareable across workers."""

    executor: Callable[[np.ndarray], np.ndarray]
    metadata: ModelMetadata
    output_classes: int
    input_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.output_classes not in (1, 2):
            raise ShapeMismatch(
                f"model must emit 1 or 2 classes, got {self.output_classes}"
            )


@dataclass(frozen=True, eq=False)
class PredictionVolume:
    """Per-voxel logits restacked to the source grid (planes, x, y, z)."""

    geometry: VolumeGeometry
    logits: np.ndarray

    def __post_init__(self):
        if self.logits.ndim != 4 or self.logits.shape[1:] != self.geometry.dims:
            raise ValueError(
                f"logits shape {self.logits.shape} must be (planes, *{self.geometry.dims})"
            )
        if self.logits.shape[0] not in (1, 2):
            raise ValueError("logit planes must be 1 or 2")


# --- executors ----------------------------------------------------------------

class StubThresholdExecutor:
    """Built-in oracle: foreground logit +1 where water > threshold, else -1.

    Operates on raw (unstandardized) intensities; the handle's metadata
    declares the identity normalization so the pipeline feeds it raw values.
    Works for both slice batches (N, 3, H, W) and whole volumes
    (N, 3, D, H, W) since only the channel axis is indexed.
    """

    def __init__(self, threshold: float):
        self.threshold = float(threshold)

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        water = batch[:, 0]
        logits = np.where(water > np.float32(self.threshold), 1.0, -1.0)
        return logits[:, None].astype(np.float32)


class _TorchGraphExecutor:
    """Runs a torch graph archive (exported program or TorchScript).

    torch is imported lazily on first load; both .pt2 exported programs and
    legacy TorchScript .pt archives are accepted.
    """

    def __init__(self, path: Path):
        try:
            import torch
        except ImportError as exc:
            raise InvalidGraph(
                f"{path} is a torch graph archive but torch is not installed"
            ) from exc
        self._torch = torch
        module = None
        load_errors = []
        loaders = (self._load_exported, self._load_torchscript)
        if path.suffix.lower() != ".pt2":
            loaders = tuple(reversed(loaders))
        for loader in loaders:
            try:
                module = loader(path)
                break
            except Exception as exc:
                load_errors.append(f"{loader.__name__}: {exc}")
        if module is None:
            raise InvalidGraph(
                f"cannot load torch graph {path}: {'; '.join(load_errors)}"
            )
        self._module = module

    def _load_exported(self, path: Path):
        return self._torch.export.load(str(path)).module()

    def _load_torchscript(self, path: Path):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DeprecationWarning)
            module = self._torch.jit.load(str(path), map_location="cpu")
        module.eval()
        return module

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        try:
            with torch.no_grad():
                out = self._module(torch.from_numpy(np.ascontiguousarray(batch)))
            return out.detach().numpy().astype(np.float32, copy=False)
        except Exception as exc:
            raise ExecutorFailure(f"torch graph execution failed: {exc}") from exc


class _OnnxExecutor:
    """Runs an ONNX graph via onnxruntime when that runtime is available."""

    def __init__(self, path: Path):
        try:
            import onnxruntime
        except ImportError as exc:
            raise InvalidGraph(
                f"{path} looks like an ONNX graph but onnxruntime is not installed"
            ) from exc
        try:
            self._session = onnxruntime.InferenceSession(
                str(path), providers=["CPUExecutionProvider"]
            )
        except Exception as exc:
            raise InvalidGraph(f"cannot load ONNX graph {path}: {exc}") from exc
        inputs = self._session.get_inputs()
        if len(inputs) != 1:
            raise InvalidGraph(f"{path}: expected exactly one graph input")
        self._input_name = inputs[0].name

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        try:
            (out,) = self._session.run(
                None, {self._input_name: np.ascontiguousarray(batch)}
            )
            return out.astype(np.float32, copy=False)
        except Exception as exc:
            raise ExecutorFailure(f"ONNX execution failed: {exc}") from exc


# --- loading -------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def load_metadata(path: Path) -> ModelMetadata:
    sidecar = _sidecar_path(path)
    if sidecar.is_file():
        try:
            return ModelMetadata.from_dict(json.loads(sidecar.read_text()))
        except (json.JSONDecodeError, ValueError, KeyError) as exc:
            raise InvalidGraph(f"unreadable model metadata {sidecar}: {exc}") from exc
    logger.warning(
        "no metadata sidecar %s; using defaults (slice axis 2, channel order %s)",
        sidecar,
        "/".join(CHANNEL_ORDER),
    )
    return ModelMetadata(model_id=path.stem)


def load_model(path: str | Path) -> ModelHandle:
    """Load a serialized graph and validate its shape contract.

    Validation runs a zero dummy batch through the graph: the input must
    accept 3 channels and the output must have 1 or 2 class planes.
    """
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"no such model file: {path}")
    metadata = load_metadata(path)
    if not metadata.model_id:
        metadata = replace(metadata, model_id=path.stem)

    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:4] == b"PK\x03\x04":
        executor: Callable[[np.ndarray], np.ndarray] = _TorchGraphExecutor(path)
    elif path.suffix.lower() == ".onnx" or head[:1] == b"\x08":
        executor = _OnnxExecutor(path)
    else:
        raise InvalidGraph(
            f"{path}: unrecognized graph format (expected a torch archive or ONNX)"
        )

    if metadata.input_shape is not None:
        dummy_shape = (1, *metadata.input_shape)
    elif metadata.is_3d:
        dummy_shape = (1, 3, 16, 16, 16)
    else:
        dummy_shape = (1, 3, 32, 32)
    if dummy_shape[1] != 3:
        raise ShapeMismatch(
            f"{path}: model expects {dummy_shape[1]} input channels, contract is 3"
        )
    try:
        out = executor(np.zeros(dummy_shape, dtype=np.float32))
    except ExecutorFailure as exc:
        hint = (
            "" if metadata.input_shape is not None
            else "; shape-specialized graphs need input_shape in the metadata sidecar"
        )
        raise ShapeMismatch(
            f"{path}: model rejected a dummy input of shape {dummy_shape} ({exc}){hint}"
        ) from exc
    if out.ndim != len(dummy_shape) or out.shape[1] not in (1, 2):
        raise ShapeMismatch(
            f"{path}: output shape {out.shape} violates the 1-or-2-class contract"
        )

    return ModelHandle(
        executor=executor,
        metadata=metadata,
        output_classes=int(out.shape[1]),
        input_shape=metadata.input_shape,
    )


def stub_threshold_model(intensity_threshold: float) -> ModelHandle:
    """Deterministic built-in model thresholding the water channel."""
    metadata = ModelMetadata(
        model_id=f"stub-threshold-{intensity_threshold:g}",
        normalization=NormalizationSpec.identity(),
        decision=SigmoidThreshold(0.5),
        slice_axis=None,  # per-pixel rule, any slicing axis works
        is_3d=False,
        input_shape=None,
    )
    return ModelHandle(
        executor=StubThresholdExecutor(intensity_threshold),
        metadata=metadata,
        output_classes=1,
        input_shape=None,
    )


# --- prediction ---------------------------------------------------------------

def predict_subject(
    model: ModelHandle,
    batch: SliceBatch,
    inference_batch_size: int = DEFAULT_INFERENCE_BATCH_SIZE,
) -> PredictionVolume:
    """Run a 2-D model over the slices and restack logits onto the grid.

    Logits for slice i depend only on slice i; output is deterministic for a
    fixed model and input, and independent of the micro-batch size.
    """
    if inference_batch_size < 1:
        raise ValueError("inference batch size must be >= 1")
    if model.metadata.is_3d:
        raise ShapeMismatch("predict_subject is the 2-D path; use predict_stack")
    n, h, w, _ = batch.slices.shape
    if model.input_shape is not None and tuple(model.input_shape[-2:]) != (h, w):
        raise ShapeMismatch(
            f"slice shape {(h, w)} does not match model input {model.input_shape}"
        )

    # (n, h, w, 3) -> (n, 3, h, w)
    x = np.ascontiguousarray(np.moveaxis(batch.slices, 3, 1), dtype=np.float32)
    outputs = []
    for start in range(0, n, inference_batch_size):
        outputs.append(model.executor(x[start : start + inference_batch_size]))
    logits = np.concatenate(outputs, axis=0)
    if logits.shape[0] != n or logits.shape[1] != model.output_classes:
        raise ExecutorFailure(
            f"executor returned shape {logits.shape} for {n} slices"
        )
    return restack(logits, batch.slice_axis, batch.geometry, batch.slice_indices)


def predict_whole_volume(model: ModelHandle, volume_channels: np.ndarray,
                         geometry: VolumeGeometry) -> PredictionVolume:
    """3-D path: one whole-volume forward pass, no slicing.

    ``volume_channels`` is (3, X, Y, Z) in channel order.
    """
    if not model.metadata.is_3d:
        raise ShapeMismatch("model metadata does not declare a 3-D input")
    x = np.ascontiguousarray(volume_channels, dtype=np.float32)[None]
    out = model.executor(x)
    if out.shape[0] != 1 or out.shape[1] != model.output_classes:
        raise ExecutorFailure(f"3-D executor returned shape {out.shape}")
    return PredictionVolume(geometry=geometry, logits=np.ascontiguousarray(out[0]))


def restack(
    batch_logits: np.ndarray,
    axis: int,
    geometry: VolumeGeometry,
    slice_indices: Sequence[int] | None = None,
) -> PredictionVolume:
    """Place per-slice logit planes back at their positions along ``axis``.

    Exact inverse of slice extraction: slice i of shape (classes, h, w) lands
    at position slice_indices[i]. ``batch_logits`` is (n, classes, h, w).
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    batch_logits = np.asarray(batch_logits, dtype=np.float32)
    n_expected = geometry.dims[axis]
    if batch_logits.ndim != 4 or batch_logits.shape[0] != n_expected:
        raise CountMismatch(
            f"got {batch_logits.shape[0] if batch_logits.ndim else 0} slices, "
            f"dims[{axis}] = {n_expected}"
        )
    indices = tuple(slice_indices) if slice_indices is not None else tuple(range(n_expected))
    if sorted(indices) != list(range(n_expected)):
        raise CountMismatch("slice indices must be a permutation of 0..n-1")

    classes = batch_logits.shape[1]
    out = np.empty((classes, *geometry.dims), dtype=np.float32)
    # View with the slicing axis in front: (n, classes, h, w) assigns directly.
    target = np.moveaxis(out, axis + 1, 0)
    target[list(indices)] = batch_logits
    return PredictionVolume(geometry=geometry, logits=out)


def to_mask(pred: PredictionVolume, decision: DecisionRule) -> SegmentationMask:
    """Binarize logits under the decision rule matching the plane count."""
    planes = pred.logits.shape[0]
    if isinstance(decision, ArgmaxTwoClass):
        if planes != 2:
            raise DecisionMismatch(f"argmax rule needs 2 logit planes, got {planes}")
        fg = np.ascontiguousarray(pred.logits[1]).ravel()
        bg = np.ascontiguousarray(pred.logits[0]).ravel()
        flat = kernels.argmax2(fg, bg)
    elif isinstance(decision, SigmoidThreshold):
        if planes != 1:
            raise DecisionMismatch(f"sigmoid rule needs 1 logit plane, got {planes}")
        logit_cut = math.log(decision.threshold / (1.0 - decision.threshold))
        flat = kernels.threshold_gt(np.ascontiguousarray(pred.logits[0]).ravel(), logit_cut)
    else:
        raise DecisionMismatch(f"unknown decision rule {decision!r}")
    return SegmentationMask(
        geometry=pred.geometry, data=np.asarray(flat).reshape(pred.geometry.dims)
    )
