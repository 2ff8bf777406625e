"""Channel normalization and 2-D slice extraction.

Normalization contract: each channel is min-max rescaled to [0, 1] over the
whole volume (constant channels map to 0), then standardized with the
per-channel (mean, std) of the spec. The default constants are the common
ImageNet statistics; they are conventions carried in the config, not derived
from the data. No flipping or any other augmentation exists in this path.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cohort import ChannelStack
from .nifti import VolumeGeometry, VoxelVolume

logger = logging.getLogger(__name__)

CHANNEL_ORDER = ("water", "fat", "in_phase")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel standardization constants plus the rescale switch."""

    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    rescale: bool = True

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must have 3 components")
        if any(not (s > 0) for s in self.std):
            raise ValueError("std components must be positive")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))

    @classmethod
    def imagenet(cls) -> "NormalizationSpec":
        return cls()

    @classmethod
    def identity(cls) -> "NormalizationSpec":
        """No-op spec: no rescale, zero mean, unit std."""
        return cls(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0), rescale=False)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "rescale": self.rescale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(
            mean=tuple(d.get("mean", IMAGENET_MEAN)),
            std=tuple(d.get("std", IMAGENET_STD)),
            rescale=bool(d.get("rescale", True)),
        )

    def spec_hash(self) -> str:
        """Stable hash used to cross-check model metadata against configs."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SliceBatch:
    """Ordered 2-D slices of a channel stack along one axis.

    ``slices`` has shape (n_slices, h, w, 3) with channels in CHANNEL_ORDER;
    ``slice_indices`` records each slice's position along ``slice_axis`` so a
    permuted batch can still be restacked correctly.
    """

    subject_id: str
    slices: np.ndarray
    slice_axis: int
    slice_indices: tuple[int, ...]
    geometry: VolumeGeometry = field(repr=False)

    def __post_init__(self):
        if self.slices.ndim != 4 or self.slices.shape[3] != 3:
            raise ValueError(f"slices must be (n, h, w, 3), got {self.slices.shape}")
        if len(self.slice_indices) != self.slices.shape[0]:
            raise ValueError("slice_indices length must match slice count")


def _normalize_channel(
    data: np.ndarray, mean: float, std: float, rescale: bool
) -> np.ndarray:
    flat = np.ascontiguousarray(data, dtype=np.float32).ravel()
    if rescale:
        lo, hi = kernels.minmax(flat)
        if hi > lo:
            # ((x - lo) / (hi - lo) - mean) / std folded into one affine pass.
            scale = 1.0 / ((hi - lo) * std)
            offset = -(lo / (hi - lo) + mean) / std
            out = kernels.affine_f32(flat, scale, offset)
        else:
            out = np.full_like(flat, (0.0 - mean) / std)
    else:
        out = kernels.affine_f32(flat, 1.0 / std, -mean / std)
    return out.reshape(data.shape)


def normalize(stack: ChannelStack, spec: NormalizationSpec) -> ChannelStack:
    """Per-channel [0,1] rescale (optional) followed by standardization."""
    channels = []
    for i, channel in enumerate(stack.channels):
        out = _normalize_channel(channel.data, spec.mean[i], spec.std[i], spec.rescale)
        channels.append(
            VoxelVolume(geometry=channel.geometry, data=out, scale=channel.scale)
        )
    return ChannelStack(
        subject_id=stack.subject_id,
        water=channels[0],
        fat=channels[1],
        in_phase=channels[2],
    )


def extract_slices(stack: ChannelStack, axis: int = 2) -> SliceBatch:
    """Cut the stack into 2-D 3-channel slices along ``axis`` (lossless)."""
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    stacked = np.stack([c.data for c in stack.channels], axis=-1)  # (X, Y, Z, 3)
    slices = np.ascontiguousarray(np.moveaxis(stacked, axis, 0))
    n = slices.shape[0]
    return SliceBatch(
        subject_id=stack.subject_id,
        slices=slices,
        slice_axis=axis,
        slice_indices=tuple(range(n)),
        geometry=stack.geometry,
    )
