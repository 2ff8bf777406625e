"""Datasets over a catalog of DIXON channel stacks plus ground-truth masks.

Subjects are read through the volumetry package's NIfTI reader and
normalized with the same spec that inference will use, so training and
deployment see identical inputs. Volumes are loaded eagerly into memory:
annotated cohorts are a few hundred subjects, far below RAM limits, and it
keeps epoch iteration deterministic and fast. No flipping or any other
augmentation is applied; left/right anatomy is not symmetric here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from dixonvol.cohort import load_stack, scan_catalog
from dixonvol.nifti import VolumeGeometry, read_nifti
from dixonvol.preprocess import NormalizationSpec, normalize

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SubjectArrays:
    subject_id: str
    channels: np.ndarray  # (3, X, Y, Z) float32, normalized
    mask: np.ndarray      # (X, Y, Z) uint8
    geometry: VolumeGeometry


def load_subjects(
    catalog_root: str | Path,
    truth_root: str | Path,
    subject_ids: list[str] | None = None,
    expected_dims: tuple[int, int, int] | None = None,
    normalization: NormalizationSpec | None = None,
) -> list[SubjectArrays]:
    """Load, validate and normalize the subjects with ground-truth masks."""
    catalog_root, truth_root = Path(catalog_root), Path(truth_root)
    spec = normalization or NormalizationSpec()
    records = {
        r.subject_id: r
        for r in scan_catalog(
            catalog_root,
            expected_dims=expected_dims or _peek_dims(catalog_root),
        )
        if r.is_valid
    }
    ids = sorted(subject_ids) if subject_ids is not None else sorted(records)
    subjects = []
    for subject_id in ids:
        if subject_id not in records:
            raise FileNotFoundError(f"no valid catalog entry for {subject_id}")
        truth_path = _truth_path(truth_root, subject_id)
        stack = normalize(load_stack(records[subject_id]), spec)
        truth = read_nifti(truth_path)
        if truth.geometry.dims != stack.geometry.dims:
            raise ValueError(f"{subject_id}: mask dims differ from image dims")
        subjects.append(
            SubjectArrays(
                subject_id=subject_id,
                channels=np.stack([c.data for c in stack.channels], axis=0),
                mask=(truth.data > 0.5).astype(np.uint8),
                geometry=stack.geometry,
            )
        )
    logger.info("loaded %d subjects from %s", len(subjects), catalog_root)
    return subjects


def _truth_path(truth_root: Path, subject_id: str) -> Path:
    for suffix in (".nii.gz", ".nii", "_mask.nii.gz", "_mask.nii"):
        candidate = truth_root / f"{subject_id}{suffix}"
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no ground-truth mask for {subject_id} in {truth_root}")


def _peek_dims(catalog_root: Path) -> tuple[int, int, int]:
    """Expected dims from the first readable channel file in the catalog."""
    from dixonvol.nifti import read_header

    for path in sorted(catalog_root.glob("*/*.nii*")):
        return read_header(path).dims
    raise FileNotFoundError(f"no NIfTI files under {catalog_root}")


class SliceDataset(Dataset):
    """2-D training samples: (3, H, W) float32 input, (H, W) int64 target."""

    def __init__(self, subjects: list[SubjectArrays], slice_axis: int = 2):
        self.slice_axis = slice_axis
        xs, ys = [], []
        for subject in subjects:
            batch = _slices_of(subject, slice_axis)
            xs.append(batch)
            ys.append(np.moveaxis(subject.mask, slice_axis, 0))
        self.inputs = torch.from_numpy(np.concatenate(xs, axis=0))
        self.targets = torch.from_numpy(
            np.concatenate(ys, axis=0).astype(np.int64)
        )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, index):
        return self.inputs[index], self.targets[index]


class VolumeDataset(Dataset):
    """3-D training samples: (3, X, Y, Z) input, (1, X, Y, Z) float target."""

    def __init__(self, subjects: list[SubjectArrays]):
        self.inputs = torch.from_numpy(
            np.stack([s.channels for s in subjects], axis=0)
        )
        self.targets = torch.from_numpy(
            np.stack([s.mask[None] for s in subjects], axis=0).astype(np.float32)
        )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __getitem__(self, index):
        return self.inputs[index], self.targets[index]


def _slices_of(subject: SubjectArrays, slice_axis: int) -> np.ndarray:
    """(n_slices, 3, h, w) in model input layout."""
    moved = np.moveaxis(subject.channels, slice_axis + 1, 1)  # (3, n, h, w)
    return np.ascontiguousarray(np.swapaxes(moved, 0, 1))


def subject_slices(subject: SubjectArrays, slice_axis: int = 2) -> torch.Tensor:
    return torch.from_numpy(_slices_of(subject, slice_axis))
