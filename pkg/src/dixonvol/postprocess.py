"""Margin rule: masks touching the imaging-window boundary get volume 0.

A testis clipped by the window cannot be measured, so any foreground voxel
on a checked boundary face zeroes the whole mask and flags the subject. The
policy defaults to all six faces; restricting the set is a config option for
sensitivity analysis. No connected-component filtering or other cleanup is
applied anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .nifti import SegmentationMask

FACES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")

_FACE_AXIS_SIDE = {
    "x_min": (0, False),
    "x_max": (0, True),
    "y_min": (1, False),
    "y_max": (1, True),
    "z_min": (2, False),
    "z_max": (2, True),
}


@dataclass(frozen=True)
class MarginPolicy:
    """Which window faces invalidate a mask when touched."""

    faces: frozenset[str] = frozenset(FACES)

    def __post_init__(self):
        faces = frozenset(self.faces)
        if not faces:
            raise ValueError("margin policy needs at least one face")
        unknown = faces - set(FACES)
        if unknown:
            raise ValueError(f"unknown faces: {sorted(unknown)}")
        object.__setattr__(self, "faces", faces)


@dataclass(frozen=True, eq=False)
class FlaggedMask:
    """Mask after the margin rule, with the flag and the faces that fired."""

    mask: SegmentationMask
    margin_flagged: bool
    touched_faces: tuple[str, ...]

    def __post_init__(self):
        if self.margin_flagged:
            if not self.touched_faces:
                raise ValueError("flagged mask must name at least one touched face")
            if kernels.count_foreground(self.mask.data.ravel()) != 0:
                raise ValueError("flagged mask must be all zero")


def touches_margin(mask: SegmentationMask, policy: MarginPolicy | None = None) -> list[str]:
    """Policy faces whose boundary plane contains foreground, in canonical order."""
    policy = policy or MarginPolicy()
    touched = []
    for face in FACES:
        if face not in policy.faces:
            continue
        axis, last = _FACE_AXIS_SIDE[face]
        if kernels.face_touch(mask.data, axis, last):
            touched.append(face)
    return touched


def apply_margin_rule(
    mask: SegmentationMask, policy: MarginPolicy | None = None
) -> FlaggedMask:
    """Zero and flag masks that touch a checked face; pass others through."""
    touched = touches_margin(mask, policy)
    if touched:
        zeroed = SegmentationMask(
            geometry=mask.geometry, data=np.zeros(mask.geometry.dims, dtype=np.uint8)
        )
        return FlaggedMask(mask=zeroed, margin_flagged=True, touched_faces=tuple(touched))
    return FlaggedMask(mask=mask, margin_flagged=False, touched_faces=())
