"""Dice overlap, per-subject volumetry in mL, and rater agreement.

Dice is the sole overlap metric: 2*|A∩B| / (|A| + |B|). Two empty masks make
that ratio undefined; this is surfaced as BothEmpty rather than silently
mapped to 0 or 1, so aggregations can decide explicitly. One empty mask
yields 0 straight from the formula.

Volumes are voxel counts times the voxel volume from the file geometry,
converted to mL (1 mL = 1000 mm^3). Bi-testicular volume is reported as one
total; there is no left/right split.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass
from typing import Iterable

from . import kernels
from .errors import BothEmpty, GeometryMismatch, NoValidPairs
from .nifti import SegmentationMask, voxel_volume_mm3

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiceResult:
    value: float
    n_a: int
    n_b: int
    n_intersection: int


@dataclass(frozen=True)
class VolumeReport:
    """Per-subject volumetry output row."""

    subject_id: str
    volume_ml: float
    voxel_count: int
    voxel_volume_mm3: float
    margin_flagged: bool = False
    model_id: str = ""

    def __post_init__(self):
        if self.voxel_count < 0 or self.volume_ml < 0:
            raise ValueError("volume and voxel count must be non-negative")


@dataclass(frozen=True)
class AgreementReport:
    """Per-subject dice pairs with their median and mean.

    ``skipped`` lists (subject_id, reason) for pairs that could not be
    scored; they are excluded from the aggregates but never hidden.
    """

    pairs: tuple[tuple[str, DiceResult], ...]
    skipped: tuple[tuple[str, str], ...]
    median: float
    mean: float


def dice(a: SegmentationMask, b: SegmentationMask) -> DiceResult:
    """Dice overlap of two masks on the same grid; symmetric in (a, b)."""
    if a.geometry.dims != b.geometry.dims:
        raise GeometryMismatch(
            f"dice needs identical dims, got {a.geometry.dims} vs {b.geometry.dims}"
        )
    n_a, n_b, n_inter = kernels.dice_counts(a.data.ravel(), b.data.ravel())
    if n_a + n_b == 0:
        raise BothEmpty("dice of two empty masks is undefined")
    return DiceResult(
        value=2.0 * n_inter / (n_a + n_b), n_a=n_a, n_b=n_b, n_intersection=n_inter
    )


def volume_ml(
    mask: SegmentationMask,
    subject_id: str = "",
    margin_flagged: bool = False,
    model_id: str = "",
) -> VolumeReport:
    """Foreground voxel count times voxel volume, in mL."""
    count = kernels.count_foreground(mask.data.ravel())
    vv = voxel_volume_mm3(mask.geometry)
    return VolumeReport(
        subject_id=subject_id,
        volume_ml=count * vv / 1000.0,
        voxel_count=count,
        voxel_volume_mm3=vv,
        margin_flagged=margin_flagged,
        model_id=model_id,
    )


def agreement(
    pairs: Iterable[tuple[str, SegmentationMask, SegmentationMask]],
) -> AgreementReport:
    """Per-subject dice over (id, mask_a, mask_b) pairs, plus median and mean.

    Pairs are sorted by subject id before reduction so the aggregate does not
    depend on evaluation order. The median of an even-length list is the
    midpoint average.
    """
    scored: list[tuple[str, DiceResult]] = []
    skipped: list[tuple[str, str]] = []
    for subject_id, mask_a, mask_b in sorted(pairs, key=lambda p: p[0]):
        try:
            scored.append((subject_id, dice(mask_a, mask_b)))
        except (BothEmpty, GeometryMismatch) as exc:
            logger.warning("agreement: skipping %s: %s", subject_id, exc)
            skipped.append((subject_id, str(exc)))
    if not scored:
        raise NoValidPairs("no agreement pair could be scored")
    values = [r.value for _, r in scored]
    return AgreementReport(
        pairs=tuple(scored),
        skipped=tuple(skipped),
        median=statistics.median(values),
        mean=statistics.fmean(values),
    )
