"""Subject catalog scanning, channel stacking, and deterministic splits.

A catalog is one directory per subject holding the three DIXON channels
(water / fat / in-phase) as NIfTI files, matched by configurable glob
patterns. Scanning classifies every subject as valid or excluded with one of
three reasons: all data missing, at least one window file missing, or image
dimensions off the expected grid. Per-subject problems never abort a scan.
"""

from __future__ import annotations

import enum
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GeometryMismatch, IoFailure, NiftiError, SizeMismatch
from .nifti import VolumeGeometry, VoxelVolume, read_header, read_nifti

logger = logging.getLogger(__name__)

CHANNELS = ("water", "fat", "in_phase")

DEFAULT_EXPECTED_DIMS = (224, 162, 72)

DEFAULT_CHANNEL_GLOBS = {
    "water": "*water*.nii*",
    "fat": "*fat*.nii*",
    "in_phase": "*inphase*.nii*",
}


class ExclusionKind(str, enum.Enum):
    MISSING_ALL_DATA = "missing_all_data"
    MISSING_WINDOW_FILE = "missing_window_file"
    DIMENSION_MISMATCH = "dimension_mismatch"


@dataclass(frozen=True)
class ExclusionReason:
    kind: ExclusionKind
    detail: str


@dataclass(frozen=True)
class SubjectRecord:
    """Catalog entry: either valid with all three channel paths, or excluded."""

    subject_id: str
    channel_paths: dict[str, Path] = field(default_factory=dict)
    exclusion: ExclusionReason | None = None

    @property
    def is_valid(self) -> bool:
        return self.exclusion is None

    def __post_init__(self):
        if self.is_valid and sorted(self.channel_paths) != sorted(CHANNELS):
            raise ValueError("valid record requires all three channel paths")


@dataclass(frozen=True, eq=False)
class ChannelStack:
    """The three channels of one subject on a single shared voxel grid."""

    subject_id: str
    water: VoxelVolume
    fat: VoxelVolume
    in_phase: VoxelVolume

    def __post_init__(self):
        ref = self.water.geometry
        for name, channel in (("fat", self.fat), ("in_phase", self.in_phase)):
            if not ref.matches(channel.geometry):
                raise GeometryMismatch(
                    f"{self.subject_id}: {name} geometry "
                    f"{channel.geometry.dims}/{channel.geometry.spacing} differs from "
                    f"water {ref.dims}/{ref.spacing}"
                )

    @property
    def geometry(self) -> VolumeGeometry:
        return self.water.geometry

    @property
    def channels(self) -> tuple[VoxelVolume, VoxelVolume, VoxelVolume]:
        return (self.water, self.fat, self.in_phase)


def _classify_subject(
    subject_dir: Path,
    expected_dims: tuple[int, int, int],
    channel_globs: dict[str, str],
) -> SubjectRecord:
    subject_id = subject_dir.name
    any_nifti = any(subject_dir.glob("*.nii*"))
    if not any_nifti:
        return SubjectRecord(
            subject_id=subject_id,
            exclusion=ExclusionReason(
                ExclusionKind.MISSING_ALL_DATA, "no NIfTI files in subject directory"
            ),
        )

    paths: dict[str, Path] = {}
    problems: list[str] = []
    for channel in CHANNELS:
        matches = sorted(subject_dir.glob(channel_globs[channel]))
        if len(matches) == 0:
            problems.append(f"{channel}: no file matching {channel_globs[channel]!r}")
        elif len(matches) > 1:
            problems.append(f"{channel}: ambiguous, {len(matches)} files match")
        else:
            paths[channel] = matches[0]
    if problems:
        return SubjectRecord(
            subject_id=subject_id,
            channel_paths=paths,
            exclusion=ExclusionReason(
                ExclusionKind.MISSING_WINDOW_FILE, "; ".join(problems)
            ),
        )

    for channel in CHANNELS:
        try:
            info = read_header(paths[channel])
        except (NiftiError, IoFailure) as exc:
            return SubjectRecord(
                subject_id=subject_id,
                channel_paths=paths,
                exclusion=ExclusionReason(
                    ExclusionKind.MISSING_WINDOW_FILE,
                    f"{channel}: unreadable header ({exc})",
                ),
            )
        if info.dims != tuple(expected_dims):
            return SubjectRecord(
                subject_id=subject_id,
                channel_paths=paths,
                exclusion=ExclusionReason(
                    ExclusionKind.DIMENSION_MISMATCH,
                    f"{channel}: dims {info.dims} != expected {tuple(expected_dims)}",
                ),
            )

    return SubjectRecord(subject_id=subject_id, channel_paths=paths)


def scan_catalog(
    root: str | Path,
    expected_dims: tuple[int, int, int] = DEFAULT_EXPECTED_DIMS,
    channel_globs: dict[str, str] | None = None,
    workers: int = 1,
    id_allowlist: set[str] | None = None,
) -> list[SubjectRecord]:
    """Classify every subject directory under ``root``; sorted by subject id.

    ``id_allowlist`` restricts the scan to the listed subjects; cohort-level
    filters like sex come from upstream metadata the images cannot provide,
    so they enter here as an id list. Unreadable ``root`` raises IoFailure;
    everything per-subject becomes an Excluded record instead of an
    exception.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoFailure(f"catalog root is not a readable directory: {root}")
    globs = dict(DEFAULT_CHANNEL_GLOBS)
    if channel_globs:
        globs.update(channel_globs)
    subject_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if id_allowlist is not None:
        subject_dirs = [d for d in subject_dirs if d.name in id_allowlist]

    if workers > 1 and len(subject_dirs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(lambda d: _classify_subject(d, expected_dims, globs), subject_dirs)
            )
    else:
        records = [_classify_subject(d, expected_dims, globs) for d in subject_dirs]
    records.sort(key=lambda r: r.subject_id)

    counts = exclusion_counts(records)
    logger.info(
        "scanned %d subjects: %d valid, %s",
        len(records),
        counts["valid"],
        {k: v for k, v in counts.items() if k != "valid"},
    )
    return records


def exclusion_counts(records: list[SubjectRecord]) -> dict[str, int]:
    """Valid count plus one count per exclusion reason; sums to len(records)."""
    counts = {"valid": 0} | {kind.value: 0 for kind in ExclusionKind}
    for record in records:
        if record.is_valid:
            counts["valid"] += 1
        else:
            counts[record.exclusion.kind.value] += 1
    return counts


def load_stack(record: SubjectRecord) -> ChannelStack:
    """Load the three channels of a valid record onto one shared grid."""
    if not record.is_valid:
        raise ValueError(
            f"cannot load excluded subject {record.subject_id} "
            f"({record.exclusion.kind.value}: {record.exclusion.detail})"
        )
    volumes = {channel: read_nifti(record.channel_paths[channel]) for channel in CHANNELS}
    return ChannelStack(
        subject_id=record.subject_id,
        water=volumes["water"],
        fat=volumes["fat"],
        in_phase=volumes["in_phase"],
    )


@dataclass(frozen=True)
class SplitManifest:
    """Deterministic train/test/RT/fold assignment for annotated subjects."""

    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    rt_ids: tuple[str, ...]
    folds: tuple[tuple[str, ...], ...]
    seed: int

    def __post_init__(self):
        train, test, rt = set(self.train_ids), set(self.test_ids), set(self.rt_ids)
        if train & test:
            raise SizeMismatch("train and test ids overlap")
        if not rt <= test:
            raise SizeMismatch("rt ids must be a subset of test ids")
        fold_union: set[str] = set()
        fold_total = 0
        for fold in self.folds:
            fold_union |= set(fold)
            fold_total += len(fold)
        if fold_union != train or fold_total != len(self.train_ids):
            raise SizeMismatch("folds must partition the train ids exactly")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train": list(self.train_ids),
            "test": list(self.test_ids),
            "rt": list(self.rt_ids),
            "folds": [list(f) for f in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(
            train_ids=tuple(d["train"]),
            test_ids=tuple(d["test"]),
            rt_ids=tuple(d["rt"]),
            folds=tuple(tuple(f) for f in d["folds"]),
            seed=int(d["seed"]),
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_splits(
    annotated_ids: list[str],
    sizes: tuple[int, int, int],
    n_folds: int = 5,
    seed: int = 0,
) -> SplitManifest:
    """Seeded uniform shuffle into train/test, RT subset, and round-robin folds.

    ``sizes`` is (train, test, rt); train + test must cover the id set
    exactly, rt is drawn from the test ids. Same ids + same seed always yield
    an identical manifest.
    """
    n_train, n_test, n_rt = sizes
    ids = sorted(annotated_ids)
    if len(set(ids)) != len(ids):
        raise SizeMismatch("annotated ids contain duplicates")
    if n_train + n_test != len(ids):
        raise SizeMismatch(
            f"train+test = {n_train + n_test} but {len(ids)} ids were given"
        )
    if n_rt > n_test:
        raise SizeMismatch(f"rt size {n_rt} exceeds test size {n_test}")
    if n_folds < 2:
        raise SizeMismatch("n_folds must be at least 2")
    if n_train < n_folds:
        raise SizeMismatch(f"cannot cut {n_train} train ids into {n_folds} folds")

    rng = random.Random(seed)
    shuffled = ids[:]
    rng.shuffle(shuffled)
    train = shuffled[:n_train]
    test = shuffled[n_train:]
    rt = sorted(rng.sample(test, n_rt))
    folds = tuple(tuple(sorted(train[i::n_folds])) for i in range(n_folds))

    return SplitManifest(
        train_ids=tuple(sorted(train)),
        test_ids=tuple(sorted(test)),
        rt_ids=tuple(rt),
        folds=folds,
        seed=seed,
    )
