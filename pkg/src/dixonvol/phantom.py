"""Synthetic phantom cohorts with analytically known ground truth.

Each phantom subject is a bright ellipsoid on a dark background across the
three channels, written as a regular catalog plus a ground-truth mask and a
manifest recording the exact foreground voxel count, volume in mL, and the
faces the ellipsoid touches. The manifest is computed directly from the
generated boolean grid (plain NumPy, no pipeline code), so it serves as an
independent oracle for end-to-end tests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nifti import SegmentationMask, VolumeGeometry, VoxelVolume, write_nifti

logger = logging.getLogger(__name__)

DEFAULT_BACKGROUND = 100.0
DEFAULT_FOREGROUND = 1000.0

_FACE_NAMES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")


@dataclass(frozen=True)
class PhantomSubject:
    subject_id: str
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    voxel_count: int
    volume_ml: float
    touched_faces: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "center": list(self.center),
            "radii": list(self.radii),
            "voxel_count": self.voxel_count,
            "volume_ml": self.volume_ml,
            "touched_faces": list(self.touched_faces),
        }


def ellipsoid_mask(
    dims: tuple[int, int, int],
    center: tuple[float, float, float],
    radii: tuple[float, float, float],
) -> np.ndarray:
    """Boolean grid of voxels inside the ellipsoid (inclusive boundary)."""
    xs = np.arange(dims[0], dtype=np.float64)[:, None, None]
    ys = np.arange(dims[1], dtype=np.float64)[None, :, None]
    zs = np.arange(dims[2], dtype=np.float64)[None, None, :]
    q = (
        ((xs - center[0]) / radii[0]) ** 2
        + ((ys - center[1]) / radii[1]) ** 2
        + ((zs - center[2]) / radii[2]) ** 2
    )
    return q <= 1.0


def _faces_touched(mask: np.ndarray) -> tuple[str, ...]:
    touched = []
    if mask[0, :, :].any():
        touched.append("x_min")
    if mask[-1, :, :].any():
        touched.append("x_max")
    if mask[:, 0, :].any():
        touched.append("y_min")
    if mask[:, -1, :].any():
        touched.append("y_max")
    if mask[:, :, 0].any():
        touched.append("z_min")
    if mask[:, :, -1].any():
        touched.append("z_max")
    return tuple(touched)


def _snap_spacing(spacing: tuple[float, float, float]) -> tuple[float, float, float]:
    # pixdim is float32 on disk; snap now so manifest and re-read values agree.
    return tuple(float(np.float32(s)) for s in spacing)


def generate_cohort(
    out_root: str | Path,
    n_subjects: int,
    dims: tuple[int, int, int] = (64, 48, 32),
    spacing: tuple[float, float, float] = (2.232, 2.232, 3.0),
    seed: int = 0,
    touch_faces: dict[int, str] | None = None,
    noise: float = 0.0,
    background: float = DEFAULT_BACKGROUND,
    foreground: float = DEFAULT_FOREGROUND,
    vary_spacing: bool = False,
    compress: bool = True,
) -> dict:
    """Write a phantom catalog, ground-truth masks, and the oracle manifest.

    Layout under ``out_root``: ``catalog/<id>/{water,fat,inphase}.nii[.gz]``,
    ``truth/<id>.nii[.gz]``, and ``phantom_manifest.json``. ``touch_faces``
    maps subject index -> face name for subjects that must clip the window
    boundary; everyone else gets an interior ellipsoid. With ``noise`` = 0
    the stub threshold (background+foreground)/2 reproduces the ground-truth
    mask exactly; Gaussian noise (sigma in intensity units) is meant for
    training-data realism and voids that exactness guarantee.
    """
    if noise < 0 or noise >= (foreground - background) / 2:
        if noise != 0.0:
            raise ValueError("noise sigma must stay below (foreground-background)/2")
    if min(dims) < 8:
        raise ValueError("phantom dims must be at least 8 voxels per axis")
    out_root = Path(out_root)
    catalog = out_root / "catalog"
    truth = out_root / "truth"
    rng = np.random.default_rng(seed)
    touch_faces = touch_faces or {}
    ext = ".nii.gz" if compress else ".nii"

    subjects: list[PhantomSubject] = []
    for i in range(n_subjects):
        subject_id = f"subj_{i:03d}"
        sp = list(spacing)
        if vary_spacing:
            sp = [s * float(rng.uniform(0.8, 1.25)) for s in sp]
        sp = _snap_spacing(tuple(sp))
        geometry = VolumeGeometry.from_spacing(dims, sp)

        # Radius cap keeps an interior ellipsoid placeable with margin >= 2.
        hi_r = [max(1.0, min(d / 4.0, (d - 5.2) / 2.0)) for d in dims]
        radii = tuple(float(rng.uniform(max(1.0, 0.5 * r), r)) for r in hi_r)
        face = touch_faces.get(i)
        center = [float(rng.uniform(radii[a] + 2.0, dims[a] - 3.0 - radii[a]))
                  for a in range(3)]
        if face is not None:
            axis = _FACE_NAMES.index(face) // 2
            if face.endswith("_min"):
                center[axis] = float(rng.uniform(0.01, 0.75 * radii[axis]))
            else:
                center[axis] = float(
                    rng.uniform(dims[axis] - 1 - 0.75 * radii[axis], dims[axis] - 1.01)
                )
        mask = ellipsoid_mask(dims, tuple(center), radii)
        touched = _faces_touched(mask)
        if face is not None and face not in touched:
            raise RuntimeError(f"phantom construction failed to touch {face}")
        if face is None and touched:
            raise RuntimeError("interior phantom unexpectedly touches a face")

        voxel_count = int(mask.sum())
        volume = voxel_count * (sp[0] * sp[1] * sp[2]) / 1000.0

        fg = mask.astype(np.float32)
        water = background + (foreground - background) * fg
        fat = foreground - (foreground - background) * fg
        in_phase = 0.5 * (water + fat)
        if noise > 0:
            water = water + rng.normal(0.0, noise, size=dims).astype(np.float32)
            fat = fat + rng.normal(0.0, noise, size=dims).astype(np.float32)
            in_phase = in_phase + rng.normal(0.0, noise, size=dims).astype(np.float32)

        subject_dir = catalog / subject_id
        for name, data in (("water", water), ("fat", fat), ("inphase", in_phase)):
            write_nifti(
                VoxelVolume(geometry=geometry, data=data.astype(np.float32)),
                subject_dir / f"{name}{ext}",
            )
        write_nifti(
            SegmentationMask(geometry=geometry, data=mask.astype(np.uint8)),
            truth / f"{subject_id}{ext}",
        )

        subjects.append(
            PhantomSubject(
                subject_id=subject_id,
                dims=tuple(dims),
                spacing=sp,
                center=tuple(center),
                radii=radii,
                voxel_count=voxel_count,
                volume_ml=volume,
                touched_faces=touched,
            )
        )

    manifest = {
        "seed": seed,
        "dims": list(dims),
        "background": background,
        "foreground": foreground,
        "noise": noise,
        "stub_threshold": (background + foreground) / 2.0,
        "catalog_root": str(catalog),
        "truth_root": str(truth),
        "subjects": [s.to_dict() for s in subjects],
    }
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "phantom_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    logger.info("generated %d phantom subjects under %s", n_subjects, out_root)
    return manifest
