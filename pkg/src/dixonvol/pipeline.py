"""Batch orchestration: scan, infer, evaluate, agreement, stats.

Inference runs subjects through a process pool; every subject writes its
mask and a small JSON result marker atomically (temp file + rename), so an
interrupted run resumes exactly where it stopped: subjects with a marker are
skipped unless forced. The volumes CSV is assembled from the markers in
subject-id order at the end, which makes its bytes independent of worker
count, completion order, and interruptions.

Per-subject failures become ``status=failed`` rows plus entries in
``errors.jsonl``; they never abort the batch or disturb neighboring rows.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import os
import shlex
import subprocess
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import kernels
from .cohort import SubjectRecord, exclusion_counts, load_stack, scan_catalog
from .config import PipelineConfig
from .errors import NoValidPairs
from .inference import (
    ArgmaxTwoClass,
    DecisionRule,
    ModelHandle,
    SigmoidThreshold,
    decision_to_dict,
    load_model,
    predict_subject,
    predict_whole_volume,
    stub_threshold_model,
    to_mask,
)
from .metrics import VolumeReport, agreement, volume_ml
from .nifti import read_nifti, write_nifti
from .popstats import histogram_csv, summarize
from .postprocess import apply_margin_rule
from .preprocess import NormalizationSpec, extract_slices, normalize

logger = logging.getLogger(__name__)

VOLUME_CSV_FIELDS = (
    "subject_id",
    "status",
    "volume_ml",
    "voxel_count",
    "voxel_volume_mm3",
    "margin_flagged",
    "touched_faces",
    "model_id",
    "error",
)

AGREEMENT_CSV_FIELDS = (
    "subject_id",
    "dice",
    "n_a",
    "n_b",
    "n_intersection",
    "skipped_reason",
    "median",
    "mean",
)


def resolve_model(model_spec: str) -> ModelHandle:
    """Build a handle from 'stub:<threshold>' or a serialized graph path."""
    if model_spec.startswith("stub:"):
        return stub_threshold_model(float(model_spec.split(":", 1)[1]))
    return load_model(model_spec)


def effective_normalization(
    model: ModelHandle, config_spec: NormalizationSpec
) -> NormalizationSpec:
    """Model metadata wins over the config; differing specs are warned about."""
    model_spec = model.metadata.normalization
    if model_spec is None:
        return config_spec
    if model_spec.spec_hash() != config_spec.spec_hash():
        logger.warning(
            "model %s declares its own normalization; overriding the config spec",
            model.metadata.model_id,
        )
    return model_spec


def effective_decision(model: ModelHandle, config_rule: DecisionRule | None) -> DecisionRule:
    if config_rule is not None:
        return config_rule
    if model.metadata.decision is not None:
        return model.metadata.decision
    return ArgmaxTwoClass() if model.output_classes == 2 else SigmoidThreshold(0.5)


def effective_slice_axis(model: ModelHandle, config_axis: int) -> int:
    """The axis the model was exported for; config only fills a None preference."""
    axis = model.metadata.slice_axis
    if axis is None:
        return config_axis
    if axis != config_axis:
        logger.warning(
            "model %s was exported for slice axis %d; overriding config axis %d",
            model.metadata.model_id, axis, config_axis,
        )
    return axis


# --- per-subject worker -------------------------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(config: PipelineConfig) -> None:
    model = resolve_model(config.model)
    _WORKER_STATE["config"] = config
    _WORKER_STATE["model"] = model
    _WORKER_STATE["norm"] = effective_normalization(model, config.normalization)
    _WORKER_STATE["decision"] = effective_decision(model, config.decision)
    _WORKER_STATE["slice_axis"] = effective_slice_axis(model, config.slice_axis)


def _infer_one(record: SubjectRecord) -> tuple[str, str]:
    """Process one subject inside a worker; returns (subject_id, status)."""
    config: PipelineConfig = _WORKER_STATE["config"]
    model: ModelHandle = _WORKER_STATE["model"]
    out_dir = Path(config.output_dir)
    result_path = out_dir / "results" / f"{record.subject_id}.json"
    try:
        stack = load_stack(record)
        stack = normalize(stack, _WORKER_STATE["norm"])
        if model.metadata.is_3d:
            channels = np.stack([c.data for c in stack.channels], axis=0)
            pred = predict_whole_volume(model, channels, stack.geometry)
        else:
            batch = extract_slices(stack, _WORKER_STATE["slice_axis"])
            pred = predict_subject(model, batch)
        mask = to_mask(pred, _WORKER_STATE["decision"])
        flagged = apply_margin_rule(mask, config.margin_policy())
        report = volume_ml(
            flagged.mask,
            subject_id=record.subject_id,
            margin_flagged=flagged.margin_flagged,
            model_id=model.metadata.model_id,
        )
        write_nifti(flagged.mask, out_dir / "masks" / f"{record.subject_id}.nii.gz")
        payload = {
            "subject_id": record.subject_id,
            "status": "ok",
            "volume_ml": report.volume_ml,
            "voxel_count": report.voxel_count,
            "voxel_volume_mm3": report.voxel_volume_mm3,
            "margin_flagged": flagged.margin_flagged,
            "touched_faces": list(flagged.touched_faces),
            "model_id": report.model_id,
        }
        status = "ok"
    except Exception as exc:  # failure isolation: record, never abort the batch
        payload = {
            "subject_id": record.subject_id,
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "model_id": model.metadata.model_id,
        }
        status = "failed"
    _write_json_atomic(result_path, payload)
    return record.subject_id, status


def _write_json_atomic(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


# --- subcommand drivers ---------------------------------------------------------

def run_scan(config: PipelineConfig) -> dict:
    """Classify the catalog and write scan_report.json; returns the counts."""
    records = scan_catalog(
        config.catalog_root,
        expected_dims=config.expected_dims,
        channel_globs=config.channel_globs,
        workers=config.workers,
        id_allowlist=config.allowlist_ids(),
    )
    counts = exclusion_counts(records)
    report = {
        "catalog_root": str(config.catalog_root),
        "expected_dims": list(config.expected_dims),
        "counts": counts,
        "subjects": [
            {
                "subject_id": r.subject_id,
                "status": "valid" if r.is_valid else "excluded",
                "reason": None if r.is_valid else r.exclusion.kind.value,
                "detail": None if r.is_valid else r.exclusion.detail,
            }
            for r in records
        ],
    }
    out = Path(config.output_dir)
    _write_json_atomic(out / "scan_report.json", report)
    return counts


def run_infer(config: PipelineConfig, force: bool = False) -> dict:
    """Segment every valid subject; resumable, parallel, failure-isolated."""
    config.validate_for_infer()
    out_dir = Path(config.output_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    (out_dir / "results").mkdir(parents=True, exist_ok=True)
    for stale in (out_dir / "masks").glob("*.tmp*"):
        stale.unlink(missing_ok=True)
    for stale in (out_dir / "results").glob("*.tmp*"):
        stale.unlink(missing_ok=True)

    records = scan_catalog(
        config.catalog_root,
        expected_dims=config.expected_dims,
        channel_globs=config.channel_globs,
        workers=config.workers,
        id_allowlist=config.allowlist_ids(),
    )
    valid = [r for r in records if r.is_valid]

    pending = []
    skipped = 0
    for record in valid:
        marker = out_dir / "results" / f"{record.subject_id}.json"
        if marker.is_file() and not force:
            skipped += 1
        else:
            pending.append(record)
    logger.info(
        "infer: %d valid subjects, %d already done, %d to run (workers=%d)",
        len(valid), skipped, len(pending), config.workers,
    )

    # Parent-side load validates the model and resolves the effective
    # normalization/decision before any worker starts.
    model = resolve_model(config.model)
    norm = effective_normalization(model, config.normalization)
    decision = effective_decision(model, config.decision)

    n_failed = 0
    if pending:
        if config.workers == 1:
            _init_worker(config)
            for record in pending:
                _, status = _infer_one(record)
                n_failed += status == "failed"
        else:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(
                max_workers=config.workers,
                mp_context=ctx,
                initializer=_init_worker,
                initargs=(config,),
            ) as pool:
                futures = [pool.submit(_infer_one, r) for r in pending]
                for fut in as_completed(futures):
                    _, status = fut.result()
                    n_failed += status == "failed"

    n_ok = _assemble_volume_csv(out_dir, valid)
    meta = {
        "model_id": model.metadata.model_id,
        "decision": decision_to_dict(decision),
        "normalization": norm.to_dict(),
        "normalization_hash": norm.spec_hash(),
        "slice_axis": effective_slice_axis(model, config.slice_axis),
        "margin_faces": sorted(config.margin_policy().faces),
        "kernel_backend": kernels.BACKEND,
        "workers": config.workers,
        "counts": {
            "valid": len(valid),
            "ok": n_ok,
            "failed": len(valid) - n_ok,
            "resumed_skipped": skipped,
        },
    }
    _write_json_atomic(out_dir / "run_meta.json", meta)
    return meta["counts"]


def _assemble_volume_csv(out_dir: Path, valid: list[SubjectRecord]) -> int:
    """Rebuild volumes.csv and errors.jsonl from the result markers."""
    rows = []
    errors = []
    for record in sorted(valid, key=lambda r: r.subject_id):
        marker = out_dir / "results" / f"{record.subject_id}.json"
        if not marker.is_file():
            continue
        payload = json.loads(marker.read_text())
        if payload["status"] == "ok":
            rows.append(
                {
                    "subject_id": payload["subject_id"],
                    "status": "ok",
                    "volume_ml": str(payload["volume_ml"]),
                    "voxel_count": str(payload["voxel_count"]),
                    "voxel_volume_mm3": str(payload["voxel_volume_mm3"]),
                    "margin_flagged": str(payload["margin_flagged"]).lower(),
                    "touched_faces": ";".join(payload["touched_faces"]),
                    "model_id": payload["model_id"],
                    "error": "",
                }
            )
        else:
            rows.append(
                {
                    "subject_id": payload["subject_id"],
                    "status": "failed",
                    "volume_ml": "",
                    "voxel_count": "",
                    "voxel_volume_mm3": "",
                    "margin_flagged": "",
                    "touched_faces": "",
                    "model_id": payload.get("model_id", ""),
                    "error": payload.get("error", ""),
                }
            )
            errors.append(
                {"subject_id": payload["subject_id"], "error": payload.get("error", "")}
            )

    csv_path = out_dir / "volumes.csv"
    tmp = csv_path.with_name(f"{csv_path.name}.tmp{os.getpid()}")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=VOLUME_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, csv_path)

    with open(out_dir / "errors.jsonl", "w") as fh:
        for entry in errors:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return sum(1 for r in rows if r["status"] == "ok")


def _index_masks(directory: Path) -> dict[str, Path]:
    """Map subject id -> mask path; id = stem minus .nii[.gz] and '_mask'."""
    index: dict[str, Path] = {}
    for path in sorted(directory.glob("*.nii*")):
        name = path.name
        for suffix in (".nii.gz", ".nii"):
            if name.endswith(suffix):
                name = name[: -len(suffix)]
                break
        else:
            continue
        if name.endswith("_mask"):
            name = name[: -len("_mask")]
        index[name] = path
    return index


def _mask_pairs(dir_a: Path, dir_b: Path):
    index_a, index_b = _index_masks(dir_a), _index_masks(dir_b)
    common = sorted(set(index_a) & set(index_b))
    if not common:
        raise NoValidPairs(f"no common subject masks between {dir_a} and {dir_b}")
    only_a = sorted(set(index_a) - set(index_b))
    only_b = sorted(set(index_b) - set(index_a))
    if only_a or only_b:
        logger.warning("unmatched masks skipped: %s / %s", only_a, only_b)
    for subject_id in common:
        yield (
            subject_id,
            _as_mask(read_nifti(index_a[subject_id])),
            _as_mask(read_nifti(index_b[subject_id])),
        )


def _as_mask(volume):
    from .nifti import SegmentationMask

    return SegmentationMask(
        geometry=volume.geometry, data=(volume.data > 0.5).astype("uint8")
    )


def run_agreement(dir_a: str | Path, dir_b: str | Path, out_csv: str | Path) -> dict:
    """Pairwise dice between two mask directories; writes the agreement CSV."""
    report = agreement(_mask_pairs(Path(dir_a), Path(dir_b)))
    rows = [
        {
            "subject_id": sid,
            "dice": str(r.value),
            "n_a": str(r.n_a),
            "n_b": str(r.n_b),
            "n_intersection": str(r.n_intersection),
            "skipped_reason": "",
            "median": "",
            "mean": "",
        }
        for sid, r in report.pairs
    ]
    rows += [
        {
            "subject_id": sid,
            "dice": "",
            "n_a": "",
            "n_b": "",
            "n_intersection": "",
            "skipped_reason": reason,
            "median": "",
            "mean": "",
        }
        for sid, reason in report.skipped
    ]
    rows.append(
        {
            "subject_id": "__summary__",
            "dice": "",
            "n_a": "",
            "n_b": "",
            "n_intersection": "",
            "skipped_reason": "",
            "median": str(report.median),
            "mean": str(report.mean),
        }
    )
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGREEMENT_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return {"n_pairs": len(report.pairs), "median": report.median, "mean": report.mean}


def run_evaluate(pred_dir: str | Path, truth_dir: str | Path, out_csv: str | Path) -> dict:
    """Dice of predicted masks against ground truth; same CSV shape as agreement."""
    return run_agreement(pred_dir, truth_dir, out_csv)


def load_volume_reports(volumes_csv: str | Path) -> list[VolumeReport]:
    """Parse ok rows of a volumes CSV back into reports (failed rows skipped)."""
    reports = []
    with open(volumes_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["status"] != "ok":
                continue
            reports.append(
                VolumeReport(
                    subject_id=row["subject_id"],
                    volume_ml=float(row["volume_ml"]),
                    voxel_count=int(row["voxel_count"]),
                    voxel_volume_mm3=float(row["voxel_volume_mm3"]),
                    margin_flagged=row["margin_flagged"] == "true",
                    model_id=row["model_id"],
                )
            )
    return reports


def run_stats(
    volumes_csv: str | Path,
    out_dir: str | Path,
    include_flagged: bool = False,
    inclusive_bounds: bool = False,
    bin_width_ml: float = 1.0,
    plot_cmd: str | None = None,
) -> dict:
    """Population summary plus histogram CSVs from a volumes CSV.

    Histograms are emitted in two variants (all reports / unflagged only).
    ``plot_cmd`` optionally shells out to an external plotting tool with
    ``{csv}`` and ``{out}`` placeholders; plot failures are logged, never fatal.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = load_volume_reports(volumes_csv)
    summary = summarize(
        reports, include_flagged=include_flagged, inclusive_bounds=inclusive_bounds
    )
    _write_json_atomic(out_dir / "summary.json", summary.to_dict())
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        items = sorted(summary.to_dict().items())
        writer.writerow([k for k, _ in items])
        writer.writerow([str(v) for _, v in items])

    variants = {
        "histogram_all.csv": reports,
        "histogram_unflagged.csv": [r for r in reports if not r.margin_flagged],
    }
    for filename, subset in variants.items():
        with open(out_dir / filename, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for left, right, count in histogram_csv(subset, bin_width_ml):
                writer.writerow([str(left), str(right), str(count)])

    if plot_cmd:
        cmd = plot_cmd.format(
            csv=str(out_dir / "histogram_all.csv"), out=str(out_dir / "histogram.png")
        )
        try:
            subprocess.run(shlex.split(cmd), check=True, timeout=120)
        except (OSError, subprocess.SubprocessError) as exc:
            logger.warning("plot command failed (non-fatal): %s", exc)

    return summary.to_dict()
