"""Trainer CLI: cross-validation, final fit, and graph export.

Consumes a catalog plus ground-truth masks (the same file layouts the
volumetry pipeline reads and the phantom generator writes) and a split
manifest JSON; emits a (model, mean, sd) results table, checkpoints, and
portable graphs with metadata sidecars.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from dixonvol.cohort import SplitManifest
from dixonvol.preprocess import NormalizationSpec

from .config import ARCHITECTURES, TrainConfig
from .data import load_subjects
from .export import export_graph, verify_equivalence
from .models import build_model
from .train import cross_validate, train_final, write_results_table

logger = logging.getLogger(__name__)


def _config_from_args(args: argparse.Namespace) -> TrainConfig:
    if args.config:
        config = TrainConfig.from_yaml(args.config)
        if args.architecture:
            config = TrainConfig.from_dict(
                dict(config.to_dict(), architecture=args.architecture, loss=None)
            )
        return config
    return TrainConfig(
        architecture=args.architecture or "unet_resnet34",
        max_epochs=args.max_epochs,
        seed=args.seed,
    )


def _load_cohort(args: argparse.Namespace, ids=None):
    return load_subjects(
        args.catalog, args.truth, subject_ids=ids,
        normalization=NormalizationSpec(),
    )


def _cmd_cv(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    manifest = SplitManifest.load(args.manifest)
    subjects = _load_cohort(args, ids=list(manifest.train_ids))
    result = cross_validate(config, subjects, manifest)
    out = Path(args.out)
    write_results_table([result], out / "cv_results.csv")
    (out / "cv_folds.json").write_text(
        json.dumps(
            {
                "architecture": result.architecture,
                "fold_dice": result.fold_dice,
                "mean": result.mean,
                "sd": result.sd,
                "config": config.to_dict(),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"{result.architecture}: mean dice {result.mean:.4f} (SD {result.sd:.4f}) "
          f"over {len(result.fold_dice)} folds")
    return 0


def _cmd_final(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    manifest = SplitManifest.load(args.manifest)
    train_subjects = _load_cohort(args, ids=list(manifest.train_ids))
    test_subjects = _load_cohort(args, ids=list(manifest.test_ids))
    model, result = train_final(config, train_subjects, test_subjects)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "final_model.ckpt"
    torch.save({"state_dict": model.state_dict(), "config": config.to_dict()}, checkpoint)
    (out / "final_metrics.json").write_text(
        json.dumps(
            {"test_dice": result.best_dice, "epochs": result.epochs_run,
             "config": config.to_dict()},
            indent=2, sort_keys=True,
        )
        + "\n"
    )
    print(f"final model: test dice {result.best_dice:.4f} "
          f"after {result.epochs_run} epochs -> {checkpoint}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    payload = torch.load(args.checkpoint, map_location="cpu", weights_only=False)
    config = TrainConfig.from_dict(payload["config"])
    model = build_model(config.architecture, config.num_classes, pretrained=False)
    model.load_state_dict(payload["state_dict"])
    spec = NormalizationSpec()
    graph = export_graph(
        model, config, spec, tuple(args.input_shape), Path(args.out),
        model_id=args.model_id,
    )
    if args.verify_catalog:
        if not args.verify_truth:
            raise ValueError("--verify-catalog requires --verify-truth")
        subjects = load_subjects(
            args.verify_catalog, args.verify_truth, normalization=spec
        )
        agreement = verify_equivalence(graph, model, subjects, config)
        print(f"cross-boundary agreement: {agreement:.6f}")
    print(f"exported {graph}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dixontrain",
        description="Train segmentation models and export portable graphs.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--catalog", required=True, help="catalog root directory")
        p.add_argument("--truth", required=True, help="ground-truth masks directory")
        p.add_argument("--manifest", required=True, help="split manifest JSON")
        p.add_argument("--config", help="TrainConfig YAML")
        p.add_argument("--architecture", choices=ARCHITECTURES)
        p.add_argument("--max-epochs", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="5-fold cross-validation on the train split")
    add_data_args(p)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("final", help="fit on all training data, stop on test dice")
    add_data_args(p)
    p.set_defaults(func=_cmd_final)

    p = sub.add_parser("export", help="serialize a checkpoint as a portable graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="graph path (.pt2 preferred)")
    p.add_argument("--input-shape", type=int, nargs="+", required=True,
                   help="e.g. 3 224 162 for 2-D slices")
    p.add_argument("--model-id", default=None)
    p.add_argument("--verify-catalog", help="held-out catalog for equivalence check")
    p.add_argument("--verify-truth", help="masks dir for the equivalence check")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
