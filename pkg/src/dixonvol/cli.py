"""Command-line interface: scan / split / infer / evaluate / agreement / stats / phantom.

Every subcommand reads an optional YAML config (``--config``) and accepts a
few overrides; ``DIXONVOL_WORKERS`` overrides the worker count from the
environment. Exit status is 0 on success, 1 on a pipeline error (details on
stderr and, for batch runs, in errors.jsonl).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .cohort import make_splits
from .config import PipelineConfig
from .errors import PipelineError
from .phantom import generate_cohort
from .pipeline import (
    run_agreement,
    run_evaluate,
    run_infer,
    run_scan,
    run_stats,
)
from .postprocess import FACES

logger = logging.getLogger(__name__)


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = (
        PipelineConfig.from_yaml(args.config) if args.config else PipelineConfig()
    )
    return config.with_overrides(
        catalog_root=getattr(args, "root", None),
        output_dir=getattr(args, "out", None),
        model=getattr(args, "model", None),
        workers=getattr(args, "workers", None),
    )


def _cmd_scan(args: argparse.Namespace) -> int:
    config = _load_config(args)
    config.validate_common()
    counts = run_scan(config)
    for key, value in counts.items():
        print(f"{key}: {value}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    ids = [
        line.strip()
        for line in Path(args.ids_file).read_text().splitlines()
        if line.strip()
    ]
    manifest = make_splits(
        ids,
        sizes=(args.train, args.test, args.rt),
        n_folds=args.folds,
        seed=args.seed,
    )
    manifest.save(args.out)
    print(
        f"split written to {args.out}: train={len(manifest.train_ids)} "
        f"test={len(manifest.test_ids)} rt={len(manifest.rt_ids)} "
        f"folds={[len(f) for f in manifest.folds]}"
    )
    return 0


def _cmd_infer(args: argparse.Namespace) -> int:
    config = _load_config(args)
    counts = run_infer(config, force=args.force)
    print(
        f"infer done: {counts['ok']} ok, {counts['failed']} failed, "
        f"{counts['resumed_skipped']} resumed (out: {config.output_dir})"
    )
    return 0 if counts["failed"] == 0 else 1


def _cmd_evaluate(args: argparse.Namespace) -> int:
    result = run_evaluate(args.pred, args.truth, args.out)
    print(
        f"evaluated {result['n_pairs']} pairs: median dice {result['median']:.4f}, "
        f"mean {result['mean']:.4f}"
    )
    return 0


def _cmd_agreement(args: argparse.Namespace) -> int:
    result = run_agreement(args.a, args.b, args.out)
    print(
        f"agreement over {result['n_pairs']} pairs: median dice "
        f"{result['median']:.4f}, mean {result['mean']:.4f}"
    )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _load_config(args)
    summary = run_stats(
        args.volumes,
        args.out,
        include_flagged=args.include_flagged or config.stats.include_flagged,
        inclusive_bounds=config.stats.inclusive_bounds,
        bin_width_ml=args.bin_width or config.stats.bin_width_ml,
        plot_cmd=args.plot_cmd,
    )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_phantom(args: argparse.Namespace) -> int:
    touch = {i: FACES[i % len(FACES)] for i in range(args.n_touching)}
    manifest = generate_cohort(
        args.out,
        n_subjects=args.n,
        dims=tuple(args.dims),
        spacing=tuple(args.spacing),
        seed=args.seed,
        touch_faces=touch,
        noise=args.noise,
    )
    print(
        f"phantom cohort with {len(manifest['subjects'])} subjects at {args.out} "
        f"(stub threshold {manifest['stub_threshold']})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dixonvol",
        description="Batch testis volumetry over multi-channel DIXON MRI volumes.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True, workers=True):
        if config:
            p.add_argument("--config", help="YAML pipeline config")
        if workers:
            p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("scan", help="classify a catalog and report exclusions")
    add_common(p)
    p.add_argument("--root", help="catalog root (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("split", help="deterministic train/test/RT/fold manifest")
    p.add_argument("--ids-file", required=True, help="one subject id per line")
    p.add_argument("--train", type=int, default=313)
    p.add_argument("--test", type=int, default=37)
    p.add_argument("--rt", type=int, default=12)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("infer", help="segment all valid subjects, write masks + CSV")
    add_common(p)
    p.add_argument("--root", help="catalog root (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--model", help="graph path or stub:<threshold> (overrides config)")
    p.add_argument("--force", action="store_true", help="recompute finished subjects")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="dice of predictions vs ground truth")
    p.add_argument("--pred", required=True, help="predicted masks directory")
    p.add_argument("--truth", required=True, help="ground-truth masks directory")
    p.add_argument("--out", required=True, help="dice CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("agreement", help="inter-/intra-rater dice between mask sets")
    p.add_argument("--a", required=True, help="first annotation directory")
    p.add_argument("--b", required=True, help="second annotation directory")
    p.add_argument("--out", required=True, help="agreement CSV path")
    p.set_defaults(func=_cmd_agreement)

    p = sub.add_parser("stats", help="population summary + histogram CSVs")
    add_common(p, workers=False)
    p.add_argument("--volumes", required=True, help="volumes.csv from infer")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--include-flagged", action="store_true")
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument(
        "--plot-cmd",
        help="external plot command with {csv} and {out} placeholders (optional)",
    )
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("phantom", help="generate a synthetic oracle cohort")
    p.add_argument("--out", required=True, help="cohort root directory")
    p.add_argument("--n", type=int, default=6, help="number of subjects")
    p.add_argument("--dims", type=int, nargs=3, default=[64, 48, 32])
    p.add_argument("--spacing", type=float, nargs=3, default=[2.232, 2.232, 3.0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--n-touching",
        type=int,
        default=0,
        help="first N subjects clip the window boundary (faces cycle)",
    )
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=_cmd_phantom)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
