"""Pipeline configuration: a YAML file plus CLI/env overrides.

The config owns everything a batch run needs: where the catalog lives, the
expected grid, channel glob patterns, the normalization spec, which model to
run, the decision rule, the margin policy, worker count, output directory
and seed. ``DIXONVOL_WORKERS`` overrides the worker count from the
environment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .cohort import DEFAULT_CHANNEL_GLOBS, DEFAULT_EXPECTED_DIMS
from .errors import ConfigError
from .inference import DecisionRule, decision_from_dict
from .postprocess import FACES, MarginPolicy
from .preprocess import NormalizationSpec

WORKERS_ENV_VAR = "DIXONVOL_WORKERS"


@dataclass(frozen=True)
class StatsOptions:
    include_flagged: bool = False
    inclusive_bounds: bool = False
    bin_width_ml: float = 1.0


@dataclass(frozen=True)
class PipelineConfig:
    catalog_root: Path | None = None
    output_dir: Path = Path("out")
    expected_dims: tuple[int, int, int] = DEFAULT_EXPECTED_DIMS
    subject_allowlist: Path | None = None  # one id per line; upstream cohort filter
    channel_globs: dict[str, str] = field(
        default_factory=lambda: dict(DEFAULT_CHANNEL_GLOBS)
    )
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    model: str | None = None  # path to a graph file, or "stub:<threshold>"
    slice_axis: int = 2
    decision: DecisionRule | None = None  # None = take from model metadata
    margin_faces: tuple[str, ...] = FACES
    workers: int = 1
    seed: int = 42
    stats: StatsOptions = field(default_factory=StatsOptions)

    def margin_policy(self) -> MarginPolicy:
        return MarginPolicy(faces=frozenset(self.margin_faces))

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {
            "catalog_root", "output_dir", "expected_dims", "subject_allowlist",
            "channel_globs", "normalization", "model", "slice_axis", "decision",
            "margin_faces", "workers", "seed", "stats",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        stats = d.get("stats") or {}
        return cls(
            catalog_root=Path(d["catalog_root"]) if d.get("catalog_root") else None,
            output_dir=Path(d.get("output_dir", "out")),
            expected_dims=tuple(d.get("expected_dims", DEFAULT_EXPECTED_DIMS)),
            subject_allowlist=Path(d["subject_allowlist"])
            if d.get("subject_allowlist")
            else None,
            channel_globs=dict(DEFAULT_CHANNEL_GLOBS) | dict(d.get("channel_globs") or {}),
            normalization=NormalizationSpec.from_dict(d["normalization"])
            if d.get("normalization")
            else NormalizationSpec(),
            model=d.get("model"),
            slice_axis=int(d.get("slice_axis", 2)),
            decision=decision_from_dict(d["decision"]) if d.get("decision") else None,
            margin_faces=tuple(d.get("margin_faces", FACES)),
            workers=int(d.get("workers", 1)),
            seed=int(d.get("seed", 42)),
            stats=StatsOptions(
                include_flagged=bool(stats.get("include_flagged", False)),
                inclusive_bounds=bool(stats.get("inclusive_bounds", False)),
                bin_width_ml=float(stats.get("bin_width_ml", 1.0)),
            ),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)

    def with_overrides(
        self,
        catalog_root: str | None = None,
        output_dir: str | None = None,
        model: str | None = None,
        workers: int | None = None,
    ) -> "PipelineConfig":
        env_workers = os.environ.get(WORKERS_ENV_VAR)
        cfg = self
        if catalog_root:
            cfg = replace(cfg, catalog_root=Path(catalog_root))
        if output_dir:
            cfg = replace(cfg, output_dir=Path(output_dir))
        if model:
            cfg = replace(cfg, model=model)
        if workers is not None:
            cfg = replace(cfg, workers=workers)
        elif env_workers:
            cfg = replace(cfg, workers=int(env_workers))
        return cfg

    def validate_for_infer(self) -> None:
        if self.catalog_root is None or not Path(self.catalog_root).is_dir():
            raise ConfigError(f"catalog_root is not a directory: {self.catalog_root}")
        if not self.model:
            raise ConfigError("no model configured (path or 'stub:<threshold>')")
        if not self.model.startswith("stub:") and not Path(self.model).is_file():
            raise ConfigError(f"model file not found: {self.model}")
        self.validate_common()

    def validate_common(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.slice_axis not in (0, 1, 2):
            raise ConfigError("slice_axis must be 0, 1 or 2")
        if len(self.expected_dims) != 3 or any(d < 1 for d in self.expected_dims):
            raise ConfigError(f"expected_dims invalid: {self.expected_dims}")
        if self.subject_allowlist is not None and not self.subject_allowlist.is_file():
            raise ConfigError(f"subject_allowlist not found: {self.subject_allowlist}")
        self.margin_policy()  # raises on bad face names

    def allowlist_ids(self) -> set[str] | None:
        if self.subject_allowlist is None:
            return None
        lines = Path(self.subject_allowlist).read_text().splitlines()
        return {line.strip() for line in lines if line.strip()}
