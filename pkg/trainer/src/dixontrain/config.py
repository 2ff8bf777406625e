"""Training configuration with the per-architecture hyperparameter contract.

2-D architectures predict two classes (background/foreground) with cross
entropy at batch size 128; the 3-D U-Net predicts a single foreground class
with soft dice loss, batch size 12, learning rate 0.001 and at most 100
epochs. Those pairings are enforced, not just defaulted. The 2-D learning
rate is a fixed configurable value (default 1e-3) rather than an automatic
tuner, so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

ARCHITECTURES_2D = ("unet_resnet34", "deeplabv3", "deeplabv3plus", "unet_mitb0")
ARCHITECTURES_3D = ("unet3d",)
ARCHITECTURES = ARCHITECTURES_2D + ARCHITECTURES_3D

LOSSES = ("cross_entropy", "dice_loss")

DEFAULT_LR_2D = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    architecture: str = "unet_resnet34"
    loss: str | None = None  # filled per architecture family
    batch_size: int | None = None
    learning_rate: float | None = None
    max_epochs: int | None = None
    early_stopping_patience: int = 10
    early_stopping_min_delta: float = 1e-4
    pretrained: bool = False  # ImageNet encoder weights; off for hermetic runs
    slice_axis: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        is_3d = self.architecture in ARCHITECTURES_3D
        loss = self.loss or ("dice_loss" if is_3d else "cross_entropy")
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        if is_3d and loss != "dice_loss":
            raise ValueError("the 3-D model trains single-class with dice_loss")
        if not is_3d and loss != "cross_entropy":
            raise ValueError("2-D models train two-class with cross_entropy")
        object.__setattr__(self, "loss", loss)
        object.__setattr__(
            self, "batch_size", self.batch_size or (12 if is_3d else 128)
        )
        object.__setattr__(
            self, "learning_rate", self.learning_rate or (1e-3 if is_3d else DEFAULT_LR_2D)
        )
        object.__setattr__(
            self, "max_epochs", self.max_epochs or (100 if is_3d else 50)
        )
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def is_3d(self) -> bool:
        return self.architecture in ARCHITECTURES_3D

    @property
    def num_classes(self) -> int:
        return 1 if self.is_3d else 2

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "loss": self.loss,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "early_stopping_patience": self.early_stopping_patience,
            "early_stopping_min_delta": self.early_stopping_min_delta,
            "pretrained": self.pretrained,
            "slice_axis": self.slice_axis,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if v is not None})

    @classmethod
    def from_yaml(cls, path: str | Path) -> "TrainConfig":
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)
