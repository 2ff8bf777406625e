"""Seeded training loop, early stopping on validation dice, CV and final fit.

Validation dice is computed per subject (all slices predicted, restacked,
compared against the full 3-D ground truth) and averaged, matching how the
deployed pipeline is scored. Early stopping keeps the best-by-dice weights.
Everything is seeded: fold assignment comes from the split manifest, shuffle
order from a torch generator, and weight init from the config seed.
"""

from __future__ import annotations

import csv
import logging
import random
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader

from dixonvol.cohort import SplitManifest

from .config import TrainConfig
from .data import SliceDataset, SubjectArrays, VolumeDataset, subject_slices
from .models import build_model

logger = logging.getLogger(__name__)


def seed_all(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


class SoftDiceLoss(nn.Module):
    """1 - soft dice over sigmoid probabilities, single foreground class."""

    def __init__(self, eps: float = 1e-6):
        super().__init__()
        self.eps = eps

    def forward(self, logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        probs = torch.sigmoid(logits)
        dims = tuple(range(1, logits.ndim))
        inter = (probs * target).sum(dim=dims)
        denom = probs.sum(dim=dims) + target.sum(dim=dims)
        return (1.0 - (2.0 * inter + self.eps) / (denom + self.eps)).mean()


def dice_of_arrays(pred: np.ndarray, truth: np.ndarray) -> float:
    """Plain 2|A∩B|/(|A|+|B|); both-empty counts as perfect agreement here."""
    n_pred = int(pred.sum())
    n_truth = int(truth.sum())
    if n_pred + n_truth == 0:
        return 1.0
    inter = int(np.logical_and(pred, truth).sum())
    return 2.0 * inter / (n_pred + n_truth)


@torch.no_grad()
def predict_subject_mask(
    model: nn.Module, subject: SubjectArrays, config: TrainConfig
) -> np.ndarray:
    """Trainer-side inference: same decision rules as the deployed pipeline."""
    model.eval()
    if config.is_3d:
        logits = model(torch.from_numpy(subject.channels[None]))
        return (torch.sigmoid(logits[0, 0]) > 0.5).numpy().astype(np.uint8)
    slices = subject_slices(subject, config.slice_axis)
    outputs = []
    for start in range(0, slices.shape[0], config.batch_size):
        outputs.append(model(slices[start : start + config.batch_size]))
    logits = torch.cat(outputs, dim=0)  # (n, 2, h, w)
    fg = (logits[:, 1] > logits[:, 0]).numpy().astype(np.uint8)
    return np.moveaxis(fg, 0, config.slice_axis)


def evaluate_subjects(
    model: nn.Module, subjects: list[SubjectArrays], config: TrainConfig
) -> float:
    """Mean per-subject dice against ground truth."""
    scores = [
        dice_of_arrays(predict_subject_mask(model, s, config), s.mask)
        for s in subjects
    ]
    return statistics.fmean(scores)


@dataclass
class FitResult:
    best_state: dict
    best_dice: float
    epochs_run: int
    history: list[dict]


def fit(
    model: nn.Module,
    train_subjects: list[SubjectArrays],
    val_subjects: list[SubjectArrays],
    config: TrainConfig,
) -> FitResult:
    """Train with Adam and early-stop on the validation dice."""
    seed_all(config.seed)
    if config.is_3d:
        dataset = VolumeDataset(train_subjects)
        criterion: nn.Module = SoftDiceLoss()
    else:
        dataset = SliceDataset(train_subjects, config.slice_axis)
        criterion = nn.CrossEntropyLoss()
    generator = torch.Generator().manual_seed(config.seed)
    # batch-norm layers cannot train on a single sample; drop a lone remainder
    drop_last = len(dataset) % config.batch_size == 1 and len(dataset) > config.batch_size
    loader = DataLoader(
        dataset, batch_size=config.batch_size, shuffle=True,
        generator=generator, drop_last=drop_last,
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_dice = -1.0
    epochs_without_gain = 0
    history = []
    for epoch in range(config.max_epochs):
        model.train()
        epoch_loss = 0.0
        start = time.monotonic()
        for inputs, targets in loader:
            optimizer.zero_grad()
            loss = criterion(model(inputs), targets)
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged: loss={loss.item()} "
                                   f"at epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * inputs.shape[0]
        epoch_loss /= len(dataset)
        val_dice = evaluate_subjects(model, val_subjects, config)
        history.append({"epoch": epoch, "loss": epoch_loss, "val_dice": val_dice,
                        "seconds": time.monotonic() - start})
        logger.info(
            "epoch %d: loss %.4f, val dice %.4f (%.1fs)",
            epoch, epoch_loss, val_dice, history[-1]["seconds"],
        )
        if val_dice > best_dice + config.early_stopping_min_delta:
            best_dice = val_dice
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            epochs_without_gain = 0
        else:
            epochs_without_gain += 1
            if epochs_without_gain >= config.early_stopping_patience:
                logger.info("early stop at epoch %d (best dice %.4f)", epoch, best_dice)
                break
    model.load_state_dict(best_state)
    return FitResult(
        best_state=best_state,
        best_dice=best_dice,
        epochs_run=len(history),
        history=history,
    )


@dataclass
class CVResult:
    architecture: str
    fold_dice: list[float]
    mean: float
    sd: float


def cross_validate(
    config: TrainConfig,
    subjects: list[SubjectArrays],
    manifest: SplitManifest,
) -> CVResult:
    """Train on each fold complement, validate on the fold, aggregate dice.

    Fold membership comes from the split manifest; only train-side ids are
    touched. SD is the sample standard deviation across folds.
    """
    by_id = {s.subject_id: s for s in subjects}
    missing = [
        sid for fold in manifest.folds for sid in fold if sid not in by_id
    ]
    if missing:
        raise KeyError(f"annotations missing for {len(missing)} train ids: "
                       f"{missing[:5]}...")
    fold_dice = []
    for i, fold in enumerate(manifest.folds):
        val = [by_id[sid] for sid in fold]
        train = [
            by_id[sid]
            for j, other in enumerate(manifest.folds)
            if j != i
            for sid in other
        ]
        seed_all(config.seed + i)
        model = build_model(config.architecture, config.num_classes, config.pretrained)
        result = fit(model, train, val, config)
        logger.info("fold %d: best dice %.4f after %d epochs", i, result.best_dice,
                    result.epochs_run)
        fold_dice.append(result.best_dice)
    return CVResult(
        architecture=config.architecture,
        fold_dice=fold_dice,
        mean=statistics.fmean(fold_dice),
        sd=statistics.stdev(fold_dice) if len(fold_dice) > 1 else 0.0,
    )


def write_results_table(results: list[CVResult], path: str | Path) -> None:
    """CSV with one (model, mean, SD) row per architecture."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "mean", "sd"])
        for r in results:
            writer.writerow([r.architecture, f"{r.mean:.4f}", f"{r.sd:.4f}"])


def train_final(
    config: TrainConfig,
    train_subjects: list[SubjectArrays],
    test_subjects: list[SubjectArrays],
) -> tuple[nn.Module, FitResult]:
    """Fit on all training data, early-stopping on the held-out test dice.

    This mirrors the published procedure for the final model; note it leaks
    test information into the stopping decision, so the resulting test dice
    is an optimistic estimate.
    """
    seed_all(config.seed)
    model = build_model(config.architecture, config.num_classes, config.pretrained)
    result = fit(model, train_subjects, test_subjects, config)
    return model, result
