# Copyright 2025 The Cribriform MIL Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from cribriform_mil.core import DatasetManifest, FoldAssignment, InvariantViolation, Role, make_grouped_folds
from cribriform_mil.models import (
    DESCRIPTOR_DIM,
    Checkpoint,
    OptimizerKind,
    PatchClassifier,
    SlideMIL,
    load_checkpoint,
    load_module,
    make_patch_classifier,
    make_slide_model,
    module_arrays,
    save_checkpoint,
)
from cribriform_mil.utils import make_torch_generator

from .calibration import CalibrationParams, fit_platt
from .config import TrainRunConfig
from .data import SlideBags
from .trainer import EpochRecord, PatchClassifierTrainer, SlideMILTrainer

logger = logging.getLogger(__name__)

HOLDOUT_SCORE_COLUMNS = ["fold", "slide_id", "patient_id", "scan_id", "label", "score"]
FOLD_REPORT_COLUMNS = ["fold", "best_epoch", "holdout_kappa", "patch_best_epoch", "patch_holdout_kappa"]


@dataclass
class FoldData:
    fold: int
    train_slides: list[SlideBags]
    holdout_slides: list[SlideBags]


def split_fold(bags: dict[str, SlideBags], manifest: DatasetManifest, folds: FoldAssignment, fold: int) -> FoldData:
    """Training and holdout bags of `fold`, after checking that no patient sits on both sides."""
    train = folds.training_slides(manifest, fold)
    holdout = folds.holdout_slides(manifest, fold)
    folds.assert_no_leakage(train, holdout)
    return FoldData(
        fold=fold,
        train_slides=[bags[s.slide_id] for s in train],
        holdout_slides=[bags[s.slide_id] for s in holdout],
    )


def patch_arrays(slides: list[SlideBags]) -> tuple[np.ndarray, np.ndarray]:
    """Primary-scan descriptors `(views, patches, 40)` and labels of the pixel-annotated slides."""
    annotated = [s.primary for s in slides if s.pixel_annotated]
    if not annotated:
        n_views = slides[0].primary.n_views if slides else 1
        return np.zeros((n_views, 0, DESCRIPTOR_DIM)), np.zeros(0, dtype=np.int64)
    return (
        np.concatenate([bag.descriptors for bag in annotated], axis=1),
        np.concatenate([bag.patch_labels for bag in annotated]),
    )


@dataclass
class PatchTrainingResult:
    model: PatchClassifier
    best_epoch: int
    holdout_kappa: float
    history: list[EpochRecord] = field(default_factory=list)


def train_patch_classifier(fold_data: FoldData, cfg: TrainRunConfig) -> PatchTrainingResult:
    """Step one for a fold: the patch classifier trained on the pixel-annotated training slides.

    Raises:
        InvariantViolation: If the fold's training patch labels are single-class.
    """
    descriptors, labels = patch_arrays(fold_data.train_slides)
    holdout_descriptors, holdout_labels = patch_arrays(fold_data.holdout_slides)
    if len(np.unique(labels)) < 2:
        raise InvariantViolation(
            f"fold {fold_data.fold}: patch labels of the training slides are single-class ({len(labels)} patches)"
        )
    model = make_patch_classifier(make_torch_generator(cfg.seed, "init", "patch", fold_data.fold))
    model.encoder.set_standardisation(descriptors[0])
    trainer = PatchClassifierTrainer(
        model, descriptors, labels, holdout_descriptors[0], holdout_labels, cfg, fold=fold_data.fold
    )
    trainer.train()
    return PatchTrainingResult(model, trainer.best_epoch, trainer.best_kappa, trainer.history)


@dataclass
class FoldCheckpoint:
    """The retained slide-level model of one fold with its selection record."""

    fold: int
    best_epoch: int
    model: SlideMIL
    holdout_kappa: float
    patch_best_epoch: int = 0
    patch_holdout_kappa: float = math.nan
    step: int = 0

    def __post_init__(self):
        if not math.isnan(self.holdout_kappa) and not -1.0 <= self.holdout_kappa <= 1.0 + 1e-6:
            raise InvariantViolation(f"holdout kappa {self.holdout_kappa} outside [-1, 1]")

    def to_checkpoint(self) -> Checkpoint:
        arrays = module_arrays(self.model, prefix="model/")
        for name in ("fold", "best_epoch", "holdout_kappa", "patch_best_epoch", "patch_holdout_kappa"):
            arrays[f"meta/{name}"] = np.array(getattr(self, name), dtype=np.float32)
        return Checkpoint(arrays=arrays, optimizer_kind=OptimizerKind.RADAM, step=self.step)

    def save(self, path: str):
        save_checkpoint(self.to_checkpoint(), path)

    @classmethod
    def load(cls, path: str) -> FoldCheckpoint:
        checkpoint = load_checkpoint(path)
        model = make_slide_model()
        load_module(model, checkpoint, prefix="model/")
        model.eval()
        return cls(
            fold=int(checkpoint.scalar("meta/fold")),
            best_epoch=int(checkpoint.scalar("meta/best_epoch")),
            model=model,
            holdout_kappa=checkpoint.scalar("meta/holdout_kappa"),
            patch_best_epoch=int(checkpoint.scalar("meta/patch_best_epoch")),
            patch_holdout_kappa=checkpoint.scalar("meta/patch_holdout_kappa"),
            step=checkpoint.step,
        )


def train_slide_mil(
    fold_data: FoldData, init: PatchClassifier, cfg: TrainRunConfig
) -> tuple[FoldCheckpoint, pd.DataFrame, list[EpochRecord]]:
    """Step two for a fold: the MIL model initialised from the fold's patch encoder (not frozen).

    Returns the retained checkpoint, the holdout scores of the retained model, and the epoch history.
    """
    model = make_slide_model(make_torch_generator(cfg.seed, "init", "slide", fold_data.fold))
    model.load_patch_encoder(init)
    trainer = SlideMILTrainer(model, fold_data.train_slides, fold_data.holdout_slides, cfg, fold=fold_data.fold)
    trainer.train()
    scores = trainer.predict_holdout()
    holdout = pd.DataFrame(
        [
            {
                "fold": fold_data.fold,
                "slide_id": slide.slide_id,
                "patient_id": slide.patient_id,
                "scan_id": slide.primary.scan_id,
                "label": slide.bag_label,
                "score": float(score),
            }
            for slide, score in zip(trainer.holdout_slides, scores)
        ],
        columns=HOLDOUT_SCORE_COLUMNS,
    )
    checkpoint = FoldCheckpoint(
        fold=fold_data.fold,
        best_epoch=trainer.best_epoch,
        model=model,
        holdout_kappa=trainer.best_kappa,
        step=trainer.optimizer.step,
    )
    return checkpoint, holdout, trainer.history


@dataclass
class FoldResult:
    checkpoint: FoldCheckpoint
    holdout_scores: pd.DataFrame
    patch_history: list[EpochRecord]
    slide_history: list[EpochRecord]


def run_fold(fold_data: FoldData, cfg: TrainRunConfig) -> FoldResult:
    """Both training steps for one fold (single-threaded torch so results do not depend on workers)."""
    torch.set_num_threads(1)
    logger.info(
        f"Fold {fold_data.fold}: {len(fold_data.train_slides)} training and {len(fold_data.holdout_slides)} holdout slides."
    )
    patch_result = train_patch_classifier(fold_data, cfg)
    checkpoint, holdout, slide_history = train_slide_mil(fold_data, patch_result.model, cfg)
    checkpoint.patch_best_epoch = patch_result.best_epoch
    checkpoint.patch_holdout_kappa = patch_result.holdout_kappa
    return FoldResult(checkpoint, holdout, patch_result.history, slide_history)


@dataclass
class CrossValidationResult:
    folds: FoldAssignment
    checkpoints: list[FoldCheckpoint]
    calibration: CalibrationParams
    holdout_scores: pd.DataFrame
    fold_report: pd.DataFrame


def cross_validate(
    bags: dict[str, SlideBags], manifest: DatasetManifest, cfg: TrainRunConfig, n_jobs: int = 1
) -> CrossValidationResult:
    """Patient-grouped k-fold training of the two-step model, followed by Platt scaling on pooled holdout scores.

    The same fold partition serves both steps, so no fold's holdout slides influence its own initialisation.
    """
    folds = make_grouped_folds(manifest, k=cfg.folds, seed=cfg.seed)
    train_ids = {s.slide_id for s in manifest.slides_by_role(Role.TRAIN)}
    missing = sorted(train_ids - set(bags))
    if missing:
        raise InvariantViolation(f"no bag for training slide '{missing[0]}'")
    fold_data = [split_fold(bags, manifest, folds, fold) for fold in range(cfg.folds)]
    results = Parallel(n_jobs=n_jobs)(delayed(run_fold)(data, cfg) for data in fold_data)

    holdout = pd.concat([r.holdout_scores for r in results], ignore_index=True)
    holdout = holdout.sort_values(["fold", "slide_id"], kind="mergesort").reset_index(drop=True)
    calibration = fit_platt(holdout["score"].to_numpy(), holdout["label"].to_numpy())
    fold_report = pd.DataFrame(
        [{name: getattr(r.checkpoint, name) for name in FOLD_REPORT_COLUMNS} for r in results],
        columns=FOLD_REPORT_COLUMNS,
    )
    logger.info(f"Cross-validation done: mean holdout kappa {fold_report['holdout_kappa'].mean():.4f}.")
    return CrossValidationResult(
        folds=folds,
        checkpoints=[r.checkpoint for r in results],
        calibration=calibration,
        holdout_scores=holdout,
        fold_report=fold_report,
    )
