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
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed

from cribriform_mil.core import DatasetManifest, InvariantViolation, Role, ScanRecord
from cribriform_mil.evaluation.metrics import OPERATING_POINT, classify
from cribriform_mil.models import SlideMIL
from cribriform_mil.training import CalibrationParams, FoldCheckpoint

from .tta import N_VIEWS, scan_tta_views

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["slide_id", "scan_id", "raw_score", "calibrated_score", "label"]
VIEW_COLUMNS = ["slide_id", "scan_id", "model", "view", "score"]
THRESHOLD_TARGETS = ("calibrated", "raw")


@dataclass
class SlidePrediction:
    """Ensemble prediction for one scan of one slide.

    `scores` holds one probability per (model, view); `raw_score` is their arithmetic mean and
    `calibrated_score` the Platt map of that mean.
    """

    slide_id: str
    scan_id: str
    raw_score: float
    calibrated_score: float
    label: int
    scores: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def to_row(self) -> dict:
        return {name: getattr(self, name) for name in PREDICTION_COLUMNS}

    def view_rows(self) -> list[dict]:
        return [
            {"slide_id": self.slide_id, "scan_id": self.scan_id, "model": m, "view": v, "score": float(s)}
            for (m, v), s in np.ndenumerate(self.scores)
        ]


def soft_vote(scores: np.ndarray) -> float:
    """Exact arithmetic mean of a score matrix (correctly rounded, so independent of entry order)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot average an empty score matrix")
    return math.fsum(scores.ravel().tolist()) / scores.size


@torch.no_grad()
def score_matrix(views: np.ndarray, models: list[SlideMIL]) -> np.ndarray:
    """Probabilities of every frozen model on every view, shaped `(n_models, n_views)`."""
    assert views.ndim == 3, "views must be shaped (views, patches, features)"
    scores = np.zeros((len(models), views.shape[0]))
    bags = [torch.as_tensor(view, dtype=torch.float32) for view in views]
    for m, model in enumerate(models):
        if model.training:
            raise InvariantViolation(f"ensemble model {m} is in training mode")
        for v, bag in enumerate(bags):
            probability, _ = model(bag)
            scores[m, v] = float(probability)
    return scores


def ensemble_predict(
    views: np.ndarray,
    models: list[SlideMIL],
    platt: CalibrationParams | None = None,
    calibrate: bool = True,
    threshold_on: str = "calibrated",
    operating_point: float = OPERATING_POINT,
    slide_id: str = "",
    scan_id: str = "",
) -> SlidePrediction:
    r"""Soft-voting prediction of the fold ensemble over all test-time views of one bag.

    Every extracted patch is used (no subsampling). The raw score is the mean of the
    `n_models x n_views` probability matrix and the calibrated score is

    $$
    \sigma(a \cdot \bar{s} + b)
    $$

    so the identity calibration `(a=1, b=0)` maps a raw score of 0 to 0.5. With `calibrate=False` the
    calibrated score is the raw score.

    Args:
        views (np.ndarray): Descriptor views `(n_views, n_patches, 40)` of a non-empty bag.
        models (list[SlideMIL]): Frozen fold models in evaluation mode.
        platt (CalibrationParams, optional): Platt parameters; required when `calibrate` is set.
        calibrate (bool): Whether to apply the Platt map.
        threshold_on (str): `"calibrated"` or `"raw"`, the score compared against the operating point.
        operating_point (float): Threshold; scores at or above it are positive.
    """
    if threshold_on not in THRESHOLD_TARGETS:
        raise ValueError(f"threshold_on must be one of {THRESHOLD_TARGETS}, got '{threshold_on}'")
    if not models:
        raise ValueError("the ensemble has no models")
    if views.shape[1] == 0:
        raise ValueError(f"scan '{scan_id}' has an empty bag")
    if calibrate and platt is None:
        raise ValueError("calibration requested without Platt parameters")
    scores = score_matrix(views, models)
    raw = soft_vote(scores)
    calibrated = float(platt.apply(raw)) if calibrate else raw
    decision = calibrated if threshold_on == "calibrated" else raw
    return SlidePrediction(
        slide_id=slide_id,
        scan_id=scan_id,
        raw_score=raw,
        calibrated_score=calibrated,
        label=int(classify(decision, operating_point)),
        scores=scores,
    )


def checkpoint_path(checkpoint_dir: str, fold: int) -> str:
    return os.path.join(checkpoint_dir, f"fold_{fold}.milw")


def load_ensemble(checkpoint_dir: str, folds: int) -> list[FoldCheckpoint]:
    """Load `fold_0.milw` ... `fold_{folds-1}.milw`; any missing or mis-shaped checkpoint aborts."""
    checkpoints = [FoldCheckpoint.load(checkpoint_path(checkpoint_dir, fold)) for fold in range(folds)]
    for expected, checkpoint in enumerate(checkpoints):
        if checkpoint.fold != expected:
            raise InvariantViolation(f"{checkpoint_path(checkpoint_dir, expected)} holds fold {checkpoint.fold}")
    logger.info(f"Loaded {len(checkpoints)} fold checkpoints from {checkpoint_dir}.")
    return checkpoints


def _predict_scan(
    slide_id: str,
    scan: ScanRecord,
    tile_dir: str,
    models: list[SlideMIL],
    platt: CalibrationParams | None,
    n_views: int,
    seed: int,
    calibrate: bool,
    threshold_on: str,
    operating_point: float,
) -> SlidePrediction | None:
    torch.set_num_threads(1)
    views = scan_tta_views(tile_dir, scan.scan_id, n_views, seed)
    if views.shape[1] == 0:
        warnings.warn(f"Scan '{scan.scan_id}' of slide '{slide_id}' has no tissue patches and is not predicted.")
        return None
    return ensemble_predict(
        views,
        models,
        platt,
        calibrate=calibrate,
        threshold_on=threshold_on,
        operating_point=operating_point,
        slide_id=slide_id,
        scan_id=scan.scan_id,
    )


def predict_manifest(
    manifest: DatasetManifest,
    tile_dir: str,
    models: list[SlideMIL],
    platt: CalibrationParams | None = None,
    n_views: int = N_VIEWS,
    seed: int = 0,
    calibrate: bool = True,
    threshold_on: str = "calibrated",
    operating_point: float = OPERATING_POINT,
    roles: tuple[Role, ...] = (Role.INTERNAL_VALIDATION, Role.EXTERNAL_VALIDATION),
    n_jobs: int = 1,
) -> list[SlidePrediction]:
    """Ensemble predictions for every scan of every slide with one of `roles`, in manifest order."""
    tasks = [(slide.slide_id, scan) for slide in manifest.slides_by_role(*roles) for scan in slide.scans]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_predict_scan)(
            slide_id, scan, tile_dir, models, platt, n_views, seed, calibrate, threshold_on, operating_point
        )
        for slide_id, scan in tasks
    )
    predictions = [r for r in results if r is not None]
    logger.info(f"Predicted {len(predictions)} scans of {len({t[0] for t in tasks})} slides.")
    return predictions


def predictions_frame(predictions: list[SlidePrediction]) -> pd.DataFrame:
    return pd.DataFrame([p.to_row() for p in predictions], columns=PREDICTION_COLUMNS)


def views_frame(predictions: list[SlidePrediction]) -> pd.DataFrame:
    return pd.DataFrame([row for p in predictions for row in p.view_rows()], columns=VIEW_COLUMNS)
