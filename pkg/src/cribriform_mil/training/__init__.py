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

from .augment import AUGMENTATIONS, augment_patch, dihedral, jpeg_round_trip, random_crop
from .calibration import CalibrationParams, fit_platt
from .config import TrainRunConfig
from .cross_validation import (
    FOLD_REPORT_COLUMNS,
    HOLDOUT_SCORE_COLUMNS,
    CrossValidationResult,
    FoldCheckpoint,
    FoldData,
    PatchTrainingResult,
    cross_validate,
    patch_arrays,
    run_fold,
    split_fold,
    train_patch_classifier,
    train_slide_mil,
)
from .data import (
    ScanBag,
    SlideBags,
    bag_label_from_patches,
    build_scan_bag,
    first_subset,
    load_slide_bags,
    select_training_bag,
    subsample_bag,
)
from .trainer import EpochRecord, PatchClassifierTrainer, SlideMILTrainer, holdout_kappa, select_best_epoch

__all__ = [
    "AUGMENTATIONS",
    "augment_patch",
    "dihedral",
    "jpeg_round_trip",
    "random_crop",
    "CalibrationParams",
    "fit_platt",
    "TrainRunConfig",
    "FOLD_REPORT_COLUMNS",
    "HOLDOUT_SCORE_COLUMNS",
    "CrossValidationResult",
    "FoldCheckpoint",
    "FoldData",
    "PatchTrainingResult",
    "cross_validate",
    "patch_arrays",
    "run_fold",
    "split_fold",
    "train_patch_classifier",
    "train_slide_mil",
    "ScanBag",
    "SlideBags",
    "bag_label_from_patches",
    "build_scan_bag",
    "first_subset",
    "load_slide_bags",
    "select_training_bag",
    "subsample_bag",
    "EpochRecord",
    "PatchClassifierTrainer",
    "SlideMILTrainer",
    "holdout_kappa",
    "select_best_epoch",
]
