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

from cribriform_mil.evaluation.metrics import classify

from .ensemble import (
    PREDICTION_COLUMNS,
    VIEW_COLUMNS,
    SlidePrediction,
    checkpoint_path,
    ensemble_predict,
    load_ensemble,
    predict_manifest,
    predictions_frame,
    score_matrix,
    soft_vote,
    views_frame,
)
from .tta import N_VIEWS, scan_tta_views, tta_transforms, tta_views

__all__ = [
    "classify",
    "PREDICTION_COLUMNS",
    "VIEW_COLUMNS",
    "SlidePrediction",
    "checkpoint_path",
    "ensemble_predict",
    "load_ensemble",
    "predict_manifest",
    "predictions_frame",
    "score_matrix",
    "soft_vote",
    "views_frame",
    "N_VIEWS",
    "scan_tta_views",
    "tta_transforms",
    "tta_views",
]
