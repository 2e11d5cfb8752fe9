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

from .agreement import (
    CrossScannerResult,
    RaterPanel,
    cross_scanner_agreement,
    kappa_matrix,
    mean_pairwise_kappa,
    pairwise_kappa_matrix,
    rank_raters,
)
from .bootstrap import N_BOOTSTRAP, MetricEstimate, bootstrap_ci, nearest_rank
from .borderline import BorderlineResult, borderline_analysis, fisher_exact
from .metrics import (
    OPERATING_POINT,
    ConfusionMatrix,
    accuracy,
    calibration_curve,
    classify,
    cohens_kappa,
    confusion,
    roc_auc,
    roc_points,
    sensitivity,
    sensitivity_specificity,
    specificity,
)
from .report import MODEL_RATER, CribriformEvaluator, estimate_from_report, headline_metrics

__all__ = [
    "CrossScannerResult",
    "RaterPanel",
    "cross_scanner_agreement",
    "kappa_matrix",
    "mean_pairwise_kappa",
    "pairwise_kappa_matrix",
    "rank_raters",
    "N_BOOTSTRAP",
    "MetricEstimate",
    "bootstrap_ci",
    "nearest_rank",
    "BorderlineResult",
    "borderline_analysis",
    "fisher_exact",
    "OPERATING_POINT",
    "ConfusionMatrix",
    "accuracy",
    "calibration_curve",
    "classify",
    "cohens_kappa",
    "confusion",
    "roc_auc",
    "roc_points",
    "sensitivity",
    "sensitivity_specificity",
    "specificity",
    "MODEL_RATER",
    "CribriformEvaluator",
    "estimate_from_report",
    "headline_metrics",
]
