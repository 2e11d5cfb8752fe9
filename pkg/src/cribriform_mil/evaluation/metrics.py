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

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import roc_curve

from cribriform_mil.core.exceptions import DegenerateMetricError

OPERATING_POINT = 0.5


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_frame(self) -> pd.DataFrame:
        """2x2 table with reference labels as rows and predictions as columns."""
        return pd.DataFrame(
            [[self.tn, self.fp], [self.fn, self.tp]],
            index=pd.Index(["reference_0", "reference_1"], name="reference"),
            columns=["predicted_0", "predicted_1"],
        )


def _binary(values, name: str) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.isin(array, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return array.astype(np.int64)


def _check_lengths(a, b):
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("at least one sample is required")


def classify(scores, operating_point: float = OPERATING_POINT) -> np.ndarray:
    """Binary calls `score >= operating_point` (ties are positive)."""
    return (np.asarray(scores, dtype=np.float64) >= operating_point).astype(np.int64)


def confusion(predictions, labels) -> ConfusionMatrix:
    predictions, labels = _binary(predictions, "predictions"), _binary(labels, "labels")
    _check_lengths(predictions, labels)
    return ConfusionMatrix(
        tp=int(((predictions == 1) & (labels == 1)).sum()),
        fp=int(((predictions == 1) & (labels == 0)).sum()),
        tn=int(((predictions == 0) & (labels == 0)).sum()),
        fn=int(((predictions == 0) & (labels == 1)).sum()),
    )


def sensitivity_specificity(cm: ConfusionMatrix) -> tuple[float, float]:
    """`tp / (tp + fn)` and `tn / (tn + fp)`; an undefined ratio is NaN and triggers a warning."""
    if cm.tp + cm.fn == 0:
        warnings.warn("Sensitivity is undefined without reference positives.")
        sensitivity = math.nan
    else:
        sensitivity = cm.tp / (cm.tp + cm.fn)
    if cm.tn + cm.fp == 0:
        warnings.warn("Specificity is undefined without reference negatives.")
        specificity = math.nan
    else:
        specificity = cm.tn / (cm.tn + cm.fp)
    return sensitivity, specificity


def sensitivity(predictions, labels) -> float:
    return sensitivity_specificity(confusion(predictions, labels))[0]


def specificity(predictions, labels) -> float:
    return sensitivity_specificity(confusion(predictions, labels))[1]


def accuracy(predictions, labels) -> float:
    cm = confusion(predictions, labels)
    return (cm.tp + cm.tn) / cm.n


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count one half), from average ranks.

    Raises:
        DegenerateMetricError: If only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    _check_lengths(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError("AUC is undefined for single-class labels")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u_statistic / (n_pos * n_neg))


def roc_points(scores, labels) -> pd.DataFrame:
    """Every ROC operating point (`threshold`, `fpr`, `tpr`), without dropping collinear points."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    if labels.min() == labels.max():
        raise DegenerateMetricError("ROC is undefined for single-class labels")
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    return pd.DataFrame({"threshold": thresholds, "fpr": fpr, "tpr": tpr})


def cohens_kappa(ratings_a, ratings_b) -> float:
    """Unweighted Cohen's kappa of two binary raters, `(p_o - p_e) / (1 - p_e)`.

    When chance agreement is total (`p_e = 1`, both raters constant and equal) the result is 1.
    """
    a, b = _binary(ratings_a, "ratings_a"), _binary(ratings_b, "ratings_b")
    _check_lengths(a, b)
    n = len(a)
    p_o = float((a == b).sum()) / n
    pa1, pb1 = a.sum() / n, b.sum() / n
    p_e = float(pa1 * pb1 + (1 - pa1) * (1 - pb1))
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1 - p_e)


def calibration_curve(scores, labels, bins: int = 10) -> pd.DataFrame:
    """Equal-width reliability bins on [0, 1]: `bin_center`, `mean_predicted`, `observed_frequency`, `count`.

    A score `s` falls in bin `min(floor(bins * s), bins - 1)`; empty bins have count 0 and NaN values.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(scores) != len(labels):
        raise ValueError(f"length mismatch: {len(scores)} vs {len(labels)}")
    if len(scores) and (scores.min() < 0 or scores.max() > 1):
        raise ValueError("scores must lie in [0, 1]")
    index = np.minimum(np.floor(scores * bins).astype(np.int64), bins - 1)
    rows = []
    for k in range(bins):
        in_bin = index == k
        count = int(in_bin.sum())
        rows.append(
            {
                "bin_center": (k + 0.5) / bins,
                "mean_predicted": float(scores[in_bin].mean()) if count else math.nan,
                "observed_frequency": float(labels[in_bin].mean()) if count else math.nan,
                "count": count,
            }
        )
    return pd.DataFrame(rows, columns=["bin_center", "mean_predicted", "observed_frequency", "count"])
