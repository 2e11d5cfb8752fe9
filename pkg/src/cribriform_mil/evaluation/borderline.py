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
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

RELATIVE_SLACK = 1e-12


def _log_choose(n: int, k: np.ndarray) -> np.ndarray:
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def fisher_exact(table) -> float:
    """Two-sided Fisher exact test of a 2x2 table of counts.

    The p-value sums the hypergeometric probabilities of every table with the observed margins whose
    probability does not exceed the observed one (with a relative slack of `1e-12`). A table with an
    empty row or column has p = 1.
    """
    table = np.asarray(table)
    if table.shape != (2, 2):
        raise ValueError(f"expected a 2x2 table, got shape {table.shape}")
    if not np.all(table == np.floor(table)) or (table < 0).any():
        raise ValueError(f"table entries must be non-negative integers, got {table.tolist()}")
    (a, b), (c, d) = table.astype(np.int64)
    row1, row2, col1 = a + b, c + d, a + c
    n = row1 + row2
    if min(row1, row2, col1, n - col1) == 0:
        return 1.0
    support = np.arange(max(0, col1 - row2), min(row1, col1) + 1)
    log_weights = _log_choose(row1, support) + _log_choose(row2, col1 - support)
    weights = np.exp(log_weights - log_weights.max())
    observed = weights[a - support[0]]
    p_value = weights[weights <= observed * (1 + RELATIVE_SLACK)].sum() / weights.sum()
    return float(min(p_value, 1.0))


@dataclass(frozen=True)
class BorderlineResult:
    """Prevalence of borderline slides among false positives and true negatives.

    `table` is `[[fp_borderline, fp_other], [tn_borderline, tn_other]]`.
    """

    table: np.ndarray
    fp_borderline_rate: float
    tn_borderline_rate: float
    p_value: float

    @property
    def n_false_positive(self) -> int:
        return int(self.table[0].sum())

    @property
    def n_true_negative(self) -> int:
        return int(self.table[1].sum())

    def to_dict(self) -> dict:
        return {
            "table": self.table.tolist(),
            "fp_borderline_rate": self.fp_borderline_rate,
            "tn_borderline_rate": self.tn_borderline_rate,
            "p_value": self.p_value,
        }


def borderline_analysis(predictions, labels, borderline) -> BorderlineResult:
    """Compare how often borderline slides occur among false positives versus true negatives.

    Only reference-negative slides enter the table; rates of an empty group are NaN (with a warning).
    """
    predictions, labels, borderline = (np.asarray(x).astype(np.int64) for x in (predictions, labels, borderline))
    if not len(predictions) == len(labels) == len(borderline):
        raise ValueError("predictions, labels and borderline flags must have the same length")
    negative = labels == 0
    fp = negative & (predictions == 1)
    tn = negative & (predictions == 0)
    table = np.array(
        [
            [int((fp & (borderline == 1)).sum()), int((fp & (borderline == 0)).sum())],
            [int((tn & (borderline == 1)).sum()), int((tn & (borderline == 0)).sum())],
        ]
    )
    rates = []
    for group, row in (("false-positive", table[0]), ("true-negative", table[1])):
        if row.sum() == 0:
            warnings.warn(f"Borderline rate undefined: the {group} group is empty.")
            rates.append(math.nan)
        else:
            rates.append(row[0] / row.sum())
    result = BorderlineResult(
        table=table, fp_borderline_rate=rates[0], tn_borderline_rate=rates[1], p_value=fisher_exact(table)
    )
    logger.info(
        f"Borderline analysis: FP rate {result.fp_borderline_rate:.3f}, TN rate {result.tn_borderline_rate:.3f}, p = {result.p_value:.4g}."
    )
    return result
