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

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import fisher_exact as scipy_fisher_exact

from cribriform_mil.evaluation import borderline_analysis, fisher_exact


def _enumerated_p_value(table) -> float:
    """Two-sided Fisher p-value by enumerating every table with the observed margins."""
    (a, b), (c, d) = table
    row1, row2, col1 = a + b, c + d, a + c

    def probability(x):
        return math.comb(row1, x) * math.comb(row2, col1 - x) / math.comb(row1 + row2, col1)

    observed = probability(a)
    support = range(max(0, col1 - row2), min(row1, col1) + 1)
    return sum(p for p in map(probability, support) if p <= observed * (1 + 1e-12))


def test_fisher_exact_known_values():
    assert math.isclose(fisher_exact([[2, 0], [0, 2]]), 1 / 3)
    assert fisher_exact([[3, 3], [3, 3]]) == pytest.approx(1.0)
    assert fisher_exact([[0, 0], [4, 5]]) == 1.0


@given(st.lists(st.integers(0, 12), min_size=4, max_size=4))
def test_fisher_exact_matches_enumeration(counts):
    table = [counts[:2], counts[2:]]
    p_value = fisher_exact(table)
    if min(sum(counts[:2]), sum(counts[2:]), counts[0] + counts[2], counts[1] + counts[3]) == 0:
        assert p_value == 1.0
        return
    assert p_value == pytest.approx(min(_enumerated_p_value(table), 1.0), rel=1e-9)
    assert 0.0 < p_value <= 1.0


def test_fisher_exact_agrees_with_scipy():
    for table in ([[8, 2], [1, 5]], [[10, 4], [3, 12]], [[1, 9], [11, 3]]):
        assert fisher_exact(table) == pytest.approx(scipy_fisher_exact(table)[1], rel=1e-9)


def test_fisher_exact_rejects_bad_tables():
    with pytest.raises(ValueError):
        fisher_exact([[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ValueError):
        fisher_exact([[1, -1], [2, 3]])
    with pytest.raises(ValueError):
        fisher_exact([[1.5, 1], [2, 3]])


def test_borderline_analysis_table():
    # negatives: 3 false positives (2 borderline), 5 true negatives (1 borderline); positives are ignored
    predictions = [1, 1, 1, 0, 0, 0, 0, 0, 1, 0]
    labels = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1]
    borderline = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]
    result = borderline_analysis(predictions, labels, borderline)

    np.testing.assert_array_equal(result.table, [[2, 1], [1, 4]])
    assert result.n_false_positive == 3
    assert result.n_true_negative == 5
    assert math.isclose(result.fp_borderline_rate, 2 / 3)
    assert math.isclose(result.tn_borderline_rate, 1 / 5)
    assert math.isclose(result.p_value, _enumerated_p_value([[2, 1], [1, 4]]))
    assert result.to_dict()["table"] == [[2, 1], [1, 4]]


def test_borderline_analysis_without_borderline_slides():
    result = borderline_analysis([1, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0])
    assert result.fp_borderline_rate == 0.0
    assert result.tn_borderline_rate == 0.0
    assert result.p_value == 1.0


def test_borderline_analysis_empty_group_warns():
    with pytest.warns(UserWarning, match="false-positive"):
        result = borderline_analysis([0, 0, 1], [0, 0, 1], [1, 0, 0])
    assert math.isnan(result.fp_borderline_rate)
    assert result.tn_borderline_rate == 0.5
    with pytest.raises(ValueError):
        borderline_analysis([0, 1], [0], [0, 1])
