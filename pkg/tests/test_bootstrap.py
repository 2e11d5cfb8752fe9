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

from cribriform_mil.core import ConfigError, DegenerateMetricError
from cribriform_mil.evaluation import bootstrap_ci, nearest_rank, roc_auc


def _mean(values):
    return float(np.mean(values))


@pytest.fixture(scope="module")
def scores_and_labels():
    rng = np.random.default_rng(11)
    labels = np.array([0] * 30 + [1] * 10)
    scores = np.clip(rng.normal(0.35 + 0.3 * labels, 0.15), 0.0, 1.0)
    return scores, labels


def test_nearest_rank():
    values = np.arange(1, 101, dtype=float)
    assert nearest_rank(values, 0.025) == 3.0
    assert nearest_rank(values, 0.975) == 98.0
    assert nearest_rank(values, 0.0) == 1.0
    assert nearest_rank(np.array([4.0]), 0.5) == 4.0


def test_constant_metric_has_degenerate_interval():
    estimate = bootstrap_ci(lambda x: 0.8, (np.arange(20),), n_bootstrap=50, seed=1)
    assert (estimate.value, estimate.ci_low, estimate.ci_high) == (0.8, 0.8, 0.8)
    assert estimate.n_redrawn == 0
    assert len(estimate.samples) == 50


def test_interval_brackets_the_mean():
    data = np.linspace(0.0, 1.0, 41)
    estimate = bootstrap_ci(_mean, (data,), n_bootstrap=400, seed=3, name="mean")
    assert estimate.name == "mean"
    assert estimate.ci_low <= estimate.value <= estimate.ci_high
    assert math.isclose(estimate.value, 0.5)
    # resample means of 41 points spread roughly +-0.09 around the mean
    assert 0.3 < estimate.ci_low < 0.5 < estimate.ci_high < 0.7
    assert np.all(np.diff(estimate.samples) >= 0), "samples are kept sorted"


def test_same_seed_same_interval(scores_and_labels):
    first = bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=200, seed=9)
    second = bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=200, seed=9)
    other = bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=200, seed=10)
    assert first == second
    np.testing.assert_array_equal(first.samples, second.samples)
    assert not np.array_equal(first.samples, other.samples)


def test_parallel_matches_serial(scores_and_labels):
    serial = bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=120, seed=4, n_jobs=1)
    parallel = bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=120, seed=4, n_jobs=2)
    np.testing.assert_array_equal(serial.samples, parallel.samples)
    assert serial.n_redrawn == parallel.n_redrawn


def test_undefined_resamples_are_redrawn():
    # one positive among 40: most resamples miss it and leave AUC undefined
    labels = np.zeros(40, dtype=int)
    labels[0] = 1
    scores = np.linspace(1.0, 0.0, 40)
    estimate = bootstrap_ci(roc_auc, (scores, labels), n_bootstrap=100, seed=2)
    assert estimate.value == 1.0
    assert estimate.n_redrawn > 0
    assert np.all(np.isfinite(estimate.samples))


def test_bootstrap_errors():
    with pytest.raises(ValueError):
        bootstrap_ci(_mean, (np.array([]),))
    with pytest.raises(ValueError):
        bootstrap_ci(roc_auc, (np.zeros(3), np.zeros(4)))
    with pytest.raises(DegenerateMetricError):
        bootstrap_ci(roc_auc, (np.arange(5) / 5, np.zeros(5, dtype=int)))


@pytest.mark.parametrize("n_bootstrap", [0, -5, 2.5])
def test_bootstrap_needs_positive_resample_count(scores_and_labels, n_bootstrap):
    with pytest.raises(ConfigError, match="n_bootstrap"):
        bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=n_bootstrap, seed=0)


def test_to_dict_excludes_samples(scores_and_labels):
    estimate = bootstrap_ci(roc_auc, scores_and_labels, n_bootstrap=20, seed=0)
    assert set(estimate.to_dict()) == {"value", "ci_low", "ci_high", "n_bootstrap", "seed", "n_redrawn"}
