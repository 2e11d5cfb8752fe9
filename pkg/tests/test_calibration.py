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

import numpy as np
import pytest
from scipy.special import expit

from cribriform_mil.core import DegenerateMetricError, MissingInputError
from cribriform_mil.training import CalibrationParams, calibration, fit_platt


def test_identity_calibration():
    identity = CalibrationParams()
    assert identity.apply(0.0) == 0.5
    assert np.allclose(identity.apply([-1.0, 1.0]), expit([-1.0, 1.0]))
    with pytest.raises(ValueError):
        CalibrationParams(a=float("nan"))


def test_fit_recovers_parameters_from_soft_labels():
    scores = np.linspace(-3, 3, 61)
    labels = expit(2.0 * scores - 1.0)
    params = fit_platt(scores, labels)
    assert params.converged
    assert params.a == pytest.approx(2.0, abs=1e-6) and params.b == pytest.approx(-1.0, abs=1e-6)


def test_fit_on_hard_labels():
    rng = np.random.default_rng(0)
    scores = rng.uniform(0, 1, size=400)
    labels = (rng.uniform(size=400) < expit(6 * scores - 3)).astype(int)
    params = fit_platt(scores, labels)
    assert params.a > 0, "Higher scores should map to higher probabilities"
    calibrated = params.apply(scores)
    # at the maximum likelihood the mean calibrated probability matches the positive rate
    assert calibrated.mean() == pytest.approx(labels.mean(), abs=1e-6)


def test_fit_without_ranking_signal_warns():
    with pytest.warns(UserWarning, match="not positive"):
        params = fit_platt([0.0, 0.0, 1.0, 1.0], [0, 1, 0, 1])
    assert params.a == 0.0 and params.b == 0.0


def test_stalled_line_search_is_not_converged(monkeypatch):
    # every candidate looks worse than the starting point, so no step length is accepted
    values = iter([0.0])
    monkeypatch.setattr(calibration, "_negative_log_likelihood", lambda *args: next(values, 1.0))
    scores = np.linspace(-3, 3, 61)
    with pytest.warns(UserWarning, match="line search stalled"):
        params = calibration.fit_platt(scores, expit(2.0 * scores - 1.0))
    assert not params.converged
    assert params.n_iter == 1
    assert params.a == 0.0, "A stalled fit keeps the intercept-only start"


def test_fit_out_of_iterations_is_not_converged():
    scores = np.linspace(-3, 3, 61)
    with pytest.warns(UserWarning, match="did not converge in 1 iterations"):
        params = fit_platt(scores, expit(2.0 * scores - 1.0), max_iter=1)
    assert not params.converged


def test_fit_errors():
    with pytest.raises(DegenerateMetricError):
        fit_platt([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        fit_platt([0.1, 0.2], [0, 2])
    with pytest.raises(ValueError):
        fit_platt([0.1, 0.2], [0])


def test_save_and_load(tmp_path):
    path = str(tmp_path / "platt.json")
    CalibrationParams(a=1.5, b=-0.25).save(path, n_iter=3)
    loaded = CalibrationParams.load(path)
    assert (loaded.a, loaded.b) == (1.5, -0.25)
    with pytest.raises(MissingInputError):
        CalibrationParams.load(str(tmp_path / "absent.json"))
