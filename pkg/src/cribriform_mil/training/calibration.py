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

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from cribriform_mil.core.exceptions import DegenerateMetricError, MissingInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationParams:
    """Platt map `sigmoid(a * s + b)`."""

    a: float = 1.0
    b: float = 0.0
    n_iter: int = 0
    converged: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"calibration parameters must be finite, got a={self.a}, b={self.b}")

    def apply(self, scores):
        return expit(self.a * np.asarray(scores, dtype=np.float64) + self.b)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b}

    def save(self, path: str, **extra):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({**self.to_dict(), **extra}, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> CalibrationParams:
        if not os.path.isfile(path):
            raise MissingInputError(f"calibration file not found: {path}")
        with open(path, encoding="utf-8") as f:
            params = json.load(f)
        return cls(a=float(params["a"]), b=float(params["b"]))


def _negative_log_likelihood(theta: np.ndarray, design: np.ndarray, labels: np.ndarray) -> float:
    z = design @ theta
    return float(np.sum(np.logaddexp(0.0, z) - labels * z))


def fit_platt(scores, labels, max_iter: int = 100, tol: float = 1e-10) -> CalibrationParams:
    """Fit `sigmoid(a * s + b)` to (possibly soft) labels by damped Newton iteration.

    Starts from the intercept-only solution and halves each Newton step until the likelihood does not
    decrease; stops when the gradient norm drops below `tol` (converged), when no step length down to
    1e-10 decreases the likelihood, or after `max_iter` iterations. The last two warn and are not converged.

    Raises:
        DegenerateMetricError: If the labels contain a single class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be one-dimensional arrays of the same length")
    if ((labels < 0) | (labels > 1)).any():
        raise ValueError("labels must lie in [0, 1]")
    n_pos, n_neg = labels.sum(), (1 - labels).sum()
    if n_pos <= 0 or n_neg <= 0:
        raise DegenerateMetricError("Platt scaling needs both classes in the holdout scores")

    design = np.column_stack([scores, np.ones_like(scores)])
    theta = np.array([0.0, math.log(n_pos / n_neg)])
    nll = _negative_log_likelihood(theta, design, labels)
    converged, n_iter = False, 0
    for n_iter in range(1, max_iter + 1):
        p = expit(design @ theta)
        gradient = design.T @ (p - labels)
        if np.linalg.norm(gradient) < tol:
            converged = True
            break
        hessian = design.T @ (design * (p * (1 - p))[:, None])
        step = np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            candidate = theta - t * step
            candidate_nll = _negative_log_likelihood(candidate, design, labels)
            if candidate_nll <= nll:
                break
            t /= 2
        else:
            warnings.warn(
                f"Platt line search stalled at iteration {n_iter} (gradient norm {np.linalg.norm(gradient):.3g})."
            )
            break
        theta, nll = candidate, candidate_nll
    else:
        warnings.warn(f"Platt scaling did not converge in {max_iter} iterations.")

    a, b = float(theta[0]), float(theta[1])
    if a <= 0:
        warnings.warn(f"Platt slope a = {a:.4g} is not positive: holdout scores carry no usable ranking signal.")
    logger.info(f"Fitted Platt scaling a = {a:.4f}, b = {b:.4f} in {n_iter} iterations (converged: {converged}).")
    return CalibrationParams(a=a, b=b, n_iter=n_iter, converged=converged)
