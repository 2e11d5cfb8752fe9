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
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed, effective_n_jobs

from cribriform_mil.core.exceptions import ConfigError, DegenerateMetricError
from cribriform_mil.utils import make_rng

logger = logging.getLogger(__name__)

N_BOOTSTRAP = 1000
MAX_REDRAWS = 100


@dataclass(frozen=True)
class MetricEstimate:
    """A point estimate with its percentile-bootstrap 95% interval.

    `samples` keeps the sorted resample values the interval endpoints were read from.
    """

    name: str
    value: float
    ci_low: float
    ci_high: float
    n_bootstrap: int = N_BOOTSTRAP
    seed: int = 0
    n_redrawn: int = 0
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_bootstrap": self.n_bootstrap,
            "seed": self.seed,
            "n_redrawn": self.n_redrawn,
        }


def _is_defined(value) -> bool:
    return value is not None and math.isfinite(value)


def _evaluate(metric: Callable, arrays: tuple[np.ndarray, ...], idx: np.ndarray | None = None):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return metric(*(a if idx is None else a[idx] for a in arrays))
    except DegenerateMetricError:
        return math.nan


def _resample(metric: Callable, arrays: tuple[np.ndarray, ...], seed: int, index: int) -> tuple[float, int]:
    """Metric on resample `index`; undefined resamples are redrawn from the same stream."""
    rng = make_rng(seed, "bootstrap", index)
    n = len(arrays[0])
    for redraws in range(MAX_REDRAWS + 1):
        value = _evaluate(metric, arrays, rng.integers(0, n, size=n))
        if _is_defined(value):
            return float(value), redraws
    raise DegenerateMetricError(f"bootstrap resample {index} stayed undefined after {MAX_REDRAWS} redraws")


def _chunk(metric, arrays, seed, indices):
    return [_resample(metric, arrays, seed, i) for i in indices]


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the `ceil(q n)`-th smallest value (1-based)."""
    n = len(sorted_values)
    return float(sorted_values[max(math.ceil(q * n) - 1, 0)])


def bootstrap_ci(
    metric: Callable,
    data: tuple | list,
    n_bootstrap: int = N_BOOTSTRAP,
    seed: int = 0,
    name: str = "metric",
    n_jobs: int = 1,
) -> MetricEstimate:
    """Percentile bootstrap of `metric(*data)` resampling rows (slides) with replacement.

    Each resample `i` draws from a stream derived from `(seed, i)`, so serial and parallel runs agree.
    Resamples on which the metric is undefined (NaN or `DegenerateMetricError`) are redrawn and counted.
    The interval is `[2.5%, 97.5%]` by the nearest-rank rule.

    Args:
        metric (Callable): Function of the arrays in `data`.
        data (tuple): Arrays of equal length along axis 0.
        n_bootstrap (int): Number of resamples.
        seed (int): Root seed.
        name (str): Metric name carried into the estimate.
        n_jobs (int): Worker processes.

    Raises:
        ConfigError: If `n_bootstrap` is not a positive integer.
        DegenerateMetricError: If the metric is undefined on the observed sample.
    """
    if isinstance(n_bootstrap, bool) or not isinstance(n_bootstrap, (int, np.integer)) or n_bootstrap < 1:
        raise ConfigError(f"n_bootstrap must be a positive integer, got {n_bootstrap!r}")
    arrays = tuple(np.asarray(a) for a in data)
    if not arrays or len(arrays[0]) == 0:
        raise ValueError("bootstrap needs at least one sample")
    if any(len(a) != len(arrays[0]) for a in arrays):
        raise ValueError("all arrays must have the same length")
    value = _evaluate(metric, arrays)
    if not _is_defined(value):
        raise DegenerateMetricError(f"{name} is undefined on the observed sample")

    chunks = np.array_split(np.arange(n_bootstrap), max(1, min(effective_n_jobs(n_jobs), n_bootstrap)))
    results = Parallel(n_jobs=n_jobs)(delayed(_chunk)(metric, arrays, seed, chunk) for chunk in chunks)
    flat = [r for chunk in results for r in chunk]
    samples = np.sort(np.array([v for v, _ in flat]))
    n_redrawn = int(sum(r for _, r in flat))
    ci_low, ci_high = nearest_rank(samples, 0.025), nearest_rank(samples, 0.975)
    if not ci_low <= value <= ci_high:
        warnings.warn(f"Point estimate of {name} ({value:.4f}) lies outside its bootstrap interval [{ci_low:.4f}, {ci_high:.4f}].")
    if n_redrawn:
        logger.info(f"Bootstrap of {name}: {n_redrawn} undefined resamples redrawn.")
    return MetricEstimate(
        name=name,
        value=float(value),
        ci_low=ci_low,
        ci_high=ci_high,
        n_bootstrap=n_bootstrap,
        seed=seed,
        n_redrawn=n_redrawn,
        samples=samples,
    )
