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
from dataclasses import dataclass, field
from functools import partial
from itertools import combinations

import numpy as np
import pandas as pd

from cribriform_mil.core.exceptions import InvariantViolation

from .bootstrap import N_BOOTSTRAP, MetricEstimate, bootstrap_ci
from .metrics import cohens_kappa

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RaterPanel:
    """Binary calls of several raters on an identical set of slides.

    `calls` is a wide frame indexed by `slide_id` with one column per rater. Raters listed in `models`
    are scored against the pathologists but never serve as comparators themselves.
    """

    calls: pd.DataFrame
    reference: str
    models: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.reference not in self.calls.columns:
            raise InvariantViolation(f"reference rater '{self.reference}' has no calls")
        unknown = [m for m in self.models if m not in self.calls.columns]
        if unknown:
            raise InvariantViolation(f"model rater '{unknown[0]}' has no calls")
        if self.calls.isna().any().any():
            rater = self.calls.columns[self.calls.isna().any()][0]
            raise InvariantViolation(f"rater '{rater}' does not cover every slide of the panel")

    @classmethod
    def from_long(cls, frame: pd.DataFrame, reference: str, models: tuple[str, ...] = ()) -> RaterPanel:
        """Build a panel from `slide_id,rater_id,call` rows."""
        if frame.duplicated(["slide_id", "rater_id"]).any():
            row = frame[frame.duplicated(["slide_id", "rater_id"])].iloc[0]
            raise InvariantViolation(f"rater '{row.rater_id}' calls slide '{row.slide_id}' twice")
        wide = frame.pivot(index="slide_id", columns="rater_id", values="call").sort_index()
        wide.columns.name = None
        return cls(calls=wide, reference=reference, models=tuple(models))

    def with_model(self, model_id: str, calls: pd.Series) -> RaterPanel:
        """Add a model's calls (indexed by slide id); it must cover exactly the panel's slides."""
        if set(calls.index) != set(self.calls.index):
            raise InvariantViolation(f"model '{model_id}' does not cover the panel's slide set")
        wide = self.calls.copy()
        wide[model_id] = calls.reindex(wide.index).astype(np.int64)
        return RaterPanel(calls=wide, reference=self.reference, models=self.models + (model_id,))

    @property
    def raters(self) -> list[str]:
        return list(self.calls.columns)

    @property
    def pathologists(self) -> list[str]:
        return [r for r in self.raters if r not in self.models]


def kappa_matrix(calls: pd.DataFrame) -> pd.DataFrame:
    """Symmetric matrix of pairwise Cohen's kappa between the columns of `calls`."""
    names = list(calls.columns)
    values = calls.to_numpy(dtype=np.int64)
    matrix = np.full((len(names), len(names)), np.nan)
    for i in range(len(names)):
        matrix[i, i] = cohens_kappa(values[:, i], values[:, i])
    for i, j in combinations(range(len(names)), 2):
        matrix[i, j] = matrix[j, i] = cohens_kappa(values[:, i], values[:, j])
    return pd.DataFrame(matrix, index=names, columns=names)


def pairwise_kappa_matrix(panel: RaterPanel) -> pd.DataFrame:
    if len(panel.raters) < 3:
        raise ValueError(f"a panel needs at least 3 raters, got {len(panel.raters)}")
    return kappa_matrix(panel.calls)


def _mean_kappa_against(values: np.ndarray, target: int, comparators: tuple[int, ...]) -> float:
    kappas = [cohens_kappa(values[:, target], values[:, c]) for c in comparators]
    return float(np.mean(kappas)) if kappas else math.nan


def mean_pairwise_kappa(
    panel: RaterPanel, target: str, n_bootstrap: int = N_BOOTSTRAP, seed: int = 0, n_jobs: int = 1
) -> MetricEstimate:
    """Mean kappa of `target` against every pathologist other than itself, with a slide-level bootstrap CI."""
    if len(panel.raters) < 3:
        raise ValueError(f"a panel needs at least 3 raters, got {len(panel.raters)}")
    if target not in panel.raters:
        raise KeyError(f"unknown rater '{target}'")
    names = panel.raters
    comparators = tuple(names.index(p) for p in panel.pathologists if p != target)
    metric = partial(_mean_kappa_against, target=names.index(target), comparators=comparators)
    return bootstrap_ci(
        metric, (panel.calls.to_numpy(dtype=np.int64),), n_bootstrap, seed, name=f"mean_kappa/{target}", n_jobs=n_jobs
    )


def rank_raters(panel: RaterPanel, n_bootstrap: int = N_BOOTSTRAP, seed: int = 0, n_jobs: int = 1) -> pd.DataFrame:
    """Every rater's mean pairwise kappa against the pathologists, best first."""
    rows = []
    for rater in panel.raters:
        estimate = mean_pairwise_kappa(panel, rater, n_bootstrap, seed, n_jobs)
        rows.append(
            {
                "rater_id": rater,
                "is_model": rater in panel.models,
                "mean_kappa": estimate.value,
                "ci_low": estimate.ci_low,
                "ci_high": estimate.ci_high,
            }
        )
    ranking = pd.DataFrame(rows).sort_values(["mean_kappa", "rater_id"], ascending=[False, True], kind="mergesort")
    ranking.insert(0, "rank", np.arange(1, len(ranking) + 1))
    return ranking.reset_index(drop=True)


@dataclass(frozen=True)
class CrossScannerResult:
    matrix: pd.DataFrame
    pairs: pd.DataFrame
    means: pd.Series
    n_slides: int


def _pair_kappa(values: np.ndarray) -> float:
    return cohens_kappa(values[:, 0], values[:, 1])


def cross_scanner_agreement(
    predictions: pd.DataFrame,
    scanners: list[str] | None = None,
    n_bootstrap: int = N_BOOTSTRAP,
    seed: int = 0,
    n_jobs: int = 1,
) -> CrossScannerResult:
    """Pairwise kappa between a model's calls on different scans of the same slides.

    Args:
        predictions (pd.DataFrame): Rows `slide_id, scanner_id, label`.
        scanners (list[str], optional): Scanners to compare; defaults to all, sorted.

    Raises:
        InvariantViolation: If a slide lacks a prediction under one of the compared scanners.
    """
    scanners = sorted(predictions["scanner_id"].unique()) if scanners is None else list(scanners)
    if len(scanners) < 2:
        raise ValueError("cross-scanner agreement needs at least 2 scanners")
    subset = predictions[predictions["scanner_id"].isin(scanners)]
    if subset.duplicated(["slide_id", "scanner_id"]).any():
        raise InvariantViolation("a slide has two predictions under the same scanner")
    wide = subset.pivot(index="slide_id", columns="scanner_id", values="label").reindex(columns=scanners).sort_index()
    if wide.isna().any().any():
        slide = wide.index[wide.isna().any(axis=1)][0]
        raise InvariantViolation(f"slide '{slide}' lacks a prediction under every compared scanner")
    matrix = kappa_matrix(wide)
    rows = []
    for a, b in combinations(scanners, 2):
        pair = (wide[[a, b]].to_numpy(dtype=np.int64),)
        estimate = bootstrap_ci(_pair_kappa, pair, n_bootstrap, seed, name=f"kappa/{a}/{b}", n_jobs=n_jobs)
        rows.append(
            {
                "scanner_a": a,
                "scanner_b": b,
                "kappa": estimate.value,
                "ci_low": estimate.ci_low,
                "ci_high": estimate.ci_high,
                "n_slides": len(wide),
            }
        )
    means = pd.Series(
        {s: float(np.mean([matrix.loc[s, o] for o in scanners if o != s])) for s in scanners}, name="mean_kappa"
    )
    logger.info(f"Cross-scanner agreement on {len(wide)} slides and {len(scanners)} scanners.")
    return CrossScannerResult(matrix=matrix, pairs=pd.DataFrame(rows), means=means, n_slides=len(wide))
