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
import os
import warnings
from functools import partial

import numpy as np
import pandas as pd

from cribriform_mil.core import DatasetManifest, DegenerateMetricError, InvariantViolation, select_primary_scans
from cribriform_mil.utils import create_path, write_csv, write_json

from .agreement import RaterPanel, cross_scanner_agreement, pairwise_kappa_matrix, rank_raters
from .bootstrap import N_BOOTSTRAP, MetricEstimate, bootstrap_ci
from .borderline import borderline_analysis
from .metrics import (
    OPERATING_POINT,
    calibration_curve,
    cohens_kappa,
    confusion,
    roc_auc,
    roc_points,
    sensitivity,
    specificity,
)

logger = logging.getLogger(__name__)

MODEL_RATER = "model"
HEADLINE_METRICS = ("auc", "kappa", "sensitivity", "specificity")


def _silenced(metric, *arrays):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return metric(*arrays)


def _auc(scores, calls, labels):
    return roc_auc(scores, labels)


def _kappa(scores, calls, labels):
    return cohens_kappa(calls, labels)


def _sensitivity(scores, calls, labels):
    return sensitivity(calls, labels)


def _specificity(scores, calls, labels):
    return specificity(calls, labels)


_METRICS = {"auc": _auc, "kappa": _kappa, "sensitivity": _sensitivity, "specificity": _specificity}


def undefined_estimate(n_bootstrap: int, seed: int) -> dict:
    entry = {"value": None, "ci_low": None, "ci_high": None}
    return {**entry, "n_bootstrap": n_bootstrap, "seed": seed, "undefined": True}


def headline_metrics(
    scores, calls, labels, prefix: str = "", n_bootstrap: int = N_BOOTSTRAP, seed: int = 0, n_jobs: int = 1
) -> dict[str, dict]:
    """AUC, kappa, sensitivity and specificity with slide-level bootstrap CIs, keyed `<prefix><metric>`.

    A metric undefined on the observed sample (for example AUC of a single-class subset) is reported with
    null values and `undefined: true` rather than as zero.
    """
    data = (
        np.asarray(scores, dtype=np.float64),
        np.asarray(calls, dtype=np.int64),
        np.asarray(labels, dtype=np.int64),
    )
    report = {}
    for metric_name in HEADLINE_METRICS:
        name = f"{prefix}{metric_name}"
        try:
            estimate = bootstrap_ci(
                partial(_silenced, _METRICS[metric_name]), data, n_bootstrap, seed, name=name, n_jobs=n_jobs
            )
            report[name] = estimate.to_dict()
        except DegenerateMetricError as e:
            warnings.warn(f"{name} is not reported: {e}")
            report[name] = undefined_estimate(n_bootstrap, seed)
    return report


class CribriformEvaluator:
    """Statistical validation of slide-level predictions against a dataset manifest.

    Headline metrics use the primary scan of each slide only and are computed on the pooled evaluation set,
    per role and per cohort. Non-primary scans enter the cross-scanner analysis. When a rater panel is
    given, the model's primary-scan calls join it as one more rater and the inter-rater analysis is run on
    the slides both cover.

    Args:
        manifest (DatasetManifest): The dataset the predictions refer to.
        raters (pd.DataFrame, optional): Long-format calls `slide_id, rater_id, call`.
        reference_rater (str, optional): The rater whose calls are the reference standard.
        n_bootstrap (int): Bootstrap resamples per interval. Defaults to `1000`.
        seed (int): Root seed of every bootstrap.
        calibration_bins (int): Equal-width bins of the calibration curve. Defaults to `10`.
        operating_point (float): Threshold the calls were made at, recorded in the report. Defaults to `0.5`.
        n_jobs (int): Bootstrap workers.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        raters: pd.DataFrame | None = None,
        reference_rater: str | None = None,
        n_bootstrap: int = N_BOOTSTRAP,
        seed: int = 0,
        calibration_bins: int = 10,
        operating_point: float = OPERATING_POINT,
        n_jobs: int = 1,
    ):
        self.primary_metric = "auc"
        self.manifest = manifest
        self.raters = raters
        self.reference_rater = reference_rater
        self.n_bootstrap = n_bootstrap
        self.seed = seed
        self.calibration_bins = calibration_bins
        self.operating_point = operating_point
        self.n_jobs = n_jobs
        # tables written next to the report
        self.tables: dict[str, pd.DataFrame] = {}

    def annotate(self, predictions: pd.DataFrame) -> pd.DataFrame:
        """Join predictions with the manifest (reference label, role, cohort, borderline flag, scanner)."""
        rows = []
        for slide in self.manifest.slides:
            for scan in slide.scans:
                rows.append(
                    {
                        "slide_id": slide.slide_id,
                        "scan_id": scan.scan_id,
                        "scanner_id": scan.scanner_id,
                        "is_primary": scan.is_primary,
                        "reference": slide.label,
                        "borderline": int(slide.borderline),
                        "role": self.manifest.role_of(slide.slide_id).value,
                        "cohort_id": slide.cohort_id,
                    }
                )
        scans = pd.DataFrame(rows)
        merged = predictions.merge(scans, on=["slide_id", "scan_id"], how="left", validate="one_to_one")
        if merged["reference"].isna().any():
            row = merged[merged["reference"].isna()].iloc[0]
            raise InvariantViolation(
                f"prediction for scan '{row.scan_id}' of slide '{row.slide_id}' is not in the manifest"
            )
        merged["reference"] = merged["reference"].astype(np.int64)
        merged["is_primary"] = merged["is_primary"].astype(bool)
        return merged.sort_values(["slide_id", "scan_id"], kind="mergesort").reset_index(drop=True)

    def primary(self, annotated: pd.DataFrame) -> pd.DataFrame:
        primary_scans = set(select_primary_scans(self.manifest))
        keep = [(s, c) in primary_scans for s, c in zip(annotated["slide_id"], annotated["scan_id"])]
        return annotated[keep].reset_index(drop=True)

    def _headline(self, frame: pd.DataFrame, prefix: str) -> dict[str, dict]:
        return headline_metrics(
            frame["calibrated_score"],
            frame["label"],
            frame["reference"],
            prefix=prefix,
            n_bootstrap=self.n_bootstrap,
            seed=self.seed,
            n_jobs=self.n_jobs,
        )

    def discrimination(self, primary: pd.DataFrame) -> dict:
        report = self._headline(primary, "")
        for role, group in primary.groupby("role", sort=True):
            report.update(self._headline(group, f"{role}/"))
        for cohort, group in primary.groupby("cohort_id", sort=True):
            report.update(self._headline(group, f"cohort/{cohort}/"))

        cm = confusion(primary["label"], primary["reference"])
        report["confusion"] = {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn}
        self.tables["confusion"] = cm.to_frame()
        try:
            self.tables["roc_points"] = roc_points(primary["calibrated_score"], primary["reference"])
        except DegenerateMetricError as e:
            warnings.warn(f"ROC points are not written: {e}")
        self.tables["calibration"] = calibration_curve(
            primary["calibrated_score"], primary["reference"], bins=self.calibration_bins
        )
        return report

    def inter_rater(self, primary: pd.DataFrame) -> dict:
        """Pairwise kappa between pathologists and the model; the model is never a comparator."""
        if self.raters is None:
            return {}
        raters = self.raters[self.raters["slide_id"].isin(set(primary["slide_id"]))]
        if raters.empty:
            warnings.warn("No rater calls overlap the predicted slides; inter-rater analysis skipped.")
            return {}
        panel = RaterPanel.from_long(raters, reference=self.reference_rater or sorted(raters["rater_id"])[0])
        calls = primary.set_index("slide_id")["label"].reindex(panel.calls.index)
        panel = panel.with_model(MODEL_RATER, calls)
        self.tables["rater_kappa_matrix"] = pairwise_kappa_matrix(panel).rename_axis("rater_id").reset_index()
        ranking = rank_raters(panel, self.n_bootstrap, self.seed, self.n_jobs)
        self.tables["rater_ranking"] = ranking
        report = {}
        for row in ranking.itertuples(index=False):
            report[f"inter_rater/{row.rater_id}/mean_kappa"] = {
                "value": row.mean_kappa,
                "ci_low": row.ci_low,
                "ci_high": row.ci_high,
                "n_bootstrap": self.n_bootstrap,
                "seed": self.seed,
                "rank": int(row.rank),
            }
        logger.info(f"Inter-rater analysis on {len(panel.calls)} slides and {len(panel.raters)} raters.")
        return report

    def cross_scanner(self, annotated: pd.DataFrame) -> dict:
        """Agreement of the model's calls across scanners on slides scanned by every scanner."""
        scanners = sorted(annotated["scanner_id"].unique())
        if len(scanners) < 2:
            return {}
        coverage = annotated.groupby("slide_id")["scanner_id"].nunique()
        shared = coverage.index[coverage == len(scanners)]
        if len(shared) == 0:
            warnings.warn("No slide has predictions under every scanner; cross-scanner analysis skipped.")
            return {}
        result = cross_scanner_agreement(
            annotated[annotated["slide_id"].isin(set(shared))],
            scanners=scanners,
            n_bootstrap=self.n_bootstrap,
            seed=self.seed,
            n_jobs=self.n_jobs,
        )
        self.tables["scanner_kappa_matrix"] = result.matrix.rename_axis("scanner_id").reset_index()
        self.tables["scanner_pairs"] = result.pairs
        report = {}
        for row in result.pairs.itertuples(index=False):
            report[f"cross_scanner/{row.scanner_a}/{row.scanner_b}/kappa"] = {
                "value": row.kappa,
                "ci_low": row.ci_low,
                "ci_high": row.ci_high,
                "n_bootstrap": self.n_bootstrap,
                "seed": self.seed,
            }
        for scanner, mean in result.means.items():
            report[f"cross_scanner/{scanner}/mean_kappa"] = {"value": float(mean)}
        return report

    def borderline(self, primary: pd.DataFrame) -> dict:
        result = borderline_analysis(primary["label"], primary["reference"], primary["borderline"])
        self.tables["borderline"] = pd.DataFrame(
            result.table, index=["false_positive", "true_negative"], columns=["borderline", "other"]
        ).rename_axis("group").reset_index()
        return {"borderline": result.to_dict()}

    def __call__(
        self, predictions: pd.DataFrame, output_path: str | None = None, provenance: dict | None = None
    ) -> dict:
        """Evaluate `predictions` (`slide_id, scan_id, raw_score, calibrated_score, label`).

        Args:
            predictions (pd.DataFrame): Ensemble predictions of every scan of the evaluation slides.
            output_path (str, optional): Directory for `report.json` and the CSV tables. Defaults to `None`.
            provenance (dict, optional): Run provenance embedded in every artifact.

        Returns:
            dict: The report, metric name to estimate.
        """
        self.tables = {}
        annotated = self.annotate(predictions)
        primary = self.primary(annotated)
        if primary.empty:
            raise InvariantViolation("no prediction refers to a primary scan")
        logger.info(f"Evaluate {len(primary)} slides ({len(annotated)} scans).")

        report = {
            "n_slides": len(primary),
            "n_scans": len(annotated),
            "operating_point": self.operating_point,
            "bootstrap": {"method": "percentile", "unit": "slide", "n_bootstrap": self.n_bootstrap, "seed": self.seed},
        }
        report.update(self.discrimination(primary))
        report.update(self.inter_rater(primary))
        report.update(self.cross_scanner(annotated))
        report.update(self.borderline(primary))
        if provenance is not None:
            report["_provenance"] = dict(provenance)

        if output_path is not None:
            create_path(output_path)
            write_json(report, os.path.join(output_path, "report.json"))
            for name, table in self.tables.items():
                write_csv(table, os.path.join(output_path, f"{name}.csv"), provenance)
            logger.info(f"Report and {len(self.tables)} tables written to {output_path}.")
        return report


def estimate_from_report(report: dict, name: str) -> MetricEstimate | None:
    """Rebuild a `MetricEstimate` from a report entry; `None` for undefined entries."""
    entry = report[name]
    if entry.get("value") is None or any(entry.get(k) is None for k in ("ci_low", "ci_high")):
        return None
    return MetricEstimate(
        name=name,
        value=float(entry["value"]),
        ci_low=float(entry["ci_low"]),
        ci_high=float(entry["ci_high"]),
        n_bootstrap=int(entry.get("n_bootstrap", N_BOOTSTRAP)),
        seed=int(entry.get("seed", 0)),
        n_redrawn=int(entry.get("n_redrawn", 0)),
    )
