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
import os

import pytest
from click.testing import CliRunner

from cribriform_mil.cli import STAGES, SUCCESS_MARKER, main
from cribriform_mil.core import Role, load_manifest
from cribriform_mil.utils import read_csv

TINY_STUDY = {
    "n_slides": 12,
    "n_internal": 6,
    "positive_rate": 0.5,
    "slide_size": 512,
    "scanners": "scanner-a,scanner-b",
    "multi_scan_rate": 0.5,
    "n_raters": 3,
    "patch_size": 128,
    "stride": 64,
    "folds": 2,
    "patch_epochs": 1,
    "slide_epochs": 2,
    "patch_batch": 32,
    "augment_views": 0,
    "n_views": 2,
    "n_bootstrap": 50,
}


def _arguments(out_dir: str, seed: int) -> list[str]:
    arguments = ["-o", out_dir, "--seed", str(seed)]
    for key, value in TINY_STUDY.items():
        arguments += ["--set", f"{key}={value}"]
    return arguments


@pytest.fixture(scope="module")
def study_dir(tmp_path_factory, test_seed):
    out_dir = str(tmp_path_factory.mktemp("study"))
    runner = CliRunner()
    for stage in STAGES:
        result = runner.invoke(main, [stage, *_arguments(out_dir, test_seed)])
        assert result.exit_code == 0, f"{stage} failed: {result.output}"
    return out_dir


@pytest.mark.slow
def test_every_stage_completes(study_dir):
    for stage in STAGES:
        assert os.path.isfile(os.path.join(study_dir, stage, SUCCESS_MARKER)), f"{stage} did not finish"
    for fold in range(TINY_STUDY["folds"]):
        assert os.path.isfile(os.path.join(study_dir, "train", f"fold_{fold}.milw"))


@pytest.mark.slow
def test_predictions_cover_validation_scans(study_dir):
    manifest = load_manifest(os.path.join(study_dir, "synth", "manifest.csv"))
    expected = {
        scan.scan_id for slide in manifest.slides_by_role(Role.INTERNAL_VALIDATION) for scan in slide.scans
    }
    predictions = read_csv(os.path.join(study_dir, "infer", "predictions.csv"))
    assert set(predictions["scan_id"]) <= expected
    assert predictions["calibrated_score"].between(0, 1).all()
    assert set(predictions["label"]) <= {0, 1}


@pytest.mark.slow
def test_report_is_complete_and_reproducible(study_dir, test_seed):
    with open(os.path.join(study_dir, "eval", "report.json"), encoding="utf-8") as f:
        report = json.load(f)
    for name in ("auc", "kappa", "sensitivity", "specificity", "borderline", "confusion"):
        assert name in report, f"{name} is missing from the report"
    assert report["n_slides"] <= TINY_STUDY["n_internal"]
    assert report["_provenance"]["stage"] == "eval"

    result = CliRunner().invoke(main, ["eval", *_arguments(study_dir, test_seed)])
    assert result.exit_code == 0, result.output
    with open(os.path.join(study_dir, "eval", "report.json"), encoding="utf-8") as f:
        assert json.load(f) == report, "re-running evaluation changed the report"
