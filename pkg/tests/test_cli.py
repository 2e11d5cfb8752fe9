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

import os

import pytest
import yaml
from click.testing import CliRunner

from cribriform_mil.cli import SUCCESS_MARKER, main
from cribriform_mil.config import config_hash, load_config
from cribriform_mil.core import load_manifest
from cribriform_mil.utils import read_csv

SMALL_CORPUS = [
    "--set", "n_slides=3",
    "--set", "n_internal=2",
    "--set", "slide_size=512",
    "--set", "n_raters=2",
    "--set", "scanners=scanner-a,scanner-b",
    "--set", "multi_scan_rate=1.0",
]  # fmt: skip


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def synth_dir(runner, tmp_path):
    result = runner.invoke(main, ["synth", "-o", str(tmp_path), "--seed", "3", *SMALL_CORPUS])
    assert result.exit_code == 0, result.output
    return tmp_path


def test_help_lists_every_stage(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for stage in ("synth", "register", "tile", "train", "infer", "eval"):
        assert stage in result.output


def test_synth_writes_corpus_and_provenance(synth_dir):
    out = os.path.join(synth_dir, "synth")
    manifest = load_manifest(os.path.join(out, "manifest.csv"))
    assert len(manifest) == 5
    for slide in manifest.slides:
        assert len(slide.scans) == 2, "every slide is rescanned"
        for scan in slide.scans:
            assert os.path.isfile(os.path.join(out, scan.image_path))

    raters = read_csv(os.path.join(out, "raters.csv"))
    assert set(raters["rater_id"]) == {"pathologist-1", "pathologist-2"}
    assert raters["slide_id"].nunique() == 2, "only validation slides are rated"

    with open(os.path.join(out, SUCCESS_MARKER), encoding="utf-8") as f:
        marker = yaml.safe_load(f)
    saved = load_config(os.path.join(out, "config.yaml"))
    assert marker["stage"] == "synth" and marker["seed"] == 3
    assert marker["config_hash"] == config_hash(saved)


def test_register_after_synth(runner, synth_dir):
    result = runner.invoke(main, ["register", "-o", str(synth_dir), "--seed", "3", *SMALL_CORPUS])
    assert result.exit_code == 0, result.output

    manifest = load_manifest(os.path.join(synth_dir, "synth", "manifest.csv"))
    rescans = {scan.scan_id for slide in manifest.slides for scan in slide.scans if not scan.is_primary}
    shifts = read_csv(os.path.join(synth_dir, "register", "shifts.csv"))
    assert set(shifts["target_scan"]) == rescans
    assert set(shifts["low_confidence"]) <= {0, 1}
    assert os.path.isfile(os.path.join(synth_dir, "register", SUCCESS_MARKER))


@pytest.mark.parametrize("stage", ["register", "tile", "train", "infer", "eval"])
def test_missing_upstream_exits_2(runner, tmp_path, stage):
    result = runner.invoke(main, [stage, "-o", str(tmp_path)])
    assert result.exit_code == 2
    assert not os.path.exists(os.path.join(tmp_path, stage, SUCCESS_MARKER))


@pytest.mark.parametrize(
    "arguments",
    [
        ["--set", "no_such_key=1"],
        ["--set", "folds=1"],
        ["--set", "folds"],
        ["--set", "scanners=scanner-z"],
        ["-c", "does-not-exist.yaml"],
    ],
)
def test_bad_configuration_exits_1(runner, tmp_path, arguments):
    result = runner.invoke(main, ["synth", "-o", str(tmp_path), *arguments])
    assert result.exit_code == 1
    assert not os.path.exists(os.path.join(tmp_path, "synth", SUCCESS_MARKER))


def test_config_file_is_read(runner, tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text("n_slides: 2\nn_internal: 0\nslide_size: 512\nscanners: [scanner-a]\nseed: 9\n")
    result = runner.invoke(main, ["synth", "-c", str(config), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    manifest = load_manifest(os.path.join(tmp_path, "out", "synth", "manifest.csv"))
    assert len(manifest) == 2
    assert load_config(os.path.join(tmp_path, "out", "synth", "config.yaml")).seed == 9
