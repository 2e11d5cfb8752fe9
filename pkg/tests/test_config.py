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

import pytest
import yaml

from cribriform_mil.config import (
    config_hash,
    get_default_config,
    load_config,
    merge_values,
    parse_overrides,
    pipeline_config,
    provenance,
    save_config,
    train_config,
)
from cribriform_mil.core import ConfigError
from cribriform_mil.tiling import PipelineConfig
from cribriform_mil.training import TrainRunConfig


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("n_slides: 40\nfolds: 4\nscanners: [scanner-a, scanner-b]\npositive_rate: 0.5\n")
    return str(path)


def test_defaults_mirror_the_dataclasses():
    cfg = load_config()
    assert pipeline_config(cfg) == PipelineConfig()
    assert train_config(cfg) == TrainRunConfig()
    assert cfg.threshold_on == "calibrated"
    assert cfg.is_frozen()


def test_file_then_overrides(config_file):
    cfg = load_config(config_file, {"folds": 3, "seed": 11})
    assert cfg.n_slides == 40
    assert cfg.folds == 3, "overrides win over the file"
    assert cfg.seed == 11
    assert list(cfg.scanners) == ["scanner-a", "scanner-b"]
    assert train_config(cfg).folds == 3
    assert train_config(cfg).seed == 11


def test_parse_overrides():
    values = parse_overrides(["folds=3", "calibrate=false", "positive_rate=0.3", "scanners=a,b", "out_dir="])
    assert values == {"folds": 3, "calibrate": False, "positive_rate": 0.3, "scanners": "a,b", "out_dir": ""}
    cfg = merge_values(get_default_config(), values, "override")
    assert list(cfg.scanners) == ["a", "b"]
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["folds"])
    with pytest.raises(ConfigError):
        parse_overrides(["=3"])


def test_value_coercion():
    cfg = merge_values(get_default_config(), {"folds": 4.0, "positive_rate": 1, "augmentations": []}, "test")
    assert cfg.folds == 4 and isinstance(cfg.folds, int)
    assert cfg.positive_rate == 1.0 and isinstance(cfg.positive_rate, float)
    assert cfg.augmentations == ()


@pytest.mark.parametrize(
    "values, match",
    [
        ({"no_such_key": 1}, "unknown key"),
        ({"folds": "ten"}, "integer"),
        ({"folds": True}, "integer"),
        ({"calibrate": "yes"}, "true or false"),
        ({"positive_rate": "high"}, "number"),
        ({"threshold_on": 3}, "string"),
        ({"threshold_on": "logit"}, "threshold_on"),
        ({"positive_rate": 1.5}, "positive_rate"),
        ({"n_bootstrap": 0}, "n_bootstrap"),
        ({"folds": 1}, "folds"),
        ({"stride": 100}, "stride"),
        ({"augmentations": ["blur"]}, "blur"),
        ({"scanners": []}, "scanners"),
    ],
)
def test_invalid_values(values, match):
    with pytest.raises(ConfigError, match=match):
        load_config(overrides=values)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.yaml"))
    broken = tmp_path / "broken.yaml"
    broken.write_text("folds: [3\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(str(broken))
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(str(listing))
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert config_hash(load_config(str(empty))) == config_hash(load_config())


def test_config_hash():
    base = config_hash(load_config())
    assert len(base) == 64
    assert config_hash(load_config(overrides={"jobs": 8, "out_dir": "elsewhere"})) == base
    assert config_hash(load_config(overrides={"seed": 1})) != base
    assert config_hash(load_config(overrides={"n_views": 3})) != base


def test_save_config_round_trip(tmp_path, config_file):
    cfg = load_config(config_file, {"jobs": 4})
    path = str(tmp_path / "saved.yaml")
    save_config(cfg, path)
    with open(path, encoding="utf-8") as f:
        saved = yaml.safe_load(f)
    assert "jobs" not in saved and "out_dir" not in saved
    assert config_hash(load_config(path)) == config_hash(cfg)


def test_provenance():
    cfg = load_config(overrides={"seed": 5})
    meta = provenance(cfg, "train")
    assert meta["stage"] == "train"
    assert meta["seed"] == 5
    assert meta["config_hash"] == config_hash(cfg)
    assert set(meta) == {"config_hash", "seed", "stage", "tool_version"}
