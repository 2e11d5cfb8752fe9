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
"""Run configuration: library defaults, YAML files and command-line overrides in one `yacs` node."""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import os

import yaml
from yacs.config import CfgNode

from cribriform_mil import __version__
from cribriform_mil.core import ConfigError
from cribriform_mil.tiling import PipelineConfig
from cribriform_mil.training import TrainRunConfig

logger = logging.getLogger(__name__)

# keys that never change an artifact
UNHASHED_KEYS = ("jobs", "out_dir")
THRESHOLD_TARGETS = ("calibrated", "raw")
POSITIVE_KEYS = ("n_slides", "slide_size", "registration_downsample", "n_views", "n_bootstrap", "calibration_bins", "jobs")


def get_default_config() -> CfgNode:
    """Defaults of every key a run configuration may set."""
    cfg = CfgNode()
    # synthesis
    cfg.n_slides = 200
    cfg.n_internal = 60
    cfg.n_external = 0
    cfg.positive_rate = 0.24
    cfg.borderline_rate = 0.3
    cfg.borderline_difficulty = 4
    cfg.slide_size = 1536
    cfg.multi_scan_rate = 0.25
    cfg.validation_multi_scan_rate = 1.0
    cfg.max_shift = 32
    cfg.scanners = ["scanner-a", "scanner-b", "scanner-c", "scanner-d"]
    cfg.external_cohort = "ext"
    cfg.unannotated_cohorts = []
    cfg.n_raters = 9
    # tiling
    for field in dataclasses.fields(PipelineConfig):
        cfg[field.name] = field.default
    # registration
    cfg.registration_downsample = 4
    cfg.refine_radius = 4
    # training
    for field in dataclasses.fields(TrainRunConfig):
        if field.name != "seed":
            cfg[field.name] = field.default
    # inference
    cfg.n_views = 5
    cfg.calibrate = True
    cfg.threshold_on = "calibrated"
    # evaluation
    cfg.n_bootstrap = 1000
    cfg.calibration_bins = 10
    # global
    cfg.seed = 0
    cfg.jobs = 1
    cfg.out_dir = "out"
    return cfg


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{key}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"'{key}' must be a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"'{key}' must be a number, got {value!r}") from None
    if isinstance(default, (list, tuple)):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if value is None:
            value = []
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{key}' must be a list, got {value!r}")
        return type(default)(str(v) for v in value)
    if not isinstance(value, str):
        raise ConfigError(f"'{key}' must be a string, got {value!r}")
    return value


def merge_values(cfg: CfgNode, values: dict, source: str) -> CfgNode:
    """Merge `values` into `cfg`, rejecting unknown keys and values of the wrong type."""
    for key, value in values.items():
        if key not in cfg:
            raise ConfigError(f"{source}: unknown key '{key}'")
        try:
            cfg[key] = _coerce(key, value, cfg[key])
        except ConfigError as e:
            raise ConfigError(f"{source}: {e}") from None
    return cfg


def parse_overrides(overrides: list[str] | tuple[str, ...]) -> dict:
    """Turn `key=value` strings into a mapping, values parsed as YAML scalars."""
    values = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override '{item}' is not of the form key=value")
        values[key.strip()] = yaml.safe_load(raw) if raw.strip() else ""
    return values


def validate_config(cfg: CfgNode):
    """Cross-field checks; the dataclass configs validate their own fields."""
    pipeline_config(cfg)
    train_config(cfg)
    for key in POSITIVE_KEYS:
        if cfg[key] < 1:
            raise ConfigError(f"'{key}' must be at least 1, got {cfg[key]}")
    for key in ("n_internal", "n_external", "max_shift", "refine_radius"):
        if cfg[key] < 0:
            raise ConfigError(f"'{key}' must be nonnegative, got {cfg[key]}")
    for key in ("positive_rate", "borderline_rate", "multi_scan_rate", "validation_multi_scan_rate"):
        if not 0.0 <= cfg[key] <= 1.0:
            raise ConfigError(f"'{key}' must lie in [0, 1], got {cfg[key]}")
    if cfg.n_raters < 2:
        raise ConfigError(f"'n_raters' must be at least 2, got {cfg.n_raters}")
    if cfg.threshold_on not in THRESHOLD_TARGETS:
        raise ConfigError(f"'threshold_on' must be one of {THRESHOLD_TARGETS}, got '{cfg.threshold_on}'")
    if not cfg.scanners:
        raise ConfigError("'scanners' must name at least one scanner")


def load_config(path: str | None = None, overrides: dict | None = None) -> CfgNode:
    """Library defaults, then the YAML file at `path`, then `overrides`; the result is frozen.

    Raises:
        ConfigError: On a missing or unparsable file, an unknown key or a value of the wrong type.
    """
    cfg = get_default_config()
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as f:
                values = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from None
        if values is None:
            values = {}
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping of keys to values")
        merge_values(cfg, values, path)
    merge_values(cfg, overrides or {}, "override")
    validate_config(cfg)
    cfg.freeze()
    logger.debug(f"Configuration loaded (hash {config_hash(cfg)[:12]}).")
    return cfg


def canonical_dump(cfg: CfgNode) -> str:
    values = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items() if k not in UNHASHED_KEYS}
    return yaml.safe_dump(values, sort_keys=True, default_flow_style=False)


def config_hash(cfg: CfgNode) -> str:
    """SHA-256 of the canonical dump, independent of worker count and output location."""
    return hashlib.sha256(canonical_dump(cfg).encode("utf-8")).hexdigest()


def provenance(cfg: CfgNode, stage: str) -> dict:
    return {"config_hash": config_hash(cfg), "seed": int(cfg.seed), "stage": stage, "tool_version": __version__}


def save_config(cfg: CfgNode, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_dump(cfg))


def _fields_of(cls, cfg: CfgNode) -> dict:
    return {f.name: cfg[f.name] for f in dataclasses.fields(cls) if f.name in cfg}


def pipeline_config(cfg: CfgNode) -> PipelineConfig:
    return PipelineConfig(**_fields_of(PipelineConfig, cfg))


def train_config(cfg: CfgNode) -> TrainRunConfig:
    values = _fields_of(TrainRunConfig, cfg)
    values["augmentations"] = tuple(values["augmentations"])
    return TrainRunConfig(**values)
