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
"""This script runs a complete study (synthesis to evaluation) and its inference ablations."""
from __future__ import annotations

import json
import logging
import os
import sys

import click
import pandas as pd

from cribriform_mil.cli import STAGES, main as cli_main
from cribriform_mil.config import load_config
from cribriform_mil.utils import create_path, set_seed, write_csv

logging.basicConfig(level=logging.INFO, handlers=[logging.StreamHandler(sys.stderr)])
logger = logging.getLogger(__name__)

# inference variants re-using the trained ensemble
ABLATIONS = {
    "no_tta": ["--set", "n_views=1"],
    "no_calibration": ["--set", "calibrate=false"],
    "raw_threshold": ["--set", "threshold_on=raw"],
}
UPSTREAM_STAGES = ("synth", "register", "tile", "train")


def run_stage(stage: str, config_file: str, out_dir: str, extra: list[str] | None = None):
    arguments = [stage, "-c", config_file, "-o", out_dir, *(extra or [])]
    logger.info(f"cribriform-mil {' '.join(arguments)}")
    try:
        cli_main.main(arguments, standalone_mode=False)
    except SystemExit as e:
        if e.code:
            raise click.ClickException(f"stage '{stage}' failed with exit code {e.code}") from None


def seed_study(config_file: str | None) -> int:
    """Seed the global generators with the study's root seed and return it."""
    seed = load_config(config_file).seed
    set_seed(seed)
    return seed


def load_report(out_dir: str) -> dict:
    with open(os.path.join(out_dir, "eval", "report.json"), encoding="utf-8") as f:
        return json.load(f)


def link_upstream(study_dir: str, variant_dir: str):
    create_path(variant_dir)
    for stage in UPSTREAM_STAGES:
        link = os.path.join(variant_dir, stage)
        if not os.path.lexists(link):
            os.symlink(os.path.abspath(os.path.join(study_dir, stage)), link)


def summary_row(variant: str, report: dict) -> dict:
    row = {"variant": variant}
    for name in ("auc", "kappa", "sensitivity", "specificity"):
        entry = report[name]
        row[name] = entry["value"]
        row[f"{name}_ci_low"] = entry["ci_low"]
        row[f"{name}_ci_high"] = entry["ci_high"]
    return row


@click.command()
@click.option("-c", "--config_file", type=click.Path(exists=True))
@click.option("-o", "--output_path", type=click.Path())
@click.option("--ablations/--no-ablations", default=True, help="Also evaluate the inference variants.")
@click.option("--rerun/--no-rerun", default=False, help="Repeat inference and evaluation and compare the reports.")
def main(config_file: str, output_path: str, ablations: bool, rerun: bool):
    seed = seed_study(config_file)
    logger.info(f"Study seed {seed}.")

    # 1. the full pipeline
    for stage in STAGES:
        run_stage(stage, config_file, output_path)
    report = load_report(output_path)
    rows = [summary_row("full", report)]

    # 2. inference ablations on the same ensemble
    if ablations:
        for variant, extra in ABLATIONS.items():
            variant_dir = os.path.join(output_path, "ablation", variant)
            link_upstream(output_path, variant_dir)
            run_stage("infer", config_file, variant_dir, extra)
            run_stage("eval", config_file, variant_dir, extra)
            rows.append(summary_row(variant, load_report(variant_dir)))
    summary = pd.DataFrame(rows)
    write_csv(summary, os.path.join(output_path, "study_summary.csv"))
    logger.info(f"Study summary:\n{summary.to_string(index=False)}")

    # 3. determinism check
    if rerun:
        rerun_dir = os.path.join(output_path, "rerun")
        link_upstream(output_path, rerun_dir)
        run_stage("infer", config_file, rerun_dir)
        run_stage("eval", config_file, rerun_dir)
        rerun_report = load_report(rerun_dir)
        if rerun_report != report:
            raise click.ClickException("re-running inference and evaluation changed the report")
        logger.info("Re-run reproduced the report exactly.")


if __name__ == "__main__":
    main()
