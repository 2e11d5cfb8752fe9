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
"""Command-line entry point: `cribriform-mil <stage>` for the six pipeline stages."""
from __future__ import annotations

import functools
import logging
import os
import sys

import click
import numpy as np
import pandas as pd
import torch
import yaml
from joblib import Parallel, delayed
from PIL import Image

from cribriform_mil.config import load_config, parse_overrides, pipeline_config, provenance, save_config, train_config
from cribriform_mil.core import (
    ConfigError,
    CribriformError,
    InvariantViolation,
    MissingInputError,
    Role,
    ScanRecord,
    SlideRecord,
    load_manifest,
)
from cribriform_mil.evaluation import CribriformEvaluator
from cribriform_mil.inference import load_ensemble, predict_manifest, predictions_frame, views_frame
from cribriform_mil.models.descriptor import patch_descriptor
from cribriform_mil.registration import register_scans, transfer_annotations
from cribriform_mil.synthgen import (
    REFERENCE_RATER,
    generate_cohort,
    get_scanner_profiles,
    merge_cohorts,
    simulate_rater_panel,
    write_cohort,
)
from cribriform_mil.tiling import PipelineConfig, ScanArtifacts, resample_to_spacing, tile_to_disk, tissue_mask
from cribriform_mil.training import CalibrationParams, cross_validate, load_slide_bags
from cribriform_mil.utils import create_path, read_csv, write_csv

logger = logging.getLogger(__name__)

STAGES = ("synth", "register", "tile", "train", "infer", "eval")
UPSTREAM = {
    "synth": (),
    "register": ("synth",),
    "tile": ("synth", "register"),
    "train": ("synth", "tile"),
    "infer": ("synth", "tile", "train"),
    "eval": ("synth", "infer"),
}
SUCCESS_MARKER = "_SUCCESS"
EVALUATION_ROLES = (Role.INTERNAL_VALIDATION, Role.EXTERNAL_VALIDATION)
SHIFT_COLUMNS = ["slide_id", "source_scan", "target_scan", "dx", "dy", "peak_response", "peak_ratio", "low_confidence"]
TILE_SUMMARY_COLUMNS = ["slide_id", "scan_id", "n_patches", "n_positive", "n_unknown", "n_set_a", "n_set_b"]


def stage_dir(cfg, stage: str) -> str:
    return os.path.join(cfg.out_dir, stage)


def require_upstream(cfg, stage: str):
    """Fail fast (exit 2) when an upstream stage has not completed."""
    for upstream in UPSTREAM[stage]:
        marker = os.path.join(stage_dir(cfg, upstream), SUCCESS_MARKER)
        if not os.path.isfile(marker):
            raise MissingInputError(f"stage '{stage}' needs the output of '{upstream}': {marker} not found")


def begin_stage(cfg, stage: str) -> str:
    require_upstream(cfg, stage)
    out = create_path(stage_dir(cfg, stage))
    marker = os.path.join(out, SUCCESS_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    save_config(cfg, os.path.join(out, "config.yaml"))
    logger.info(f"Stage '{stage}' writing to {out}.")
    return out


def finish_stage(cfg, stage: str, out: str):
    with open(os.path.join(out, SUCCESS_MARKER), "w", encoding="utf-8") as f:
        yaml.safe_dump(provenance(cfg, stage), f, sort_keys=True)
    logger.info(f"Stage '{stage}' done.")


def run_options(func):
    """Options shared by every stage."""
    options = [
        click.option("-c", "--config", "config_file", type=click.Path(dir_okay=False), default=None),
        click.option("-o", "--out-dir", type=str, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--jobs", type=int, default=None),
        click.option("--set", "overrides", multiple=True, help="Override any config key, `key=value`."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def stage_command(stage: str):
    """Load the configuration from the shared options and map library errors to exit codes."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(config_file, out_dir, seed, jobs, overrides, **stage_options):
            try:
                values = parse_overrides(overrides)
                for key, value in (("out_dir", out_dir), ("seed", seed), ("jobs", jobs)):
                    if value is not None:
                        values[key] = value
                for key, value in stage_options.pop("config_values", {}).items():
                    if value is not None:
                        values[key] = value
                cfg = load_config(config_file, values)
                torch.set_num_threads(1)
                out = begin_stage(cfg, stage)
                func(cfg, out, **stage_options)
                finish_stage(cfg, stage, out)
            except CribriformError as e:
                logger.error(f"{stage}: {e}")
                sys.exit(e.exit_code)

        return wrapper

    return decorator


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool):
    """Cribriform detection with two-step multiple instance learning on a synthetic slide corpus."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO, handlers=[logging.StreamHandler(sys.stderr)], force=True
    )


# synth


@main.command()
@run_options
@stage_command("synth")
def synth(cfg, out):
    """Generate the synthetic corpus, its manifest and a simulated pathologist panel."""
    try:
        scanners = get_scanner_profiles(list(cfg.scanners))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    common = dict(
        scanners=scanners,
        seed=cfg.seed,
        slide_size=cfg.slide_size,
        max_shift=cfg.max_shift,
        borderline_difficulty=cfg.borderline_difficulty,
    )
    splits = [
        (Role.TRAIN, cfg.n_slides, "synth", cfg.multi_scan_rate),
        (Role.INTERNAL_VALIDATION, cfg.n_internal, "synth", cfg.validation_multi_scan_rate),
        (Role.EXTERNAL_VALIDATION, cfg.n_external, cfg.external_cohort, cfg.validation_multi_scan_rate),
    ]
    cohorts = [
        generate_cohort(
            n_slides,
            cfg.positive_rate,
            cfg.borderline_rate,
            role=role,
            cohort_id=cohort_id,
            multi_scan_rate=multi_scan_rate,
            **common,
        )
        for role, n_slides, cohort_id, multi_scan_rate in splits
        if n_slides > 0
    ]
    cohort = merge_cohorts(*cohorts)
    write_cohort(cohort, out, n_jobs=cfg.jobs)
    raters = simulate_rater_panel(cohort.manifest, n_raters=cfg.n_raters, seed=cfg.seed, roles=EVALUATION_ROLES)
    write_csv(raters, os.path.join(out, "raters.csv"), provenance(cfg, "synth"))


# register


def read_image(path: str, mode: str = "RGB") -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingInputError(f"image not found: {path}")
    with Image.open(path) as image:
        return np.asarray(image.convert(mode))


def _register_slide(slide: SlideRecord, synth_dir: str, downsample: int, refine_radius: int) -> list[dict]:
    primary = slide.primary_scan
    primary_mask = tissue_mask(read_image(os.path.join(synth_dir, primary.image_path)))
    rows = []
    for scan in slide.scans:
        if scan.is_primary:
            continue
        mask = tissue_mask(read_image(os.path.join(synth_dir, scan.image_path)))
        estimate = register_scans(primary_mask, mask, downsample=downsample, refine_radius=refine_radius)
        rows.append(
            {
                "slide_id": slide.slide_id,
                "source_scan": primary.scan_id,
                "target_scan": scan.scan_id,
                "dx": estimate.dx,
                "dy": estimate.dy,
                "peak_response": estimate.peak_response,
                "peak_ratio": estimate.peak_ratio,
                "low_confidence": int(estimate.low_confidence),
            }
        )
    return rows


@main.command()
@run_options
@stage_command("register")
def register(cfg, out):
    """Estimate the shift of every rescan relative to its slide's primary scan."""
    synth_dir = stage_dir(cfg, "synth")
    manifest = load_manifest(os.path.join(synth_dir, "manifest.csv"))
    slides = [s for s in manifest.slides if len(s.scans) > 1]
    results = Parallel(n_jobs=cfg.jobs)(
        delayed(_register_slide)(slide, synth_dir, cfg.registration_downsample, cfg.refine_radius) for slide in slides
    )
    shifts = pd.DataFrame([row for rows in results for row in rows], columns=SHIFT_COLUMNS)
    write_csv(shifts, os.path.join(out, "shifts.csv"), provenance(cfg, "register"))
    offsets_path = os.path.join(synth_dir, "offsets.csv")
    if len(shifts) and os.path.isfile(offsets_path):
        truth = pd.read_csv(offsets_path).set_index("scan_id")
        exact = sum(
            (truth.loc[row.target_scan, "dx"], truth.loc[row.target_scan, "dy"]) == (row.dx, row.dy)
            for row in shifts.itertuples(index=False)
        )
        logger.info(f"{exact} of {len(shifts)} estimated shifts equal the generator offsets.")
    logger.info(f"Registered {len(shifts)} rescans ({int(shifts['low_confidence'].sum())} low confidence).")


# tile


def _tile_scan(
    slide: SlideRecord,
    scan: ScanRecord,
    shift: tuple[int, int] | None,
    annotated: bool,
    synth_dir: str,
    tile_dir: str,
    cfg: PipelineConfig,
) -> dict:
    image = read_image(os.path.join(synth_dir, scan.image_path))
    image = resample_to_spacing(image, scan.pixel_spacing, cfg.target_spacing)
    annotation = None
    if annotated:
        annotation = read_image(os.path.join(synth_dir, "annotations", f"{slide.slide_id}.png"), mode="L")
        if not scan.is_primary:
            annotation = transfer_annotations(annotation, shift)
        annotation = resample_to_spacing(annotation, scan.pixel_spacing, cfg.target_spacing, nearest=True)
    patches = tile_to_disk(
        image, cfg, ScanArtifacts.at(tile_dir, scan.scan_id), annotation=annotation, descriptor_fn=patch_descriptor
    )
    labels = np.array([p.patch_label for p in patches], dtype=np.int64)
    return {
        "slide_id": slide.slide_id,
        "scan_id": scan.scan_id,
        "n_patches": len(patches),
        "n_positive": int((labels == 1).sum()),
        "n_unknown": int((labels < 0).sum()),
        "n_set_a": sum(p.i % 2 == 0 and p.j % 2 == 0 for p in patches),
        "n_set_b": sum(p.i % 2 == 1 and p.j % 2 == 1 for p in patches),
    }


@main.command()
@run_options
@stage_command("tile")
def tile(cfg, out):
    """Tile every scan, label patches from (transferred) annotations and compute descriptors."""
    synth_dir = stage_dir(cfg, "synth")
    manifest = load_manifest(os.path.join(synth_dir, "manifest.csv"))
    shifts = read_csv(os.path.join(stage_dir(cfg, "register"), "shifts.csv"), dtype={"target_scan": str})
    shift_of = {row.target_scan: (int(row.dx), int(row.dy)) for row in shifts.itertuples(index=False)}
    unannotated = set(cfg.unannotated_cohorts)
    pcfg = pipeline_config(cfg)
    tasks = []
    for slide in manifest.slides:
        for scan in slide.scans:
            if not scan.is_primary and scan.scan_id not in shift_of:
                raise InvariantViolation(f"rescan '{scan.scan_id}' has no registered shift")
            tasks.append((slide, scan, shift_of.get(scan.scan_id), slide.cohort_id not in unannotated))
    rows = Parallel(n_jobs=cfg.jobs)(
        delayed(_tile_scan)(slide, scan, shift, annotated, synth_dir, out, pcfg)
        for slide, scan, shift, annotated in tasks
    )
    summary = pd.DataFrame(rows, columns=TILE_SUMMARY_COLUMNS)
    write_csv(summary, os.path.join(out, "tile_summary.csv"), provenance(cfg, "tile"))
    logger.info(f"Tiled {len(summary)} scans into {int(summary['n_patches'].sum())} patches.")


# train


@main.command()
@run_options
@stage_command("train")
def train(cfg, out):
    """Cross-validated two-step training followed by Platt scaling on pooled holdout scores."""
    manifest = load_manifest(os.path.join(stage_dir(cfg, "synth"), "manifest.csv"))
    tcfg = train_config(cfg)
    bags = load_slide_bags(
        manifest.slides_by_role(Role.TRAIN),
        stage_dir(cfg, "tile"),
        n_augmented_views=tcfg.augment_views,
        seed=tcfg.seed,
        augmentations=tcfg.augmentations,
        n_jobs=cfg.jobs,
    )
    result = cross_validate(bags, manifest, tcfg, n_jobs=cfg.jobs)
    for checkpoint in result.checkpoints:
        checkpoint.save(os.path.join(out, f"fold_{checkpoint.fold}.milw"))
    meta = provenance(cfg, "train")
    platt = result.calibration
    platt.save(os.path.join(out, "platt.json"), n_iter=platt.n_iter, converged=platt.converged, **meta)
    write_csv(result.fold_report, os.path.join(out, "fold_report.csv"), meta)
    write_csv(result.holdout_scores, os.path.join(out, "holdout_scores.csv"), meta)
    logger.info(f"Platt parameters a={platt.a:.4f}, b={platt.b:.4f}.")


# infer


@main.command()
@run_options
@click.option("--n-views", type=int, default=None, help="Test-time views per model (view 0 is the identity).")
@click.option("--calibration/--no-calibration", "calibrate", default=None, help="Apply the Platt map.")
@click.option("--threshold-on", type=click.Choice(["calibrated", "raw"]), default=None)
@click.option("--fold", "folds", type=int, multiple=True, help="Use only these fold models (default: all).")
@click.option("--dump-views/--no-dump-views", default=True, help="Write the per-model, per-view scores.")
def infer(config_file, out_dir, seed, jobs, overrides, n_views, calibrate, threshold_on, folds, dump_views):
    """Ensemble and test-time-augmented predictions for every scan of the evaluation slides."""
    _infer(
        config_file,
        out_dir,
        seed,
        jobs,
        overrides,
        config_values={"n_views": n_views, "calibrate": calibrate, "threshold_on": threshold_on},
        folds=folds,
        dump_views=dump_views,
    )


@stage_command("infer")
def _infer(cfg, out, folds: tuple[int, ...] = (), dump_views: bool = True):
    manifest = load_manifest(os.path.join(stage_dir(cfg, "synth"), "manifest.csv"))
    train_dir = stage_dir(cfg, "train")
    checkpoints = load_ensemble(train_dir, cfg.folds)
    if folds:
        unknown = [f for f in folds if not 0 <= f < len(checkpoints)]
        if unknown:
            raise InvariantViolation(f"no checkpoint for fold {unknown[0]}")
        checkpoints = [checkpoints[f] for f in sorted(set(folds))]
    platt = CalibrationParams.load(os.path.join(train_dir, "platt.json")) if cfg.calibrate else None
    predictions = predict_manifest(
        manifest,
        stage_dir(cfg, "tile"),
        [c.model for c in checkpoints],
        platt,
        n_views=cfg.n_views,
        seed=cfg.seed,
        calibrate=cfg.calibrate,
        threshold_on=cfg.threshold_on,
        operating_point=cfg.operating_point,
        roles=EVALUATION_ROLES,
        n_jobs=cfg.jobs,
    )
    meta = provenance(cfg, "infer")
    write_csv(predictions_frame(predictions), os.path.join(out, "predictions.csv"), meta)
    if dump_views:
        write_csv(views_frame(predictions), os.path.join(out, "views.csv"), meta)


# eval


@main.command(name="eval")
@run_options
@stage_command("eval")
def evaluate(cfg, out):
    """Statistical validation of the predictions: metrics with CIs, agreement and borderline analyses."""
    synth_dir = stage_dir(cfg, "synth")
    manifest = load_manifest(os.path.join(synth_dir, "manifest.csv"))
    predictions = read_csv(
        os.path.join(stage_dir(cfg, "infer"), "predictions.csv"), dtype={"slide_id": str, "scan_id": str}
    )
    raters_path = os.path.join(synth_dir, "raters.csv")
    raters = read_csv(raters_path, dtype={"slide_id": str, "rater_id": str}) if os.path.isfile(raters_path) else None
    evaluator = CribriformEvaluator(
        manifest,
        raters=raters,
        reference_rater=REFERENCE_RATER,
        n_bootstrap=cfg.n_bootstrap,
        seed=cfg.seed,
        calibration_bins=cfg.calibration_bins,
        operating_point=cfg.operating_point,
        n_jobs=cfg.jobs,
    )
    report = evaluator(predictions, output_path=out, provenance=provenance(cfg, "eval"))
    for name in ("auc", "kappa", "sensitivity", "specificity"):
        entry = report[name]
        if None not in (entry["value"], entry["ci_low"], entry["ci_high"]):
            logger.info(f"{name}: {entry['value']:.3f} (95% CI {entry['ci_low']:.3f}, {entry['ci_high']:.3f})")


if __name__ == "__main__":
    main()
