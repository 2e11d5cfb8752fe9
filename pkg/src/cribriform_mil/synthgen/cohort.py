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
import os
from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from PIL import Image

from cribriform_mil.core import DatasetManifest, Role, ScanRecord, SlideRecord, save_manifest
from cribriform_mil.registration import transfer_annotations
from cribriform_mil.utils import create_path, derive_seed, make_rng

from .scanner import DEFAULT_SCANNERS, ScannerProfile, simulate_rescan
from .slide import SlideSpec, make_slide_spec, render_annotation, render_slide

logger = logging.getLogger(__name__)

ROLE_PREFIX = {Role.TRAIN: "T", Role.INTERNAL_VALIDATION: "I", Role.EXTERNAL_VALIDATION: "E"}


def exact_count(n: int, rate: float) -> int:
    """`round(rate * n)` with halves rounded up, so counts never depend on banker's rounding."""
    return int(math.floor(rate * n + 0.5))


@dataclass(frozen=True)
class ScanSpec:
    scan_id: str
    slide_id: str
    profile: ScannerProfile
    shift: tuple[int, int]
    is_primary: bool


class _LazyRenderer(Mapping):
    """Read-only mapping `scan_id -> array`, rendered on access so a cohort never sits in memory at once."""

    def __init__(self, cohort: SyntheticCohort, render):
        self._cohort = cohort
        self._render = render

    def __getitem__(self, scan_id: str) -> np.ndarray:
        if scan_id not in self._cohort.scans:
            raise KeyError(scan_id)
        return self._render(scan_id)

    def __iter__(self) -> Iterator[str]:
        return iter(self._cohort.scans)

    def __len__(self) -> int:
        return len(self._cohort.scans)


@dataclass
class SyntheticCohort:
    """A generated cohort: manifest, slide geometry and scan layout.

    `images` and `annotations` are lazy mappings keyed by scan id; unpacking the cohort yields
    `(images, annotations, manifest)`.
    """

    manifest: DatasetManifest
    specs: dict[str, SlideSpec]
    scans: dict[str, ScanSpec]
    seed: int

    def render_scan(self, scan_id: str) -> np.ndarray:
        scan = self.scans[scan_id]
        base = render_slide(self.specs[scan.slide_id])
        return simulate_rescan(base, scan.profile, derive_seed(self.seed, "rescan", scan_id), scan.shift)

    def render_scan_annotation(self, scan_id: str) -> np.ndarray:
        """Annotation in the frame of `scan_id`, transported from the primary frame by the known shift."""
        scan = self.scans[scan_id]
        mask = render_annotation(self.specs[scan.slide_id])
        return transfer_annotations(mask, scan.shift)

    @property
    def images(self) -> Mapping[str, np.ndarray]:
        return _LazyRenderer(self, self.render_scan)

    @property
    def annotations(self) -> Mapping[str, np.ndarray]:
        return _LazyRenderer(self, self.render_scan_annotation)

    def __iter__(self):
        return iter((self.images, self.annotations, self.manifest))

    def offsets(self) -> pd.DataFrame:
        rows = [{"scan_id": s.scan_id, "dx": s.shift[0], "dy": s.shift[1]} for s in self.scans.values()]
        return pd.DataFrame(rows, columns=["scan_id", "dx", "dy"])


def generate_cohort(
    n_slides: int,
    positive_rate: float,
    borderline_rate: float,
    scanners: tuple[ScannerProfile, ...] | list[ScannerProfile] = DEFAULT_SCANNERS,
    seed: int = 0,
    slide_size: int = 1536,
    role: Role = Role.TRAIN,
    cohort_id: str = "synth",
    multi_scan_rate: float = 0.0,
    max_shift: int = 32,
    borderline_difficulty: int = 4,
) -> SyntheticCohort:
    """Generate a deterministic synthetic cohort.

    Exactly `round(positive_rate * n_slides)` slides are positive (carry sieve lesions) and exactly
    `round(borderline_rate * n_negative)` of the negatives carry borderline lesions. Patients own one to
    three consecutive slides. The primary scan of every slide is taken on `scanners[0]`; every other scanner
    rescans a slide with probability `multi_scan_rate`, with an integer positioning shift of at most
    `max_shift` pixels per axis.

    Args:
        n_slides (int): Number of slides (at least 1).
        positive_rate (float): Fraction of positive slides.
        borderline_rate (float): Fraction of negative slides flagged borderline.
        scanners (list[ScannerProfile]): Scanner table; the first one produces primary scans.
        seed (int): Root seed.
        slide_size (int): Width and height of every slide in pixels.
        role (Role): Split role of every slide in this cohort.
        cohort_id (str): Cohort id written to the manifest.
        multi_scan_rate (float): Probability of a rescan per (slide, non-primary scanner).
        max_shift (int): Bound on rescan shifts.
        borderline_difficulty (int): Number of borderline lesions on a borderline slide.
    """
    if n_slides < 1:
        raise ValueError(f"n_slides must be at least 1, got {n_slides}")
    rates = {"positive_rate": positive_rate, "borderline_rate": borderline_rate, "multi_scan_rate": multi_scan_rate}
    for name, rate in rates.items():
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {rate}")
    if not scanners:
        raise ValueError("at least one scanner profile is required")

    role = Role(role)
    prefix = f"{ROLE_PREFIX[role]}{cohort_id}-" if cohort_id != "synth" else ROLE_PREFIX[role]
    n_pos = exact_count(n_slides, positive_rate)
    n_borderline = exact_count(n_slides - n_pos, borderline_rate)
    rng = make_rng(seed, "cohort", role.value, cohort_id)
    order = rng.permutation(n_slides)
    kind = np.zeros(n_slides, dtype=int)
    kind[order[:n_pos]] = 1
    kind[order[n_pos : n_pos + n_borderline]] = 2

    specs, scans, slides, roles = {}, {}, [], {}
    patient_idx, remaining = 0, 0
    for idx in range(n_slides):
        if remaining == 0:
            patient_idx += 1
            remaining = int(rng.integers(1, 4))
        remaining -= 1
        slide_id = f"{prefix}{idx + 1:04d}"
        patient_id = f"P-{prefix}{patient_idx:04d}"
        slide_rng = make_rng(seed, "slide", slide_id)
        spec = make_slide_spec(
            slide_rng,
            size=slide_size,
            n_sieve=int(slide_rng.integers(2, 5)) if kind[idx] == 1 else 0,
            n_borderline=borderline_difficulty if kind[idx] == 2 else 0,
        )
        specs[slide_id] = spec

        scan_records = []
        scan_rng = make_rng(seed, "scans", slide_id)
        for k, profile in enumerate(scanners):
            is_primary = k == 0
            if not is_primary and scan_rng.random() >= multi_scan_rate:
                continue
            shift = (0, 0)
            if not is_primary and max_shift > 0:
                shift = tuple(int(v) for v in scan_rng.integers(-max_shift, max_shift + 1, size=2))
            scan_id = f"{slide_id}-{profile.scanner_id}"
            scans[scan_id] = ScanSpec(scan_id, slide_id, profile, shift, is_primary)
            scan_records.append(
                ScanRecord(
                    scan_id=scan_id,
                    scanner_id=profile.scanner_id,
                    image_path=os.path.join("images", f"{scan_id}.png"),
                    is_primary=is_primary,
                    pixel_spacing=1.0,
                )
            )
        slides.append(
            SlideRecord(
                slide_id=slide_id,
                patient_id=patient_id,
                cohort_id=cohort_id,
                label=spec.label,
                borderline=spec.borderline,
                scans=tuple(scan_records),
            )
        )
        roles[slide_id] = role

    manifest = DatasetManifest(slides=tuple(slides), roles=roles)
    logger.info(
        f"Generated {n_slides} {role.value} slides ({n_pos} positive, {n_borderline} borderline, {len(scans)} scans) for cohort '{cohort_id}'."
    )
    return SyntheticCohort(manifest=manifest, specs=specs, scans=scans, seed=seed)


def merge_cohorts(*cohorts: SyntheticCohort) -> SyntheticCohort:
    """Concatenate cohorts generated with the same root seed (slide ids must not collide)."""
    assert cohorts, "nothing to merge"
    slides, roles, specs, scans = [], {}, {}, {}
    for cohort in cohorts:
        assert cohort.seed == cohorts[0].seed, "cohorts must share a root seed"
        slides.extend(cohort.manifest.slides)
        roles.update(cohort.manifest.roles)
        specs.update(cohort.specs)
        scans.update(cohort.scans)
    return SyntheticCohort(
        manifest=DatasetManifest(slides=tuple(slides), roles=roles), specs=specs, scans=scans, seed=cohorts[0].seed
    )


def _write_slide(cohort: SyntheticCohort, slide: SlideRecord, out_dir: str):
    for scan in slide.scans:
        Image.fromarray(cohort.render_scan(scan.scan_id), "RGB").save(os.path.join(out_dir, scan.image_path))
    annotation = render_annotation(cohort.specs[slide.slide_id])
    Image.fromarray(annotation, "L").save(os.path.join(out_dir, "annotations", f"{slide.slide_id}.png"))


def write_cohort(cohort: SyntheticCohort, out_dir: str, n_jobs: int = 1):
    """Write a cohort to disk.

    Layout: `images/<scan_id>.png`, `annotations/<slide_id>.png` (primary frame only, as drawn by the
    annotating pathologist), `manifest.csv`, `offsets.csv` (`scan_id,dx,dy` ground truth) and
    `tissue_fractions.csv` (`slide_id,tissue_fraction` ground truth).
    """
    create_path(os.path.join(out_dir, "images"))
    create_path(os.path.join(out_dir, "annotations"))
    Parallel(n_jobs=n_jobs)(delayed(_write_slide)(cohort, slide, out_dir) for slide in cohort.manifest.slides)
    save_manifest(cohort.manifest, os.path.join(out_dir, "manifest.csv"))
    cohort.offsets().to_csv(os.path.join(out_dir, "offsets.csv"), index=False, lineterminator="\n")
    fractions = pd.DataFrame(
        [{"slide_id": sid, "tissue_fraction": spec.tissue_fraction} for sid, spec in cohort.specs.items()],
        columns=["slide_id", "tissue_fraction"],
    )
    fractions.to_csv(os.path.join(out_dir, "tissue_fractions.csv"), index=False, lineterminator="\n")
    logger.info(f"Wrote {len(cohort.scans)} scans of {len(cohort.manifest)} slides to {out_dir}.")
