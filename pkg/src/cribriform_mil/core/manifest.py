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

import enum
import logging
import os
from dataclasses import dataclass, field

import pandas as pd

from .exceptions import ManifestError, MissingInputError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_COLUMNS = [
    "slide_id",
    "patient_id",
    "cohort_id",
    "role",
    "label",
    "borderline",
    "scan_id",
    "scanner_id",
    "is_primary",
    "pixel_spacing",
    "image_path",
]


class Role(str, enum.Enum):
    """Split role of a slide. The value is the token used in manifest files."""

    TRAIN = "train"
    INTERNAL_VALIDATION = "internal"
    EXTERNAL_VALIDATION = "external"


@dataclass(frozen=True)
class ScanRecord:
    """One digitisation of a glass slide."""

    scan_id: str
    scanner_id: str
    image_path: str
    is_primary: bool
    pixel_spacing: float = 1.0

    def __post_init__(self):
        if not self.pixel_spacing > 0:
            raise ValueError(f"pixel_spacing must be positive, got {self.pixel_spacing} for scan '{self.scan_id}'")


@dataclass(frozen=True)
class SlideRecord:
    """A glass slide with its reference label and all of its scans.

    Exactly one scan is the primary one, i.e. the digitisation the reference annotation was drawn on.
    """

    slide_id: str
    patient_id: str
    cohort_id: str
    label: int
    borderline: bool
    scans: tuple[ScanRecord, ...]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ManifestError(f"label must be 0 or 1, got {self.label}", offending_id=self.slide_id)
        if not self.scans:
            raise ManifestError(f"slide '{self.slide_id}' has no scan", offending_id=self.slide_id)
        n_primary = sum(scan.is_primary for scan in self.scans)
        if n_primary != 1:
            raise ManifestError(
                f"slide '{self.slide_id}' must have exactly one primary scan, found {n_primary}",
                offending_id=self.slide_id,
            )

    @property
    def primary_scan(self) -> ScanRecord:
        return next(scan for scan in self.scans if scan.is_primary)

    def scan(self, scan_id: str) -> ScanRecord:
        for scan in self.scans:
            if scan.scan_id == scan_id:
                return scan
        raise KeyError(f"slide '{self.slide_id}' has no scan '{scan_id}'")


@dataclass(frozen=True)
class DatasetManifest:
    """All slides of a study with their split roles.

    Invariants: slide ids are unique, scan ids are unique, and every patient belongs to exactly one role
    (patient-level grouping prevents leakage between training and validation).
    """

    slides: tuple[SlideRecord, ...] = ()
    roles: dict[str, Role] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        seen_slides, seen_scans, patient_role = set(), set(), {}
        for slide in self.slides:
            if slide.slide_id in seen_slides:
                raise ManifestError(f"duplicate slide_id '{slide.slide_id}'", offending_id=slide.slide_id)
            seen_slides.add(slide.slide_id)
            for scan in slide.scans:
                if scan.scan_id in seen_scans:
                    raise ManifestError(
                        f"duplicate scan_id '{scan.scan_id}' (slide '{slide.slide_id}')", offending_id=slide.slide_id
                    )
                seen_scans.add(scan.scan_id)
            if slide.slide_id not in self.roles:
                raise ManifestError(f"slide '{slide.slide_id}' has no role", offending_id=slide.slide_id)
            role = Role(self.roles[slide.slide_id])
            previous = patient_role.setdefault(slide.patient_id, role)
            if previous != role:
                raise ManifestError(
                    f"patient '{slide.patient_id}' appears in roles '{previous.value}' and '{role.value}'",
                    offending_id=slide.patient_id,
                )

    def __len__(self):
        return len(self.slides)

    def role_of(self, slide_id: str) -> Role:
        return Role(self.roles[slide_id])

    def slide(self, slide_id: str) -> SlideRecord:
        for slide in self.slides:
            if slide.slide_id == slide_id:
                return slide
        raise KeyError(f"unknown slide '{slide_id}'")

    def slides_by_role(self, *roles: Role) -> list[SlideRecord]:
        wanted = {Role(r) for r in roles}
        return [s for s in self.slides if self.role_of(s.slide_id) in wanted]

    def patients(self, *roles: Role) -> list[str]:
        """Sorted unique patient ids, optionally restricted to some roles."""
        slides = self.slides_by_role(*roles) if roles else self.slides
        return sorted({s.patient_id for s in slides})

    def scanners(self) -> list[str]:
        """The scanner table: sorted ids of all scanners used in this manifest."""
        return sorted({scan.scanner_id for s in self.slides for scan in s.scans})

    def to_frame(self) -> pd.DataFrame:
        """One row per scan, in the fixed manifest column order."""
        rows = []
        for slide in self.slides:
            for scan in slide.scans:
                rows.append(
                    {
                        "slide_id": slide.slide_id,
                        "patient_id": slide.patient_id,
                        "cohort_id": slide.cohort_id,
                        "role": self.role_of(slide.slide_id).value,
                        "label": str(int(slide.label)),
                        "borderline": str(int(slide.borderline)),
                        "scan_id": scan.scan_id,
                        "scanner_id": scan.scanner_id,
                        "is_primary": str(int(scan.is_primary)),
                        "pixel_spacing": repr(float(scan.pixel_spacing)),
                        "image_path": scan.image_path,
                    }
                )
        return pd.DataFrame(rows, columns=MANIFEST_COLUMNS, dtype=str)


def _parse_flag(value: str, column: str, line: int, slide_id: str) -> int:
    if value not in ("0", "1"):
        raise ManifestError(f"column '{column}' must be 0 or 1, got '{value}'", line=line, offending_id=slide_id)
    return int(value)


def load_manifest(path: str) -> DatasetManifest:
    """Load and validate a manifest CSV (one row per scan, fixed column order).

    Args:
        path (str): Path to the manifest file.

    Raises:
        MissingInputError: If the file does not exist.
        ManifestError: On parse errors (with line number) or invariant violations (naming the slide/patient).
    """
    if not os.path.isfile(path):
        raise MissingInputError(f"manifest not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ManifestError(f"cannot parse manifest {path}: {e}") from e
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise ManifestError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}, got {','.join(frame.columns)}", line=1)

    # rows of one slide are contiguous; a slide id that re-appears later is a duplicate
    grouped: dict[str, list[tuple[int, dict]]] = {}
    last_slide = None
    for idx, row in enumerate(frame.to_dict(orient="records")):
        line = idx + 2
        slide_id = row["slide_id"]
        if not slide_id:
            raise ManifestError("empty slide_id", line=line)
        if slide_id in grouped and slide_id != last_slide:
            raise ManifestError(f"duplicate slide_id '{slide_id}'", line=line, offending_id=slide_id)
        scan_ids = {r["scan_id"] for _, r in grouped.get(slide_id, [])}
        if row["scan_id"] in scan_ids:
            raise ManifestError(
                f"duplicate slide_id '{slide_id}' (scan '{row['scan_id']}' listed twice)", line=line, offending_id=slide_id
            )
        grouped.setdefault(slide_id, []).append((line, row))
        last_slide = slide_id

    slides, roles = [], {}
    for slide_id, rows in grouped.items():
        first_line, first = rows[0]
        for line, row in rows[1:]:
            for column in ("patient_id", "cohort_id", "role", "label", "borderline"):
                if row[column] != first[column]:
                    raise ManifestError(
                        f"slide '{slide_id}' has inconsistent '{column}' across its scans", line=line, offending_id=slide_id
                    )
        try:
            role = Role(first["role"])
        except ValueError:
            raise ManifestError(
                f"role must be one of train/internal/external, got '{first['role']}'", line=first_line, offending_id=slide_id
            ) from None
        scans = []
        for line, row in rows:
            try:
                spacing = float(row["pixel_spacing"])
            except ValueError:
                raise ManifestError(
                    f"pixel_spacing is not a number: '{row['pixel_spacing']}'", line=line, offending_id=slide_id
                ) from None
            if not spacing > 0:
                raise ManifestError(f"pixel_spacing must be positive, got {spacing}", line=line, offending_id=slide_id)
            scans.append(
                ScanRecord(
                    scan_id=row["scan_id"],
                    scanner_id=row["scanner_id"],
                    image_path=row["image_path"],
                    is_primary=bool(_parse_flag(row["is_primary"], "is_primary", line, slide_id)),
                    pixel_spacing=spacing,
                )
            )
        try:
            slide = SlideRecord(
                slide_id=slide_id,
                patient_id=first["patient_id"],
                cohort_id=first["cohort_id"],
                label=_parse_flag(first["label"], "label", first_line, slide_id),
                borderline=bool(_parse_flag(first["borderline"], "borderline", first_line, slide_id)),
                scans=tuple(scans),
            )
        except ManifestError as e:
            raise ManifestError(str(e), line=first_line, offending_id=e.offending_id) from None
        slides.append(slide)
        roles[slide_id] = role

    manifest = DatasetManifest(slides=tuple(slides), roles=roles)
    logger.info(f"Loaded manifest {path} with {len(manifest)} slides and {len(manifest.patients())} patients.")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str):
    """Write a manifest CSV (UTF-8, LF line endings, fixed column order)."""
    manifest.to_frame().to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
