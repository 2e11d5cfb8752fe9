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

from cribriform_mil.core import DatasetManifest, Role, ScanRecord, SlideRecord


def make_slide(slide_id: str, patient_id: str, label: int = 0, scanners=("scanner-a",), borderline: bool = False, cohort_id: str = "c0"):
    scans = tuple(
        ScanRecord(
            scan_id=f"{slide_id}-{scanner}",
            scanner_id=scanner,
            image_path=f"images/{slide_id}-{scanner}.png",
            is_primary=position == 0,
        )
        for position, scanner in enumerate(scanners)
    )
    return SlideRecord(
        slide_id=slide_id, patient_id=patient_id, cohort_id=cohort_id, label=label, borderline=borderline, scans=scans
    )


def make_manifest(n_patients: int = 6, slides_per_patient: int = 2, role: Role = Role.TRAIN, prefix: str = "S"):
    slides, roles = [], {}
    for p in range(n_patients):
        for s in range(slides_per_patient):
            slide_id = f"{prefix}{p:02d}{s}"
            slides.append(make_slide(slide_id, f"{prefix}p{p:02d}", label=(p + s) % 2))
            roles[slide_id] = role
    return DatasetManifest(slides=tuple(slides), roles=roles)


@pytest.fixture
def small_manifest():
    return make_manifest()


@pytest.fixture(scope="session")
def test_seed() -> int:
    # Root seed of the end-to-end runs
    return int(os.getenv("CRIBRIFORM_MIL_TEST_SEED", "7"))
