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

from .cohort import SyntheticCohort, exact_count, generate_cohort, merge_cohorts, write_cohort
from .raters import REFERENCE_RATER, simulate_rater_panel
from .scanner import DEFAULT_SCANNERS, ScannerProfile, get_scanner_profiles, simulate_rescan
from .slide import (
    LUMEN_SIZE_CRITERION,
    Lesion,
    LesionClass,
    SlideSpec,
    make_slide_spec,
    render_annotation,
    render_slide,
    render_tissue_mask,
)

__all__ = [
    "SyntheticCohort",
    "exact_count",
    "generate_cohort",
    "merge_cohorts",
    "write_cohort",
    "REFERENCE_RATER",
    "simulate_rater_panel",
    "DEFAULT_SCANNERS",
    "ScannerProfile",
    "get_scanner_profiles",
    "simulate_rescan",
    "LUMEN_SIZE_CRITERION",
    "Lesion",
    "LesionClass",
    "SlideSpec",
    "make_slide_spec",
    "render_annotation",
    "render_slide",
    "render_tissue_mask",
]
