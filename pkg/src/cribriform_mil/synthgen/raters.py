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

import pandas as pd

from cribriform_mil.core import DatasetManifest, Role
from cribriform_mil.utils import make_rng

logger = logging.getLogger(__name__)

REFERENCE_RATER = "pathologist-1"


def simulate_rater_panel(
    manifest: DatasetManifest,
    n_raters: int = 9,
    seed: int = 0,
    roles: tuple[Role, ...] = (Role.INTERNAL_VALIDATION,),
    sensitivity_range: tuple[float, float] = (0.70, 0.95),
    specificity_range: tuple[float, float] = (0.75, 0.95),
    borderline_positive_rate: float = 0.5,
) -> pd.DataFrame:
    """Simulate a panel of pathologists calling the slides of some roles.

    `pathologist-1` is the annotating pathologist and reproduces the reference labels; every other rater
    has a sensitivity and specificity drawn from the given ranges and calls borderline slides positive
    with an elevated probability.

    Returns:
        pd.DataFrame: Long format with columns `slide_id, rater_id, call`.
    """
    if n_raters < 2:
        raise ValueError(f"a panel needs at least 2 raters, got {n_raters}")
    slides = manifest.slides_by_role(*roles)
    rows = [{"slide_id": s.slide_id, "rater_id": REFERENCE_RATER, "call": s.label} for s in slides]
    for r in range(2, n_raters + 1):
        rater_id = f"pathologist-{r}"
        rng = make_rng(seed, "rater", rater_id)
        sensitivity = rng.uniform(*sensitivity_range)
        specificity = rng.uniform(*specificity_range)
        for slide in slides:
            u = rng.random()
            if slide.label == 1:
                call = int(u < sensitivity)
            elif slide.borderline:
                call = int(u < borderline_positive_rate)
            else:
                call = int(u >= specificity)
            rows.append({"slide_id": slide.slide_id, "rater_id": rater_id, "call": call})
    logger.info(f"Simulated {n_raters} raters on {len(slides)} slides.")
    return pd.DataFrame(rows, columns=["slide_id", "rater_id", "call"])
