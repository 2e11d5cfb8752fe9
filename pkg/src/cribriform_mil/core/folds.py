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
from dataclasses import dataclass

from cribriform_mil.utils import make_rng

from .exceptions import InvariantViolation
from .manifest import DatasetManifest, Role, SlideRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldAssignment:
    """Patient-level partition of the training split into `k` cross-validation folds."""

    k: int
    fold_of_patient: dict[str, int]
    seed: int

    def patients_in(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.fold_of_patient.items() if f == fold)

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.fold_of_patient.values():
            sizes[f] += 1
        return sizes

    def holdout_slides(self, manifest: DatasetManifest, fold: int) -> list[SlideRecord]:
        """Training-role slides whose patient is held out in `fold`."""
        return [
            s for s in manifest.slides_by_role(Role.TRAIN) if self.fold_of_patient.get(s.patient_id) == fold
        ]

    def training_slides(self, manifest: DatasetManifest, fold: int) -> list[SlideRecord]:
        """Training-role slides whose patient is not held out in `fold`."""
        return [
            s
            for s in manifest.slides_by_role(Role.TRAIN)
            if s.patient_id in self.fold_of_patient and self.fold_of_patient[s.patient_id] != fold
        ]

    def assert_no_leakage(self, train: list[SlideRecord], holdout: list[SlideRecord]):
        """Raise if any patient contributes slides to both sides of a split."""
        leaked = sorted({s.patient_id for s in train} & {s.patient_id for s in holdout})
        if leaked:
            raise InvariantViolation(f"patient '{leaked[0]}' appears in both training and holdout slides")


def make_grouped_folds(manifest: DatasetManifest, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Assign every training patient to one of `k` folds.

    Patients (not slides) are the unit: ids are sorted lexicographically, shuffled with a stream derived
    from `seed`, and dealt round-robin, so fold sizes differ by at most one and the assignment does not
    depend on manifest row order.

    Args:
        manifest (DatasetManifest): The dataset; only `train`-role patients are partitioned.
        k (int): Number of folds, at least 2.
        seed (int): Root seed.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    patients = manifest.patients(Role.TRAIN)
    if len(patients) < k:
        raise InvariantViolation(f"cannot split {len(patients)} training patients into {k} folds")
    order = make_rng(seed, "folds", k).permutation(len(patients))
    fold_of_patient = {patients[idx]: position % k for position, idx in enumerate(order)}
    assignment = FoldAssignment(k=k, fold_of_patient=fold_of_patient, seed=seed)
    logger.info(f"Assigned {len(patients)} patients to {k} folds (sizes {assignment.fold_sizes()}).")
    return assignment


def select_primary_scans(manifest: DatasetManifest) -> list[tuple[str, str]]:
    """The `(slide_id, scan_id)` of the annotated (primary) scan of every slide, in manifest order."""
    return [(slide.slide_id, slide.primary_scan.scan_id) for slide in manifest.slides]
