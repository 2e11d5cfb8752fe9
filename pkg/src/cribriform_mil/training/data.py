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
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from cribriform_mil.core import MissingInputError, ScanRecord, SlideRecord
from cribriform_mil.models.descriptor import DESCRIPTOR_DIM, patch_descriptor
from cribriform_mil.tiling import PatchStore, ScanArtifacts, read_patch_table, subset_of
from cribriform_mil.utils import derive_seed, make_rng

from .augment import AUGMENTATIONS, augment_patch

logger = logging.getLogger(__name__)


@dataclass
class ScanBag:
    """Descriptors of every kept patch of one scan.

    `descriptors` has shape `(n_views, n_patches, 40)`; view 0 is the un-augmented patch and the other
    views are independent random augmentations. `set_a` / `set_b` index the two non-overlapping subsets.
    """

    slide_id: str
    scan_id: str
    scanner_id: str
    descriptors: np.ndarray
    patch_labels: np.ndarray
    set_a: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    set_b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_views(self) -> int:
        return self.descriptors.shape[0]

    @property
    def n_patches(self) -> int:
        return self.descriptors.shape[1]

    @property
    def annotated(self) -> bool:
        """Whether every patch carries a known (pixel-derived) label."""
        return self.n_patches > 0 and bool((self.patch_labels >= 0).all())


@dataclass
class SlideBags:
    """All scan bags of one slide together with its manifest record."""

    record: SlideRecord
    scans: dict[str, ScanBag]

    @property
    def slide_id(self) -> str:
        return self.record.slide_id

    @property
    def patient_id(self) -> str:
        return self.record.patient_id

    @property
    def primary(self) -> ScanBag:
        return self.scans[self.record.primary_scan.scan_id]

    @property
    def pixel_annotated(self) -> bool:
        return self.primary.annotated

    @property
    def bag_label(self) -> int:
        """Positive iff any primary-scan patch is positive; the manifest label when patch labels are unknown."""
        if self.pixel_annotated:
            return bag_label_from_patches(self.primary.patch_labels)
        return int(self.record.label)


def bag_label_from_patches(patch_labels: np.ndarray) -> int:
    return int(np.any(np.asarray(patch_labels) == 1))


def build_scan_bag(
    slide_id: str,
    scan: ScanRecord,
    tile_dir: str,
    n_augmented_views: int = 0,
    seed: int = 0,
    augmentations: tuple[str, ...] = AUGMENTATIONS,
) -> ScanBag:
    """Load the tile-stage artifacts of a scan and compute `n_augmented_views` extra descriptor views.

    The augmentation stream of view `v` of patch `key` is derived from `(seed, scan_id, v, key)`.
    """
    artifacts = ScanArtifacts.at(tile_dir, scan.scan_id)
    if not artifacts.exist():
        raise MissingInputError(f"tile artifacts missing for scan '{scan.scan_id}' in {tile_dir}")
    patches = read_patch_table(artifacts)
    identity = np.load(artifacts.descriptors).reshape(len(patches), DESCRIPTOR_DIM)
    views = [identity]
    if n_augmented_views > 0 and patches:
        augmented = np.zeros((n_augmented_views, len(patches), DESCRIPTOR_DIM))
        with PatchStore(artifacts.store) as store:
            for k, patch in enumerate(patches):
                pixels = store.read_patch(patch.key)
                for v in range(1, n_augmented_views + 1):
                    rng = make_rng(seed, "augment", scan.scan_id, v, patch.key)
                    augmented[v - 1, k] = patch_descriptor(augment_patch(pixels, rng, augmentations))
        views.extend(augmented)
    elif n_augmented_views > 0:
        views.extend(np.zeros((n_augmented_views, 0, DESCRIPTOR_DIM)))
    subsets = [subset_of(p) for p in patches]
    return ScanBag(
        slide_id=slide_id,
        scan_id=scan.scan_id,
        scanner_id=scan.scanner_id,
        descriptors=np.stack(views),
        patch_labels=np.array([p.patch_label for p in patches], dtype=np.int64),
        set_a=np.array([k for k, s in enumerate(subsets) if s == "A"], dtype=np.int64),
        set_b=np.array([k for k, s in enumerate(subsets) if s == "B"], dtype=np.int64),
    )


def load_slide_bags(
    slides: list[SlideRecord],
    tile_dir: str,
    n_augmented_views: int = 0,
    seed: int = 0,
    augmentations: tuple[str, ...] = AUGMENTATIONS,
    n_jobs: int = 1,
) -> dict[str, SlideBags]:
    """Build the bags of every scan of `slides`, in parallel over scans, keyed by slide id."""
    tasks = [(slide, scan) for slide in slides for scan in slide.scans]
    bags = Parallel(n_jobs=n_jobs)(
        delayed(build_scan_bag)(slide.slide_id, scan, tile_dir, n_augmented_views, seed, augmentations)
        for slide, scan in tasks
    )
    by_slide: dict[str, dict[str, ScanBag]] = {}
    for (slide, scan), bag in zip(tasks, bags):
        by_slide.setdefault(slide.slide_id, {})[scan.scan_id] = bag
    result = {}
    for slide in slides:
        slide_bags = SlideBags(record=slide, scans=by_slide[slide.slide_id])
        if slide_bags.pixel_annotated and slide_bags.bag_label != slide.label:
            warnings.warn(
                f"Slide '{slide.slide_id}': patch-derived bag label {slide_bags.bag_label} differs from manifest label {slide.label}."
            )
        result[slide.slide_id] = slide_bags
    logger.info(f"Loaded bags of {len(result)} slides ({len(tasks)} scans) from {tile_dir}.")
    return result


def subsample_bag(indices: np.ndarray, max_bag_size: int, rng: np.random.Generator) -> np.ndarray:
    """At most `max_bag_size` indices drawn uniformly without replacement (kept in ascending order)."""
    indices = np.asarray(indices)
    if len(indices) <= max_bag_size:
        return indices
    return np.sort(rng.choice(indices, size=max_bag_size, replace=False))


def first_subset(slide_id: str, epoch: int, fold: int, seed: int) -> str:
    """The disjoint subset (`"A"` or `"B"`) a slide uses in `epoch`; it alternates between consecutive epochs."""
    offset = derive_seed(seed, "subset", fold, slide_id) % 2
    return "A" if (epoch + offset) % 2 == 0 else "B"


def select_training_bag(
    slide: SlideBags, epoch: int, fold: int, seed: int, max_bag_size: int
) -> tuple[np.ndarray, str] | None:
    """The bag a slide contributes to one step-two epoch, or `None` if it has no patches.

    One scan is chosen uniformly, the disjoint subset is `first_subset` (falling back to the other subset, then
    to all patches, when empty), oversized bags are subsampled and one descriptor view is drawn per patch.
    Every choice derives from `(seed, fold, epoch, slide_id)`, so it does not depend on the slide order.
    """
    rng = make_rng(seed, "bag", fold, epoch, slide.slide_id)
    scan_ids = sorted(slide.scans)
    scan = slide.scans[scan_ids[int(rng.integers(len(scan_ids)))]]
    first, second = scan.set_a, scan.set_b
    if first_subset(slide.slide_id, epoch, fold, seed) == "B":
        first, second = second, first
    if len(first):
        indices = first
    elif len(second):
        indices = second
    else:
        indices = np.arange(scan.n_patches)
    if len(indices) == 0:
        return None
    indices = subsample_bag(indices, max_bag_size, rng)
    views = rng.integers(0, scan.n_views, size=len(indices))
    return scan.descriptors[views, indices], scan.scan_id
