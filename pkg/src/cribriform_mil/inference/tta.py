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
from collections.abc import Sequence

import numpy as np

from cribriform_mil.core import MissingInputError
from cribriform_mil.models.descriptor import DESCRIPTOR_DIM, patch_descriptor
from cribriform_mil.tiling import PatchStore, ScanArtifacts, read_patch_table
from cribriform_mil.training.augment import dihedral
from cribriform_mil.utils import make_rng

logger = logging.getLogger(__name__)

N_VIEWS = 5
IDENTITY = (False, False, 0)


def tta_transforms(n_views: int, seed: int, *labels) -> list[tuple[bool, bool, int]]:
    """`(flip_h, flip_v, quarter_turns)` for each view; view 0 is the identity and view `v` draws from
    a stream derived from `(seed, labels, v)`."""
    if n_views < 1:
        raise ValueError(f"n_views must be at least 1, got {n_views}")
    transforms = [IDENTITY]
    for view in range(1, n_views):
        rng = make_rng(seed, "tta", *labels, view)
        transforms.append((bool(rng.integers(2)), bool(rng.integers(2)), int(rng.integers(4))))
    return transforms


def tta_views(
    patches: Sequence[np.ndarray], n_views: int = N_VIEWS, seed: int = 0, labels: Sequence = ()
) -> np.ndarray:
    """Descriptors of every patch under each test-time view, shaped `(n_views, n_patches, 40)`.

    One transform per view is applied to all patches of the bag, then descriptors are recomputed from the
    transformed pixels. `labels` name the random stream of the bag (the scan id).
    """
    transforms = tta_transforms(n_views, seed, *labels)
    views = np.zeros((n_views, len(patches), DESCRIPTOR_DIM))
    for v, (flip_h, flip_v, k) in enumerate(transforms):
        for p, patch in enumerate(patches):
            views[v, p] = patch_descriptor(dihedral(patch, flip_h, flip_v, k))
    return views


def scan_tta_views(tile_dir: str, scan_id: str, n_views: int = N_VIEWS, seed: int = 0) -> np.ndarray:
    """Test-time views of every kept patch of a tiled scan, patches in patch-table order."""
    artifacts = ScanArtifacts.at(tile_dir, scan_id)
    if not artifacts.exist():
        raise MissingInputError(f"tile artifacts missing for scan '{scan_id}' in {tile_dir}")
    patches = read_patch_table(artifacts)
    with PatchStore(artifacts.store) as store:
        pixels = [store.read_patch(p.key) for p in patches]
    logger.debug(f"Scan '{scan_id}': {len(pixels)} patches, {n_views} views.")
    return tta_views(pixels, n_views, seed, labels=(scan_id,))
