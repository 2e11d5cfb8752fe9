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
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from PIL import Image

from cribriform_mil.core.exceptions import MissingInputError

from .config import PipelineConfig
from .grid import PatchRecord, crop_patch, patch_table, patches_from_table, tile_scan
from .store import encode_patch, write_patch_store

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScanArtifacts:
    """Paths of the tile-stage outputs of one scan."""

    store: str
    table: str
    descriptors: str

    @classmethod
    def at(cls, tile_dir: str, scan_id: str) -> ScanArtifacts:
        base = os.path.join(tile_dir, scan_id)
        return cls(store=f"{base}.pstr", table=f"{base}.csv", descriptors=f"{base}.npy")

    def exist(self) -> bool:
        return all(os.path.isfile(p) for p in (self.store, self.table, self.descriptors))


def tile_to_disk(
    image: np.ndarray,
    cfg: PipelineConfig,
    artifacts: ScanArtifacts,
    annotation: np.ndarray | None = None,
    descriptor_fn=None,
) -> list[PatchRecord]:
    """Tile a scan and write its patch store, patch table and (if `descriptor_fn` is given) descriptors."""
    patches = tile_scan(image, cfg, annotation)
    crops = [crop_patch(image, p, cfg) for p in patches]
    write_patch_store([(p.key, encode_patch(c)) for p, c in zip(patches, crops)], artifacts.store)
    patch_table(patches).to_csv(artifacts.table, index=False, lineterminator="\n")
    if descriptor_fn is not None:
        descriptors = np.stack([descriptor_fn(c) for c in crops]) if crops else np.zeros((0, 40))
        np.save(artifacts.descriptors, descriptors.astype(np.float64))
    return patches


def resample_to_spacing(
    image: np.ndarray, pixel_spacing: float, target_spacing: float, nearest: bool = False
) -> np.ndarray:
    """Resize `image` from `pixel_spacing` to `target_spacing` micrometres per pixel (a no-op when they match).

    Masks are resized with nearest-neighbour sampling so they stay binary.
    """
    if pixel_spacing <= 0 or target_spacing <= 0:
        raise ValueError(f"spacings must be positive, got {pixel_spacing} and {target_spacing}")
    if pixel_spacing == target_spacing:
        return image
    scale = pixel_spacing / target_spacing
    height, width = image.shape[:2]
    size = (max(1, round(width * scale)), max(1, round(height * scale)))
    resample = Image.Resampling.NEAREST if nearest else Image.Resampling.BILINEAR
    logger.debug(f"Resampling {width}x{height} from {pixel_spacing} to {target_spacing} um/px.")
    return np.asarray(Image.fromarray(image).resize(size, resample))


def read_patch_table(artifacts: ScanArtifacts) -> list[PatchRecord]:
    if not os.path.isfile(artifacts.table):
        raise MissingInputError(f"patch table not found: {artifacts.table}")
    return patches_from_table(pd.read_csv(artifacts.table))
