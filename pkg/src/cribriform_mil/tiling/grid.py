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
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import ndimage
from skimage.filters import threshold_otsu

from .config import PipelineConfig

logger = logging.getLogger(__name__)

PATCH_TABLE_COLUMNS = ["i", "j", "x", "y", "tissue_fraction", "annotated_fraction", "patch_label", "subset"]
UNKNOWN_LABEL = -1


@dataclass(frozen=True)
class PatchRecord:
    """A grid cell of a scan: grid index `(i, j)` (row, column) and pixel origin `(x, y) = (j, i) * stride`."""

    i: int
    j: int
    x: int
    y: int
    tissue_fraction: float = 0.0
    annotated_fraction: float = 0.0
    patch_label: int = 0

    @property
    def key(self) -> str:
        """Patch-store key of this patch."""
        return f"{self.i:04d}_{self.j:04d}"

    def box(self, patch_size: int) -> tuple[int, int, int, int]:
        return self.x, self.y, self.x + patch_size, self.y + patch_size


def overlap_area(a: PatchRecord, b: PatchRecord, patch_size: int) -> int:
    """Axis-aligned intersection area of two patches in pixels."""
    ax0, ay0, ax1, ay1 = a.box(patch_size)
    bx0, by0, bx1, by1 = b.box(patch_size)
    return max(0, min(ax1, bx1) - max(ax0, bx0)) * max(0, min(ay1, by1) - max(ay0, by0))


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an 8-bit RGB image, as float64 in [0, 255]."""
    rgb = np.asarray(image, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def tissue_mask(image: np.ndarray) -> np.ndarray:
    """Foreground mask: pixels at or below the Otsu threshold of the luminance, then 3x3 majority smoothing.

    A single-valued image has no foreground/background split and yields an empty mask.
    """
    lum = np.rint(luminance(image)).astype(np.uint8)
    if lum.min() == lum.max():
        return np.zeros(lum.shape, dtype=bool)
    mask = lum <= threshold_otsu(lum)
    votes = ndimage.convolve(mask.astype(np.uint8), np.ones((3, 3), dtype=np.uint8), mode="nearest")
    return votes >= 5


def extract_grid(width: int, height: int, cfg: PipelineConfig) -> list[PatchRecord]:
    """Every patch origin of the 50%-overlap grid whose full patch lies inside the image, in row-major order.

    Raises:
        ValueError: If the image is smaller than one patch.
    """
    if width < cfg.patch_size or height < cfg.patch_size:
        raise ValueError(f"image of {width}x{height} px is smaller than one {cfg.patch_size} px patch")
    n_rows = (height - cfg.patch_size) // cfg.stride + 1
    n_cols = (width - cfg.patch_size) // cfg.stride + 1
    return [PatchRecord(i, j, j * cfg.stride, i * cfg.stride) for i in range(n_rows) for j in range(n_cols)]


def _window_sums(mask: np.ndarray, patches: list[PatchRecord], patch_size: int) -> np.ndarray:
    """Number of set pixels under each patch, from a summed-area table."""
    table = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    table[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    x = np.array([p.x for p in patches], dtype=np.int64)
    y = np.array([p.y for p in patches], dtype=np.int64)
    s = patch_size
    return table[y + s, x + s] - table[y, x + s] - table[y + s, x] + table[y, x]


def filter_by_coverage(patches: list[PatchRecord], mask: np.ndarray, cfg: PipelineConfig) -> list[PatchRecord]:
    """Keep patches whose tissue fraction is at least `cfg.min_tissue_fraction`, recording the fraction."""
    if not patches:
        return []
    counts = _window_sums(mask > 0, patches, cfg.patch_size)
    kept = []
    for patch, count in zip(patches, counts):
        fraction = int(count) / cfg.patch_area
        if fraction >= cfg.min_tissue_fraction:
            kept.append(replace(patch, tissue_fraction=fraction))
    return kept


def label_from_fraction(annotated_fraction: float, cfg: PipelineConfig) -> int:
    return int(annotated_fraction > cfg.patch_positive_fraction)


def label_patch(patch: PatchRecord, annotation: np.ndarray, cfg: PipelineConfig) -> int:
    """1 if strictly more than `cfg.patch_positive_fraction` of the patch is annotated, else 0."""
    x0, y0, x1, y1 = patch.box(cfg.patch_size)
    fraction = int(np.count_nonzero(annotation[y0:y1, x0:x1])) / cfg.patch_area
    return label_from_fraction(fraction, cfg)


def label_patches(patches: list[PatchRecord], annotation: np.ndarray | None, cfg: PipelineConfig) -> list[PatchRecord]:
    """Attach annotated fractions and labels; without an annotation every label is unknown (-1)."""
    if annotation is None:
        return [replace(p, annotated_fraction=0.0, patch_label=UNKNOWN_LABEL) for p in patches]
    if not patches:
        return []
    counts = _window_sums(annotation > 0, patches, cfg.patch_size)
    labelled = []
    for patch, count in zip(patches, counts):
        fraction = int(count) / cfg.patch_area
        labelled.append(replace(patch, annotated_fraction=fraction, patch_label=label_from_fraction(fraction, cfg)))
    return labelled


def split_disjoint_sets(patches: list[PatchRecord]) -> tuple[list[PatchRecord], list[PatchRecord]]:
    """Two sets of pairwise non-overlapping patches: A holds (even, even) grid cells, B holds (odd, odd) ones."""
    set_a = [p for p in patches if p.i % 2 == 0 and p.j % 2 == 0]
    set_b = [p for p in patches if p.i % 2 == 1 and p.j % 2 == 1]
    return set_a, set_b


def subset_of(patch: PatchRecord) -> str:
    if patch.i % 2 == 0 and patch.j % 2 == 0:
        return "A"
    if patch.i % 2 == 1 and patch.j % 2 == 1:
        return "B"
    return "-"


def crop_patch(image: np.ndarray, patch: PatchRecord, cfg: PipelineConfig) -> np.ndarray:
    x0, y0, x1, y1 = patch.box(cfg.patch_size)
    return np.ascontiguousarray(image[y0:y1, x0:x1])


def tile_scan(image: np.ndarray, cfg: PipelineConfig, annotation: np.ndarray | None = None) -> list[PatchRecord]:
    """Grid, tissue-filter and (if an annotation in the scan's frame is given) label the patches of a scan."""
    height, width = image.shape[:2]
    if annotation is not None:
        assert annotation.shape[:2] == (height, width), "annotation must match the image dimensions"
    mask = tissue_mask(image)
    grid = extract_grid(width, height, cfg)
    kept = filter_by_coverage(grid, mask, cfg)
    logger.debug(f"Kept {len(kept)} of {len(grid)} grid patches (tissue fraction {mask.mean():.3f}).")
    return label_patches(kept, annotation, cfg)


def patch_table(patches: list[PatchRecord]) -> pd.DataFrame:
    """The per-scan patch table (`PATCH_TABLE_COLUMNS`)."""
    rows = [
        {
            "i": p.i,
            "j": p.j,
            "x": p.x,
            "y": p.y,
            "tissue_fraction": p.tissue_fraction,
            "annotated_fraction": p.annotated_fraction,
            "patch_label": p.patch_label,
            "subset": subset_of(p),
        }
        for p in patches
    ]
    return pd.DataFrame(rows, columns=PATCH_TABLE_COLUMNS)


def patches_from_table(frame: pd.DataFrame) -> list[PatchRecord]:
    return [
        PatchRecord(
            i=int(row.i),
            j=int(row.j),
            x=int(row.x),
            y=int(row.y),
            tissue_fraction=float(row.tissue_fraction),
            annotated_fraction=float(row.annotated_fraction),
            patch_label=int(row.patch_label),
        )
        for row in frame.itertuples(index=False)
    ]
