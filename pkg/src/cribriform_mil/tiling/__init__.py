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

from .config import PipelineConfig
from .grid import (
    PATCH_TABLE_COLUMNS,
    UNKNOWN_LABEL,
    PatchRecord,
    crop_patch,
    extract_grid,
    filter_by_coverage,
    label_from_fraction,
    label_patch,
    label_patches,
    luminance,
    overlap_area,
    patch_table,
    patches_from_table,
    split_disjoint_sets,
    subset_of,
    tile_scan,
    tissue_mask,
)
from .pipeline import ScanArtifacts, read_patch_table, resample_to_spacing, tile_to_disk
from .store import (
    PatchStore,
    concat_patch_stores,
    decode_patch,
    encode_patch,
    read_patch_store,
    write_patch_store,
)

__all__ = [
    "PATCH_TABLE_COLUMNS",
    "UNKNOWN_LABEL",
    "PatchRecord",
    "PatchStore",
    "ScanArtifacts",
    "PipelineConfig",
    "concat_patch_stores",
    "crop_patch",
    "decode_patch",
    "encode_patch",
    "extract_grid",
    "filter_by_coverage",
    "label_from_fraction",
    "label_patch",
    "label_patches",
    "luminance",
    "overlap_area",
    "patch_table",
    "patches_from_table",
    "read_patch_store",
    "read_patch_table",
    "resample_to_spacing",
    "split_disjoint_sets",
    "subset_of",
    "tile_scan",
    "tile_to_disk",
    "tissue_mask",
    "write_patch_store",
]
