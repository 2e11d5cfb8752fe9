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

import numpy as np
import pytest

from cribriform_mil.core import ConfigError, MissingInputError
from cribriform_mil.tiling import (
    UNKNOWN_LABEL,
    PatchRecord,
    PipelineConfig,
    ScanArtifacts,
    extract_grid,
    filter_by_coverage,
    label_patch,
    label_patches,
    overlap_area,
    patch_table,
    patches_from_table,
    read_patch_table,
    resample_to_spacing,
    split_disjoint_sets,
    tile_scan,
    tile_to_disk,
    tissue_mask,
)


@pytest.fixture
def small_cfg():
    return PipelineConfig(patch_size=100, stride=50)


def test_pipeline_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(patch_size=256, stride=100)
    with pytest.raises(ConfigError):
        PipelineConfig(patch_size=255, stride=127)
    with pytest.raises(ConfigError):
        PipelineConfig(min_tissue_fraction=1.0)
    assert PipelineConfig().to_dict()["patch_size"] == 256


def test_extract_grid():
    cfg = PipelineConfig()
    patches = extract_grid(512, 384, cfg)
    assert len(patches) == 6, "A 512 x 384 image holds 3 x 2 patches"
    assert [(p.i, p.j) for p in patches] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)], "Row-major order"
    assert (patches[4].x, patches[4].y) == (128, 128)
    assert len(extract_grid(1536, 1536, cfg)) == 121

    with pytest.raises(ValueError):
        extract_grid(200, 512, cfg)


def test_split_disjoint_sets():
    patches = extract_grid(512, 384, PipelineConfig())
    set_a, set_b = split_disjoint_sets(patches)
    assert {(p.i, p.j) for p in set_a} == {(0, 0), (0, 2)}
    assert {(p.i, p.j) for p in set_b} == {(1, 1)}

    # no two patches of one set overlap
    patches = extract_grid(1536, 1536, PipelineConfig())
    for subset in split_disjoint_sets(patches):
        for k, a in enumerate(subset):
            for b in subset[k + 1 :]:
                assert overlap_area(a, b, 256) == 0, f"Patches {a.key} and {b.key} overlap"
    assert overlap_area(patches[0], patches[1], 256) == 256 * 128


def test_coverage_threshold_is_inclusive(small_cfg):
    patches = [PatchRecord(0, 0, 0, 0)]
    mask = np.zeros((100, 100), dtype=bool)
    mask[:10, :] = True  # exactly 1000 px = 10%
    kept = filter_by_coverage(patches, mask, small_cfg)
    assert len(kept) == 1, "A patch at exactly the minimum tissue fraction is kept"
    assert kept[0].tissue_fraction == 0.1

    mask[:9, :] = True
    mask[9, :] = False  # 900 px
    assert filter_by_coverage(patches, mask, small_cfg) == []


def test_patch_label_is_strict(small_cfg):
    patch = PatchRecord(0, 0, 0, 0)
    annotation = np.zeros((100, 100), dtype=np.uint8)
    annotation[:2, :] = 255  # exactly 200 px = 2%
    assert label_patch(patch, annotation, small_cfg) == 0, "Exactly 2% annotated is negative"
    annotation[2, :10] = 255  # 210 px
    assert label_patch(patch, annotation, small_cfg) == 1

    labelled = label_patches([patch], annotation, small_cfg)
    assert labelled[0].patch_label == 1 and labelled[0].annotated_fraction == 0.021
    assert label_patches([patch], None, small_cfg)[0].patch_label == UNKNOWN_LABEL


def test_tissue_mask():
    image = np.full((64, 64, 3), 240, dtype=np.uint8)
    image[:, :32] = 100
    mask = tissue_mask(image)
    assert mask[:, :32].all() and not mask[:, 32:].any(), "Dark pixels are tissue"
    assert not tissue_mask(np.full((8, 8, 3), 200, dtype=np.uint8)).any(), "A flat image has no tissue"


def test_tile_scan_and_table(small_cfg):
    image = np.full((300, 300, 3), 240, dtype=np.uint8)
    image[:150, :150] = 90
    annotation = np.zeros((300, 300), dtype=np.uint8)
    annotation[:50, :50] = 255
    patches = tile_scan(image, small_cfg, annotation)
    assert patches, "The tissue block should produce patches"
    assert all(p.tissue_fraction >= 0.1 for p in patches)
    assert all(p.x < 150 and p.y < 150 for p in patches), "Only patches touching tissue are kept"
    assert patches[0].patch_label == 1

    frame = patch_table(patches)
    assert set(frame["subset"]) <= {"A", "B", "-"}
    assert patches_from_table(frame) == patches

    with pytest.raises(AssertionError):
        tile_scan(image, small_cfg, annotation[:100])


def test_tile_to_disk(tmp_path, small_cfg):
    image = np.full((200, 200, 3), 240, dtype=np.uint8)
    image[20:180, 20:180] = 80
    artifacts = ScanArtifacts.at(str(tmp_path), "scan-1")
    assert not artifacts.exist()
    patches = tile_to_disk(image, small_cfg, artifacts, descriptor_fn=lambda crop: np.full(40, crop.mean()))
    assert artifacts.exist()
    assert np.load(artifacts.descriptors).shape == (len(patches), 40)
    loaded = read_patch_table(artifacts)
    assert [(p.i, p.j, p.x, p.y) for p in loaded] == [(p.i, p.j, p.x, p.y) for p in patches]
    assert np.allclose([p.tissue_fraction for p in loaded], [p.tissue_fraction for p in patches])
    assert all(p.patch_label == UNKNOWN_LABEL for p in patches), "Unannotated scans carry unknown labels"

    with pytest.raises(MissingInputError):
        read_patch_table(ScanArtifacts.at(str(tmp_path), "absent"))


def test_resample_to_spacing():
    image = np.zeros((40, 60, 3), dtype=np.uint8)
    assert resample_to_spacing(image, 1.0, 1.0) is image
    assert resample_to_spacing(image, 0.5, 1.0).shape == (20, 30, 3), "Finer scans shrink to the target spacing"
    mask = np.zeros((40, 60), dtype=np.uint8)
    mask[10:30, 10:50] = 255
    assert set(np.unique(resample_to_spacing(mask, 2.0, 1.0, nearest=True))) == {0, 255}
    with pytest.raises(ValueError):
        resample_to_spacing(image, 0.0, 1.0)
