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

from dataclasses import asdict, dataclass

from cribriform_mil.core.exceptions import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    """Patch geometry and the thresholds used when tiling a scan.

    Attributes:
        patch_size (int): Patch width and height in pixels.
        stride (int): Grid step in pixels; always half the patch size (50% overlap).
        target_spacing (float): Pixel spacing (µm/px) patches are extracted at.
        min_tissue_fraction (float): Patches with less tissue than this are discarded.
        patch_positive_fraction (float): Patches with strictly more annotated area than this are positive.
    """

    patch_size: int = 256
    stride: int = 128
    target_spacing: float = 1.0
    min_tissue_fraction: float = 0.10
    patch_positive_fraction: float = 0.02

    def __post_init__(self):
        if self.patch_size < 2 or self.patch_size % 2:
            raise ConfigError(f"patch_size must be a positive even number, got {self.patch_size}")
        if self.stride * 2 != self.patch_size:
            raise ConfigError(f"stride must be patch_size / 2 = {self.patch_size // 2}, got {self.stride}")
        if not self.target_spacing > 0:
            raise ConfigError(f"target_spacing must be positive, got {self.target_spacing}")
        for name in ("min_tissue_fraction", "patch_positive_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")

    @property
    def patch_area(self) -> int:
        return self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        return asdict(self)
