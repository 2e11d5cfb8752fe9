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

from .augment import AUGMENTATIONS


@dataclass(frozen=True)
class TrainRunConfig:
    """Hyper-parameters of the two-step cross-validated training.

    Attributes:
        patch_epochs (int): Epochs of the patch-level classifier (step one).
        slide_epochs (int): Epochs of the slide-level MIL model (step two).
        patch_batch (int): Patches per step-one batch.
        slide_batch (int): Bags per step-two update (only 1 is supported).
        max_bag_size (int): Training bags larger than this are subsampled without replacement.
        folds (int): Number of patient-grouped cross-validation folds.
        seed (int): Root seed.
        augmentations (tuple[str, ...]): Enabled pixel-side training augmentations.
        augment_views (int): Augmented descriptor views precomputed per patch.
        patch_initial_lr, patch_peak_lr, patch_final_lr (float): One-cycle schedule of step one.
        patch_weight_decay (float): AdamW decoupled weight decay.
        slide_lr (float): Constant RAdam learning rate of step two.
        slide_weight_decay (float): RAdam weight decay.
        operating_point (float): Threshold used for checkpoint selection.
    """

    patch_epochs: int = 8
    slide_epochs: int = 32
    patch_batch: int = 64
    slide_batch: int = 1
    max_bag_size: int = 2200
    folds: int = 10
    seed: int = 0
    augmentations: tuple[str, ...] = AUGMENTATIONS
    augment_views: int = 4
    patch_initial_lr: float = 1e-5
    patch_peak_lr: float = 1e-4
    patch_final_lr: float = 1e-6
    patch_weight_decay: float = 1e-2
    slide_lr: float = 3e-5
    slide_weight_decay: float = 1e-5
    operating_point: float = 0.5

    def __post_init__(self):
        for name in ("patch_batch", "slide_batch", "max_bag_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("patch_epochs", "slide_epochs", "augment_views"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.slide_batch != 1:
            raise ConfigError(f"slide_batch must be 1 (one bag per update), got {self.slide_batch}")
        if self.folds < 2:
            raise ConfigError(f"folds must be at least 2, got {self.folds}")
        unknown = sorted(set(self.augmentations) - set(AUGMENTATIONS))
        if unknown:
            raise ConfigError(f"unknown augmentation '{unknown[0]}' (known: {', '.join(AUGMENTATIONS)})")
        for name in ("patch_initial_lr", "patch_peak_lr", "patch_final_lr", "slide_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.operating_point < 1.0:
            raise ConfigError(f"operating_point must lie in (0, 1), got {self.operating_point}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentations"] = list(self.augmentations)
        return d
