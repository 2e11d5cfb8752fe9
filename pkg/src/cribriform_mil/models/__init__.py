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

from .checkpoint import Checkpoint, load_checkpoint, load_module, module_arrays, save_checkpoint
from .descriptor import (
    DESCRIPTOR_DIM,
    HISTOGRAM_BLOCKS,
    LUMINANCE_BLOCK,
    MAGNITUDE_BLOCK,
    ORIENTATION_BLOCK,
    TOPOLOGY_BLOCK,
    descriptor_batch,
    patch_descriptor,
)
from .mil import (
    GatedAttention,
    PatchClassifier,
    PatchEncoder,
    SlideMIL,
    make_patch_classifier,
    make_slide_model,
)
from .optim import (
    OptimizerKind,
    OptimizerState,
    RectifiedAdam,
    adamw_step,
    make_onecycle_scheduler,
    make_optimizer,
    onecycle_lr,
    radam_step,
)

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "load_module",
    "module_arrays",
    "save_checkpoint",
    "DESCRIPTOR_DIM",
    "HISTOGRAM_BLOCKS",
    "LUMINANCE_BLOCK",
    "MAGNITUDE_BLOCK",
    "ORIENTATION_BLOCK",
    "TOPOLOGY_BLOCK",
    "descriptor_batch",
    "patch_descriptor",
    "GatedAttention",
    "PatchClassifier",
    "PatchEncoder",
    "SlideMIL",
    "make_patch_classifier",
    "make_slide_model",
    "OptimizerKind",
    "OptimizerState",
    "RectifiedAdam",
    "adamw_step",
    "make_onecycle_scheduler",
    "make_optimizer",
    "onecycle_lr",
    "radam_step",
]
