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

from .phase import (
    LOW_CONFIDENCE_RATIO,
    ShiftEstimate,
    correlation_surface,
    downsample_mask,
    next_pow2,
    phase_correlate,
    register_scans,
    transfer_annotations,
    translate,
)

__all__ = [
    "LOW_CONFIDENCE_RATIO",
    "ShiftEstimate",
    "correlation_surface",
    "downsample_mask",
    "next_pow2",
    "phase_correlate",
    "register_scans",
    "transfer_annotations",
    "translate",
]
