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
import torch

from cribriform_mil.core.exceptions import InvariantViolation
from cribriform_mil.models.functional import weighted_bce


def pos_weight_from_labels(labels) -> float:
    """Inverse positive frequency `#negative / #positive`.

    Raises:
        InvariantViolation: If only one class is present.
    """
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvariantViolation(f"single-class labels ({n_pos} positive, {n_neg} negative)")
    return n_neg / n_pos


class WeightedBCELoss(torch.nn.Module):
    """Binary cross-entropy on probabilities with positive examples weighted by `pos_weight`.

    $$
        \\ell(p, y) = -\\big(w_+ \\, y \\log p + (1 - y) \\log (1 - p)\\big)
    $$

    averaged over the batch, with `p` clamped to `[1e-7, 1 - 1e-7]`.
    """

    def __init__(self, pos_weight: float = 1.0):
        super().__init__()
        if not pos_weight > 0:
            raise ValueError(f"pos_weight must be positive, got {pos_weight}")
        self.pos_weight = float(pos_weight)

    def get_config_dict(self):
        return {"pos_weight": self.pos_weight}

    def forward(self, probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        probabilities = probabilities.reshape(-1)
        labels = labels.reshape(-1).to(probabilities.dtype)
        loss = weighted_bce(probabilities, labels, self.pos_weight)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss.item()}")
        return loss
