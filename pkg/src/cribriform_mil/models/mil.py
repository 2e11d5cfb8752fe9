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
import math

import numpy as np
import torch
from torch import nn

from . import functional as F
from .descriptor import DESCRIPTOR_DIM

logger = logging.getLogger(__name__)

FEATURE_DIM = 32
ENCODER_HIDDEN_DIM = 64
ATTENTION_DIM = 16
HEAD_HIDDEN_DIM = 128
HEAD_DROPOUT = 0.1


def _uniform(shape: tuple[int, ...], bound: float, generator: torch.Generator | None) -> nn.Parameter:
    return nn.Parameter(torch.empty(shape).uniform_(-bound, bound, generator=generator))


class Linear(nn.Module):
    def __init__(self, in_features: int, out_features: int, generator: torch.Generator | None = None):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = _uniform((out_features, in_features), bound, generator)
        self.bias = _uniform((out_features,), bound, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(dim))
        self.beta = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class ReLU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(x)


class Sigmoid(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.sigmoid(x)


class Dropout(nn.Module):
    """Inverted dropout; the identity in eval mode. Masks are drawn from `self.generator` when set."""

    def __init__(self, p: float = HEAD_DROPOUT):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        self.p = p
        self.generator: torch.Generator | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.p == 0.0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.p
        return F.dropout(x, keep.to(x.dtype) / (1.0 - self.p))


class PatchEncoder(nn.Module):
    """Descriptor encoder `40 -> 64 -> 32` with layer normalisation and ReLU.

    Inputs are standardised with the non-trainable `input_mean` / `input_std` buffers, which are fitted on
    training descriptors and travel with the weights.
    """

    def __init__(
        self,
        in_dim: int = DESCRIPTOR_DIM,
        hidden_dim: int = ENCODER_HIDDEN_DIM,
        out_dim: int = FEATURE_DIM,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.register_buffer("input_mean", torch.zeros(in_dim))
        self.register_buffer("input_std", torch.ones(in_dim))
        self.layers = nn.Sequential(
            Linear(in_dim, hidden_dim, generator),
            LayerNorm(hidden_dim),
            ReLU(),
            Linear(hidden_dim, out_dim, generator),
            LayerNorm(out_dim),
            ReLU(),
        )
        self.out_dim = out_dim

    def set_standardisation(self, descriptors: np.ndarray, min_std: float = 1e-6):
        """Fit the input standardisation on an `(n, in_dim)` array of training descriptors."""
        mean = np.asarray(descriptors, dtype=np.float64).mean(axis=0)
        std = np.maximum(np.asarray(descriptors, dtype=np.float64).std(axis=0), min_std)
        self.input_mean.copy_(torch.as_tensor(mean, dtype=self.input_mean.dtype))
        self.input_std.copy_(torch.as_tensor(std, dtype=self.input_std.dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers((x - self.input_mean) / self.input_std)


class PatchClassifier(nn.Module):
    """Step-one model: encoder followed by a linear head and a sigmoid, one probability per patch."""

    def __init__(self, encoder: PatchEncoder | None = None, generator: torch.Generator | None = None):
        super().__init__()
        self.encoder = encoder if encoder is not None else PatchEncoder(generator=generator)
        self.head = Linear(self.encoder.out_dim, 1, generator)
        self.sigmoid = Sigmoid()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.sigmoid(self.head(self.encoder(x))).squeeze(-1)


class GatedAttention(nn.Module):
    """Gated attention pooling with projections `V`, `U` (`L x D`) and scoring vector `w` (`L`)."""

    def __init__(
        self, dim: int = FEATURE_DIM, attention_dim: int = ATTENTION_DIM, generator: torch.Generator | None = None
    ):
        super().__init__()
        self.V = _uniform((attention_dim, dim), 1.0 / math.sqrt(dim), generator)
        self.U = _uniform((attention_dim, dim), 1.0 / math.sqrt(dim), generator)
        self.w = _uniform((attention_dim,), 1.0 / math.sqrt(attention_dim), generator)

    def forward(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return the attention weights `(K,)` and the pooled feature `(D,)` of a bag `h` of shape `(K, D)`."""
        if h.shape[0] == 0:
            raise ValueError("cannot pool an empty bag")
        return F.gated_attention(h, self.V, self.U, self.w)


class SlideMIL(nn.Module):
    """Step-two model: shared encoder, gated attention pooling and a fully connected slide head
    (`32 -> 128 -> 1` with layer normalisation, ReLU, dropout and a sigmoid).
    """

    def __init__(
        self,
        encoder: PatchEncoder | None = None,
        attention_dim: int = ATTENTION_DIM,
        hidden_dim: int = HEAD_HIDDEN_DIM,
        dropout: float = HEAD_DROPOUT,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.encoder = encoder if encoder is not None else PatchEncoder(generator=generator)
        self.attention = GatedAttention(self.encoder.out_dim, attention_dim, generator)
        self.dropout = Dropout(dropout)
        self.head = nn.Sequential(
            Linear(self.encoder.out_dim, hidden_dim, generator),
            LayerNorm(hidden_dim),
            ReLU(),
            self.dropout,
            Linear(hidden_dim, 1, generator),
            Sigmoid(),
        )

    def set_dropout_generator(self, generator: torch.Generator | None):
        self.dropout.generator = generator

    def load_patch_encoder(self, patch_model: PatchClassifier):
        """Initialise the encoder (weights and standardisation) from a trained patch classifier."""
        self.encoder.load_state_dict(patch_model.encoder.state_dict())

    def forward(self, bag: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return the slide probability (0-d) and the attention weights of a bag of descriptors `(K, 40)`."""
        features = self.encoder(bag)
        weights, pooled = self.attention(features)
        return self.head(pooled.unsqueeze(0))[0, 0], weights


def make_patch_classifier(generator: torch.Generator | None = None) -> PatchClassifier:
    return PatchClassifier(generator=generator)


def make_slide_model(generator: torch.Generator | None = None) -> SlideMIL:
    return SlideMIL(generator=generator)
