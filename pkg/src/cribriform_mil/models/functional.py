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
"""Network primitives with hand-derived reverse-mode gradients.

Every layer is a `torch.autograd.Function` whose `forward` runs under no-grad and whose `backward`
implements the analytic derivative, so the only gradient code in the network is the code below.
Inputs are 2-D `(batch, features)` unless stated otherwise.
"""

from __future__ import annotations

import torch
from torch.autograd import Function

PROB_EPS = 1e-7


class LinearFunction(Function):
    """`y = x W^T + b`."""

    @staticmethod
    def forward(ctx, x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor):
        ctx.save_for_backward(x, weight)
        return x @ weight.t() + bias

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        x, weight = ctx.saved_tensors
        return grad_out @ weight, grad_out.t() @ x, grad_out.sum(dim=0)


class LayerNormFunction(Function):
    """Normalisation over the last dimension with affine `gamma`, `beta` (biased variance)."""

    @staticmethod
    def forward(ctx, x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5):
        mean = x.mean(dim=-1, keepdim=True)
        var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
        inv_std = 1.0 / torch.sqrt(var + eps)
        x_hat = (x - mean) * inv_std
        ctx.save_for_backward(x_hat, inv_std, gamma)
        return x_hat * gamma + beta

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        x_hat, inv_std, gamma = ctx.saved_tensors
        d = x_hat.shape[-1]
        grad_x_hat = grad_out * gamma
        grad_x = (
            inv_std
            / d
            * (
                d * grad_x_hat
                - grad_x_hat.sum(dim=-1, keepdim=True)
                - x_hat * (grad_x_hat * x_hat).sum(dim=-1, keepdim=True)
            )
        )
        return grad_x, (grad_out * x_hat).sum(dim=0), grad_out.sum(dim=0), None


class ReLUFunction(Function):
    @staticmethod
    def forward(ctx, x: torch.Tensor):
        mask = x > 0
        ctx.save_for_backward(mask)
        return x * mask

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        (mask,) = ctx.saved_tensors
        return grad_out * mask


class SigmoidFunction(Function):
    @staticmethod
    def forward(ctx, x: torch.Tensor):
        out = torch.sigmoid(x)
        ctx.save_for_backward(out)
        return out

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        (out,) = ctx.saved_tensors
        return grad_out * out * (1 - out)


class DropoutFunction(Function):
    """Multiply by a precomputed mask (zeros and `1 / (1 - p)`)."""

    @staticmethod
    def forward(ctx, x: torch.Tensor, mask: torch.Tensor):
        ctx.save_for_backward(mask)
        return x * mask

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        (mask,) = ctx.saved_tensors
        return grad_out * mask, None


class GatedAttentionFunction(Function):
    r"""Gated attention pooling of a bag `h` of shape `(K, D)`.

    $$
        a = \mathrm{softmax}\big(w^\top (\tanh(V h_k) \odot \sigma(U h_k))\big), \quad z = \sum_k a_k h_k
    $$

    with `V`, `U` of shape `(L, D)` and `w` of shape `(L,)`. Returns `(a, z)`.
    """

    @staticmethod
    def forward(ctx, h: torch.Tensor, V: torch.Tensor, U: torch.Tensor, w: torch.Tensor):
        tanh_part = torch.tanh(h @ V.t())
        gate = torch.sigmoid(h @ U.t())
        scores = (tanh_part * gate) @ w
        weights = torch.softmax(scores - scores.max(), dim=0)
        pooled = weights @ h
        ctx.save_for_backward(h, V, U, w, tanh_part, gate, weights)
        return weights, pooled

    @staticmethod
    def backward(ctx, grad_weights: torch.Tensor, grad_pooled: torch.Tensor):
        h, V, U, w, tanh_part, gate, weights = ctx.saved_tensors
        if grad_weights is None:
            grad_weights = torch.zeros_like(weights)
        if grad_pooled is None:
            grad_pooled = torch.zeros(h.shape[1], dtype=h.dtype, device=h.device)
        # z = a^T h
        grad_h = torch.outer(weights, grad_pooled)
        grad_a = grad_weights + h @ grad_pooled
        # softmax Jacobian
        grad_scores = weights * (grad_a - (weights * grad_a).sum())
        gated = tanh_part * gate
        grad_w = gated.t() @ grad_scores
        grad_gated = torch.outer(grad_scores, w)
        grad_pre_tanh = grad_gated * gate * (1 - tanh_part**2)
        grad_pre_gate = grad_gated * tanh_part * gate * (1 - gate)
        grad_V = grad_pre_tanh.t() @ h
        grad_U = grad_pre_gate.t() @ h
        grad_h = grad_h + grad_pre_tanh @ V + grad_pre_gate @ U
        return grad_h, grad_V, grad_U, grad_w


class WeightedBCEFunction(Function):
    """Mean of `-(pos_weight * y * log p + (1 - y) * log(1 - p))` with `p` clamped to `[1e-7, 1 - 1e-7]`."""

    @staticmethod
    def forward(ctx, p: torch.Tensor, y: torch.Tensor, pos_weight: float):
        clamped = p.clamp(PROB_EPS, 1 - PROB_EPS)
        losses = -(pos_weight * y * torch.log(clamped) + (1 - y) * torch.log(1 - clamped))
        inside = (p >= PROB_EPS) & (p <= 1 - PROB_EPS)
        ctx.save_for_backward(clamped, y, inside)
        ctx.pos_weight = pos_weight
        return losses.mean()

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        clamped, y, inside = ctx.saved_tensors
        n = clamped.numel()
        grad_p = -(ctx.pos_weight * y / clamped - (1 - y) / (1 - clamped)) / n
        return grad_out * grad_p * inside, None, None


def linear(x, weight, bias):
    return LinearFunction.apply(x, weight, bias)


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    return LayerNormFunction.apply(x, gamma, beta, eps)


def relu(x):
    return ReLUFunction.apply(x)


def sigmoid(x):
    return SigmoidFunction.apply(x)


def dropout(x, mask):
    return DropoutFunction.apply(x, mask)


def gated_attention(h, V, U, w):
    return GatedAttentionFunction.apply(h, V, U, w)


def weighted_bce(p, y, pos_weight: float = 1.0):
    return WeightedBCEFunction.apply(p, y, pos_weight)
