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

import math

import pytest
import torch
from torch.autograd import gradcheck

from cribriform_mil.core import InvariantViolation
from cribriform_mil.losses import WeightedBCELoss, pos_weight_from_labels
from cribriform_mil.models import make_patch_classifier, make_slide_model
from cribriform_mil.models import functional as F
from cribriform_mil.utils import make_torch_generator


@pytest.fixture
def generator():
    return make_torch_generator(0, "test")


def _randn(generator, *shape):
    return torch.randn(*shape, generator=generator, dtype=torch.float64).requires_grad_(True)


def test_layer_gradients(generator):
    x, weight, bias = _randn(generator, 5, 4), _randn(generator, 3, 4), _randn(generator, 3)
    assert gradcheck(F.linear, (x, weight, bias)), "Linear gradient mismatch"

    gamma, beta = _randn(generator, 4), _randn(generator, 4)
    assert gradcheck(lambda x, g, b: F.layer_norm(x, g, b), (x, gamma, beta)), "LayerNorm gradient mismatch"

    assert gradcheck(F.sigmoid, (x,)), "Sigmoid gradient mismatch"
    # keep ReLU inputs away from the kink
    away = (x.detach() + torch.sign(x.detach()) * 0.1).requires_grad_(True)
    assert gradcheck(F.relu, (away,)), "ReLU gradient mismatch"

    mask = (torch.rand(5, 4, generator=generator, dtype=torch.float64) > 0.5).double() * 2.0
    assert gradcheck(F.dropout, (x, mask)), "Dropout gradient mismatch"


def test_gated_attention_gradients(generator):
    h, V, U, w = _randn(generator, 6, 4), _randn(generator, 3, 4), _randn(generator, 3, 4), _randn(generator, 3)
    assert gradcheck(F.gated_attention, (h, V, U, w)), "Gated attention gradient mismatch"

    weights, pooled = F.gated_attention(h, V, U, w)
    assert torch.isclose(weights.sum(), torch.tensor(1.0, dtype=torch.float64))
    assert torch.allclose(pooled, weights @ h)


def test_weighted_bce():
    p = torch.tensor([0.5], dtype=torch.float64)
    y = torch.tensor([1.0], dtype=torch.float64)
    assert WeightedBCELoss(pos_weight=2.0)(p, y).item() == pytest.approx(2 * math.log(2))

    # the loss is finite and flat outside the clamp
    p = torch.tensor([0.0, 0.3, 1.0], dtype=torch.float64, requires_grad=True)
    loss = F.weighted_bce(p, torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), 1.0)
    assert torch.isfinite(loss)
    loss.backward()
    assert p.grad[0] == 0 and p.grad[2] == 0
    assert p.grad[1] == pytest.approx(1 / 0.7 / 3)

    inside = torch.tensor([0.2, 0.7, 0.9], dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
    assert gradcheck(lambda q: F.weighted_bce(q, labels, 3.0), (inside,))

    with pytest.raises(ValueError):
        WeightedBCELoss(pos_weight=0.0)


def test_pos_weight():
    assert pos_weight_from_labels([1, 0, 0, 0]) == 3.0
    with pytest.raises(InvariantViolation):
        pos_weight_from_labels([1, 1])


def _central_difference(loss_fn, param: torch.nn.Parameter, index: tuple, h: float = 1e-6) -> float:
    with torch.no_grad():
        original = param[index].item()
        param[index] = original + h
        upper = loss_fn().item()
        param[index] = original - h
        lower = loss_fn().item()
        param[index] = original
    return (upper - lower) / (2 * h)


def test_slide_model_gradients_match_finite_differences(generator):
    model = make_slide_model(make_torch_generator(0, "model")).double().eval()
    bag = torch.randn(7, 40, generator=generator, dtype=torch.float64)
    loss_fn = WeightedBCELoss(pos_weight=1.5)
    target = torch.tensor([1.0], dtype=torch.float64)

    def compute_loss():
        probability, _ = model(bag)
        return loss_fn(probability.reshape(1), target)

    model.zero_grad()
    compute_loss().backward()
    checked = [
        (model.attention.V, (0, 0)),
        (model.attention.w, (2,)),
        (model.head[0].weight, (1, 3)),
        (model.head[4].bias, (0,)),
        (model.encoder.layers[0].weight, (5, 7)),
        (model.encoder.layers[1].gamma, (3,)),
    ]
    for param, index in checked:
        numeric = _central_difference(compute_loss, param, index)
        analytic = param.grad[index].item()
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7), f"Gradient mismatch at {index}"

    # the whole network with respect to its input
    assert gradcheck(lambda b: model(b)[0], (bag.clone().requires_grad_(True),))


def test_models(generator):
    patch_model = make_patch_classifier(make_torch_generator(0, "patch"))
    probabilities = patch_model(torch.randn(9, 40, generator=generator))
    assert probabilities.shape == (9,) and ((probabilities > 0) & (probabilities < 1)).all()

    slide_model = make_slide_model(make_torch_generator(0, "slide"))
    slide_model.load_patch_encoder(patch_model)
    for a, b in zip(slide_model.encoder.parameters(), patch_model.encoder.parameters()):
        assert torch.equal(a, b), "The slide encoder should start from the patch encoder"

    slide_model.eval()
    probability, weights = slide_model(torch.randn(11, 40, generator=generator))
    assert probability.dim() == 0 and weights.shape == (11,)
    with pytest.raises(ValueError):
        slide_model(torch.zeros(0, 40))

    # same generator stream, same initial weights
    again = make_slide_model(make_torch_generator(0, "slide"))
    again.load_patch_encoder(patch_model)
    assert all(torch.equal(a, b) for a, b in zip(again.parameters(), slide_model.parameters()))
