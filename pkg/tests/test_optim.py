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

from cribriform_mil.models import (
    OptimizerKind,
    RectifiedAdam,
    adamw_step,
    make_onecycle_scheduler,
    make_optimizer,
    onecycle_lr,
    radam_step,
)


def _param(value: float = 1.0) -> torch.nn.Parameter:
    return torch.nn.Parameter(torch.tensor([value], dtype=torch.float64))


def test_onecycle_schedule():
    steps_per_epoch, total = 10, 100
    assert onecycle_lr(0, total, steps_per_epoch) == pytest.approx(1e-5)
    assert onecycle_lr(steps_per_epoch, total, steps_per_epoch) == pytest.approx(1e-4), "Peak at the end of epoch one"
    assert onecycle_lr(total, total, steps_per_epoch) == pytest.approx(1e-6)

    lrs = [onecycle_lr(s, total, steps_per_epoch) for s in range(total + 1)]
    assert all(a <= b for a, b in zip(lrs[:steps_per_epoch], lrs[1 : steps_per_epoch + 1])), "Warm-up is monotone"
    assert all(a >= b for a, b in zip(lrs[steps_per_epoch:], lrs[steps_per_epoch + 1 :])), "Anneal is monotone"

    # a single epoch warms up over its first half
    assert onecycle_lr(5, 10, 10) == pytest.approx(1e-4)
    # a one-step run still starts at the initial rate
    assert onecycle_lr(0, 1, 1) == pytest.approx(1e-5)
    assert onecycle_lr(1, 1, 1) == pytest.approx(1e-4)
    assert onecycle_lr(0, 0, 1) == pytest.approx(1e-5)
    with pytest.raises(ValueError):
        onecycle_lr(11, 10, 10)


def test_onecycle_scheduler_follows_schedule():
    param = _param()
    state = make_optimizer([param], "adamw", lr=1e-3)
    scheduler = make_onecycle_scheduler(state, total_steps=20, steps_per_epoch=5)
    seen = [scheduler.get_last_lr()[0]]
    for _ in range(20):
        param.grad = torch.ones_like(param)
        adamw_step(state)
        scheduler.step()
        seen.append(scheduler.get_last_lr()[0])
    expected = [onecycle_lr(s, 20, 5) for s in range(21)]
    assert seen == pytest.approx(expected)


def test_adamw_first_step():
    param = _param(1.0)
    state = make_optimizer([param], OptimizerKind.ADAMW, lr=0.1, weight_decay=0.01)
    adamw_step(state, [torch.tensor([0.5], dtype=torch.float64)])
    # decoupled decay, then a bias-corrected step of size lr in the gradient's direction
    assert param.item() == pytest.approx(1.0 * (1 - 0.1 * 0.01) - 0.1, abs=1e-6)
    assert state.step == 1
    first, second = state.moments(param)
    assert first.item() == pytest.approx(0.05) and second.item() == pytest.approx(0.00025)


def test_radam_falls_back_to_momentum_steps():
    param = _param(1.0)
    state = make_optimizer([param], "radam", lr=0.1, weight_decay=0.0)
    zeros_first, _ = state.moments(param)
    assert zeros_first.item() == 0.0
    radam_step(state, [torch.tensor([0.5], dtype=torch.float64)])
    # the variance rectification is undefined on the first step, so the update is lr * m_hat
    assert param.item() == pytest.approx(1.0 - 0.1 * 0.5)


def _closed_form_radam(value: float, grad: float, lr: float, steps: int, beta1=0.9, beta2=0.999, eps=1e-8):
    rho_inf = 2 / (1 - beta2) - 1
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad**2
        m_hat, v_hat = m / (1 - beta1**t), v / (1 - beta2**t)
        rho_t = rho_inf - 2 * t * beta2**t / (1 - beta2**t)
        if rho_t > 4:
            r = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
            value -= lr * r * m_hat / (math.sqrt(v_hat) + eps)
        else:
            value -= lr * m_hat
        trajectory.append(value)
    return trajectory


def test_radam_matches_closed_form_first_steps():
    param = _param(1.0)
    state = make_optimizer([param], "radam", lr=0.1, weight_decay=0.0)
    seen = []
    for _ in range(6):
        radam_step(state, [torch.tensor([0.5], dtype=torch.float64)])
        seen.append(param.item())
    assert seen == pytest.approx(_closed_form_radam(1.0, 0.5, 0.1, 6), abs=1e-10)
    # steps 1-4 are momentum steps; step 5 (variance length just below 5) is already rectified
    assert seen[3] == pytest.approx(0.8)
    assert seen[4] == pytest.approx(0.7982688497179913, abs=1e-7)
    assert state.step == 6


def test_radam_rectification_threshold():
    assert RectifiedAdam.rectification(4, 0.999) is None
    r5 = RectifiedAdam.rectification(5, 0.999)
    assert r5 is not None and 0.0 < r5 < 0.05
    assert RectifiedAdam.rectification(1000, 0.999) < 1.0


def test_radam_couples_weight_decay_into_gradient():
    param = _param(2.0)
    state = make_optimizer([param], OptimizerKind.RADAM, lr=0.1, weight_decay=0.25)
    radam_step(state, [torch.tensor([0.0], dtype=torch.float64)])
    # the effective gradient is wd * p = 0.5 and the first step is lr * m_hat
    assert param.item() == pytest.approx(2.0 - 0.1 * 0.5)
    first, _ = state.moments(param)
    assert first.item() == pytest.approx(0.05)


def test_optimizer_guards():
    param = _param()
    state = make_optimizer([param], "adamw", lr=0.1)
    with pytest.raises(FloatingPointError):
        adamw_step(state, [torch.tensor([float("nan")], dtype=torch.float64)])
    with pytest.raises(AssertionError):
        radam_step(state, [torch.tensor([1.0], dtype=torch.float64)])
    with pytest.raises(AssertionError):
        adamw_step(state, [torch.ones(2, dtype=torch.float64)])
    with pytest.raises(ValueError):
        make_optimizer([param], OptimizerKind.NONE, lr=0.1)
    assert make_optimizer([param], "radam", lr=0.1).optimizer.param_groups[0]["weight_decay"] == 1e-5
