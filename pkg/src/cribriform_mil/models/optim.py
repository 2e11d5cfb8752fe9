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

import enum
import math
from dataclasses import dataclass

import torch
from torch.optim.lr_scheduler import LambdaLR


class OptimizerKind(int, enum.Enum):
    """Optimiser tag; the integer value is the one stored in checkpoint files."""

    NONE = 0
    ADAMW = 1
    RADAM = 2


ADAMW_WEIGHT_DECAY = 1e-2
RADAM_WEIGHT_DECAY = 1e-5


@dataclass
class OptimizerState:
    """Moments and step counter of one model's optimiser.

    The torch optimiser owns the per-parameter first and second moments; `step` counts applied updates.
    """

    kind: OptimizerKind
    params: list[torch.nn.Parameter]
    optimizer: torch.optim.Optimizer
    step: int = 0

    def moments(self, param: torch.nn.Parameter) -> tuple[torch.Tensor, torch.Tensor]:
        """First and second moment estimates of `param` (zeros before the first step)."""
        state = self.optimizer.state.get(param, {})
        if "exp_avg" not in state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state["exp_avg"], state["exp_avg_sq"]


RADAM_RECTIFICATION_THRESHOLD = 4.0


class RectifiedAdam(torch.optim.Optimizer):
    r"""Adam with variance rectification and L2-coupled weight decay.

    With $\rho_\infty = 2 / (1 - \beta_2) - 1$ and $\rho_t = \rho_\infty - 2 t \beta_2^t / (1 - \beta_2^t)$, a step
    with $\rho_t > 4$ is the rectified adaptive update

    $$
    p \leftarrow p - \eta \, r_t \, \hat{m}_t / (\sqrt{\hat{v}_t} + \epsilon), \quad
    r_t = \sqrt{\frac{(\rho_t - 4)(\rho_t - 2)\rho_\infty}{(\rho_\infty - 4)(\rho_\infty - 2)\rho_t}}
    $$

    and any earlier step is the momentum update $p \leftarrow p - \eta \hat{m}_t$.
    """

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        if lr < 0.0:
            raise ValueError(f"invalid learning rate {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"invalid betas {betas}")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))

    @staticmethod
    def rectification(t: int, beta2: float) -> float | None:
        """`r_t` of step `t` (1-based), or `None` while the variance length is at most 4."""
        rho_inf = 2.0 / (1.0 - beta2) - 1.0
        rho_t = rho_inf - 2.0 * t * beta2**t / (1.0 - beta2**t)
        if rho_t <= RADAM_RECTIFICATION_THRESHOLD:
            return None
        return math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for param in group["params"]:
                if param.grad is None:
                    continue
                grad = param.grad
                if group["weight_decay"] != 0.0:
                    grad = grad.add(param, alpha=group["weight_decay"])
                state = self.state[param]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(param)
                    state["exp_avg_sq"] = torch.zeros_like(param)
                state["step"] += 1
                t = state["step"]
                exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
                exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                m_hat = exp_avg / (1 - beta1**t)
                rect = self.rectification(t, beta2)
                if rect is None:
                    param.sub_(group["lr"] * m_hat)
                else:
                    v_hat = exp_avg_sq / (1 - beta2**t)
                    param.sub_(group["lr"] * rect * m_hat / (v_hat.sqrt() + group["eps"]))
        return loss


def make_optimizer(
    params, kind: OptimizerKind | str, lr: float, weight_decay: float | None = None
) -> OptimizerState:
    """Create an `OptimizerState` for AdamW (decoupled decay) or RAdam (L2-coupled decay)."""
    kind = OptimizerKind[kind.upper()] if isinstance(kind, str) else OptimizerKind(kind)
    params = [p for p in params if p.requires_grad]
    if kind == OptimizerKind.ADAMW:
        decay = ADAMW_WEIGHT_DECAY if weight_decay is None else weight_decay
        optimizer = torch.optim.AdamW(params, lr=lr, weight_decay=decay)
    elif kind == OptimizerKind.RADAM:
        decay = RADAM_WEIGHT_DECAY if weight_decay is None else weight_decay
        optimizer = RectifiedAdam(params, lr=lr, weight_decay=decay)
    else:
        raise ValueError(f"unsupported optimiser kind {kind}")
    return OptimizerState(kind=kind, params=params, optimizer=optimizer)


def _apply(state: OptimizerState, grads: list[torch.Tensor] | None, lr: float | None, weight_decay: float | None):
    if grads is not None:
        assert len(grads) == len(state.params), "one gradient per parameter"
        for param, grad in zip(state.params, grads):
            assert grad.shape == param.shape, f"gradient shape {tuple(grad.shape)} != {tuple(param.shape)}"
            param.grad = grad.detach().clone()
    for param in state.params:
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise FloatingPointError("non-finite gradient")
    for group in state.optimizer.param_groups:
        if lr is not None:
            group["lr"] = lr
        if weight_decay is not None:
            group["weight_decay"] = weight_decay
    state.optimizer.step()
    state.step += 1


def adamw_step(
    state: OptimizerState,
    grads: list[torch.Tensor] | None = None,
    lr: float | None = None,
    weight_decay: float | None = None,
):
    """One AdamW update: `p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.

    `grads` default to the gradients already stored on the parameters; `lr` / `weight_decay` default to the
    optimiser's current values.
    """
    assert state.kind == OptimizerKind.ADAMW, f"expected an AdamW state, got {state.kind.name}"
    _apply(state, grads, lr, weight_decay)


def radam_step(
    state: OptimizerState,
    grads: list[torch.Tensor] | None = None,
    lr: float | None = None,
    weight_decay: float | None = None,
):
    """One `RectifiedAdam` update; while the variance length is at most 4 the update is `lr * m_hat`."""
    assert state.kind == OptimizerKind.RADAM, f"expected a RAdam state, got {state.kind.name}"
    _apply(state, grads, lr, weight_decay)


def onecycle_lr(
    step: int,
    total_steps: int,
    steps_per_epoch: int,
    initial_lr: float = 1e-5,
    peak_lr: float = 1e-4,
    final_lr: float = 1e-6,
) -> float:
    """Learning rate of a one-cycle schedule at `step`.

    A cosine ramp from `initial_lr` to `peak_lr` over the first epoch, then a cosine anneal to `final_lr`
    at `total_steps`. Runs of a single epoch warm up over the first half (at least one step).
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step must lie in [0, {total_steps}], got {step}")
    if total_steps == 0:
        return initial_lr
    warmup = steps_per_epoch if steps_per_epoch < total_steps else max(1, total_steps // 2)
    if step <= warmup and warmup > 0:
        return peak_lr + (initial_lr - peak_lr) * (1 + math.cos(math.pi * step / warmup)) / 2
    t = (step - warmup) / (total_steps - warmup)
    return final_lr + (peak_lr - final_lr) * (1 + math.cos(math.pi * t)) / 2


def make_onecycle_scheduler(
    state: OptimizerState,
    total_steps: int,
    steps_per_epoch: int,
    initial_lr: float = 1e-5,
    peak_lr: float = 1e-4,
    final_lr: float = 1e-6,
) -> LambdaLR:
    """A `LambdaLR` following `onecycle_lr`, relative to a base learning rate of `peak_lr`."""
    for group in state.optimizer.param_groups:
        group["lr"] = peak_lr
        group.pop("initial_lr", None)

    def factor(step: int) -> float:
        lr = onecycle_lr(min(step, total_steps), total_steps, steps_per_epoch, initial_lr, peak_lr, final_lr)
        return lr / peak_lr

    return LambdaLR(state.optimizer, factor)
