"""
AdamW with decoupled weight decay and gradient-norm clipping.

Weight decay applies to matrices only (ndim >= 2); biases, norms and scalar
loss weights are not decayed.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.core.autodiff import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
               lr: float, beta1: float = 0.9, beta2: float = 0.95, eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """One in-place update; state moments are keyed by parameter position."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay and p.ndim >= 2:
            p.data *= 1.0 - lr * weight_decay
        m = state.m.get(i)
        v = state.v.get(i)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.m[i] = m
        state.v[i] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float, betas: tuple[float, float] = (0.9, 0.95),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    @classmethod
    def from_config(cls, params: Sequence[Tensor], cfg) -> "AdamW":
        return cls(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)

    def step(self) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, self.lr,
                   self.betas[0], self.betas[1], self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale leaf grads so their global L2 norm is at most max_norm; returns the norm before clipping."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.has_grad:
                p._grad = p._grad * scale
    return total
