"""Adam with global-norm gradient clipping and a linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = global_grad_norm(params)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


@dataclass
class AdamState:
    lr: float = 1e-4
    clip: float | None = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: int = 100
    total_steps: int | None = None
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    last_grad_norm: float = 0.0

    def current_lr(self) -> float:
        """Learning rate for the update about to be taken (``step`` + 1)."""
        s = self.step + 1
        lr = self.lr
        if self.warmup and s <= self.warmup:
            return lr * s / self.warmup
        if self.total_steps:
            remaining = max(self.total_steps - s, 0) / max(self.total_steps - self.warmup, 1)
            lr *= remaining
        return lr


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """One Adam update on the trainable entries of ``params``.

    Frozen parameters (``requires_grad=False``) are never touched. Moments
    are keyed by parameter name, so names must be unique.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        return
    state.last_grad_norm = clip_grad_norm(params, state.clip)
    lr = state.current_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        key = p.name or str(id(p))
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
