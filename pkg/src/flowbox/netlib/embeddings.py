"""Flow-step embedding and a time-conditioned MLP velocity field."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Tensor

from .module import MLP, Embedding, Module


def sinusoidal_embed(t, dim: int, scale: float = 100.0, max_period: float = 10000.0) -> Tensor:
    """sin/cos features of ``scale * t``; sin block first, cos block second.

    ``t`` may be a float, an array of shape (B,), or a Tensor (differentiable).
    Returns (dim,) for scalar t, else (B, dim).
    """
    if dim % 2:
        raise ValueError(f"sinusoidal embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    t = dc.as_tensor(t)
    scalar = t.ndim == 0
    tt = t.reshape(-1, 1) * scale
    args = tt * freqs
    out = dc.concat([dc.sin(args), dc.cos(args)], axis=-1)
    return out.reshape(dim) if scalar else out


@dataclass
class VelocityMLPConfig:
    dim: int = 2
    hidden: int = 128
    depth: int = 4
    time_dim: int = 32
    time_scale: float = 10.0
    num_classes: int = 0
    class_dim: int = 16

    def to_dict(self) -> dict:
        return asdict(self)


class VelocityMLP(Module):
    """u(x, t[, label]) for low-dimensional data.

    Label ``-1`` (or ``num_classes``) selects the learned null embedding used
    for the unconditional pass of classifier-free guidance.
    """

    def __init__(self, cfg: VelocityMLPConfig, rng: np.random.Generator):
        self.cfg = cfg
        extra = cfg.class_dim if cfg.num_classes else 0
        if cfg.num_classes:
            self.label_emb = Embedding(cfg.num_classes + 1, cfg.class_dim, rng)
        self.net = MLP(cfg.dim + cfg.time_dim + extra, cfg.hidden, cfg.dim, cfg.depth, rng)
        self.assign_names()

    def __call__(self, x, t, labels=None):
        x = dc.as_tensor(x)
        B = x.shape[0]
        temb = sinusoidal_embed(t, self.cfg.time_dim, self.cfg.time_scale)
        if temb.ndim == 1 or temb.shape[0] != B:
            temb = temb.reshape(-1, self.cfg.time_dim) * np.ones((B, 1))
        parts = [x, temb]
        if self.cfg.num_classes:
            if labels is None:
                labels = np.full(B, -1)
            ids = np.asarray(labels, dtype=np.int64).copy()
            ids[ids < 0] = self.cfg.num_classes
            parts.append(self.label_emb(ids))
        return self.net(dc.concat(parts, axis=-1))
