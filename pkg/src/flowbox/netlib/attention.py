"""Multi-head attention with a symmetric ALiBi distance penalty."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from flowbox import diffcore as dc

from .module import Linear, Module

NEG_INF = -1e9


def alibi_slopes(heads: int) -> np.ndarray:
    """Geometric schedule ``2^(-8h/H)`` for ``h = 1..H``."""
    h = np.arange(1, heads + 1, dtype=np.float64)
    return 2.0 ** (-8.0 * h / heads)


@dataclass(frozen=True)
class AlibiBias:
    slopes: np.ndarray  # (H,)
    bias: np.ndarray  # (H, T, T), bias[h, i, j] = -slope_h * |i - j|


@lru_cache(maxsize=64)
def _alibi_cached(length: int, heads: int) -> AlibiBias:
    slopes = alibi_slopes(heads)
    pos = np.arange(length)
    dist = np.abs(pos[:, None] - pos[None, :]).astype(np.float64)
    bias = -slopes[:, None, None] * dist[None]
    bias.setflags(write=False)
    slopes.setflags(write=False)
    return AlibiBias(slopes, bias)


def alibi_bias(length: int, heads: int) -> AlibiBias:
    if length < 1 or heads < 1:
        raise ValueError(f"alibi_bias needs length >= 1 and heads >= 1, got {length}, {heads}")
    return _alibi_cached(int(length), int(heads))


def key_mask_bias(key_mask: np.ndarray) -> np.ndarray:
    """(B, S) validity mask -> additive (B, 1, 1, S) bias."""
    return np.where(np.asarray(key_mask, dtype=bool), 0.0, NEG_INF)[:, None, None, :]


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, kv_dim: int | None = None,
                 is_self: bool = True):
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.q = Linear(dim, dim, rng)
        self.k = Linear(kv_dim, dim, rng)
        self.v = Linear(kv_dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        self.heads = heads
        self.dim = dim
        self.is_self = is_self

    def __call__(self, x, context=None, bias: np.ndarray | None = None,
                 key_mask: np.ndarray | None = None):
        """``x``: (B, T, D); ``context``: (B, S, Dkv) or None for self-attention."""
        src = x if context is None else context
        B, T, _ = x.shape
        S = src.shape[1]
        H, dh = self.heads, self.dim // self.heads
        q = self.q(x).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = self.k(src).reshape(B, S, H, dh).transpose(0, 2, 3, 1)
        v = self.v(src).reshape(B, S, H, dh).transpose(0, 2, 1, 3)
        scores = (q @ k) * (1.0 / np.sqrt(dh))
        add = None
        if bias is not None:
            add = bias
        if key_mask is not None:
            km = key_mask_bias(key_mask)
            add = km if add is None else add + km
        if add is not None:
            scores = scores + add
        att = dc.softmax(scores, axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, self.dim)
        return self.o(out)
