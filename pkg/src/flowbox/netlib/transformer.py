"""Pre-LN transformer with ALiBi self-attention, UNet skips and optional cross-attention."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from flowbox import diffcore as dc

from .attention import MultiHeadAttention, alibi_bias
from .module import LayerNorm, Linear, Module


@dataclass
class TransformerConfig:
    layers: int = 4
    heads: int = 4
    embed_dim: int = 64
    ffn_dim: int = 256
    use_unet_skips: bool = True
    cross_attention: bool = False
    lora_rank: int | None = None

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1:
            raise ValueError("layers and heads must be positive")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.use_unet_skips and self.layers % 2:
            raise ValueError("UNet skips need an even layer count")
        if self.lora_rank is not None and not 1 <= self.lora_rank < self.embed_dim:
            raise ValueError("lora_rank must satisfy 1 <= r < embed_dim")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VoicePromptEncoderConfig:
    layers: int = 3
    heads: int = 4
    embed_dim: int = 64
    ffn_dim: int = 256

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(self.layers, self.heads, self.embed_dim, self.ffn_dim,
                                 use_unet_skips=False)


class TransformerLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        D = cfg.embed_dim
        self.ln_self = LayerNorm(D)
        self.attn = MultiHeadAttention(D, cfg.heads, rng)
        if cfg.cross_attention:
            self.ln_cross = LayerNorm(D)
            self.cross = MultiHeadAttention(D, cfg.heads, rng, is_self=False)
        self.ln_ffn = LayerNorm(D)
        self.ffn_in = Linear(D, cfg.ffn_dim, rng)
        self.ffn_out = Linear(cfg.ffn_dim, D, rng)

    def __call__(self, x, bias, key_mask=None, context=None, context_mask=None):
        x = x + self.attn(self.ln_self(x), bias=bias, key_mask=key_mask)
        if context is not None:
            x = x + self.cross(self.ln_cross(x), context=context, key_mask=context_mask)
        return x + self.ffn_out(dc.gelu(self.ffn_in(self.ln_ffn(x))))


class Transformer(Module):
    """Stack of layers over (B, T, D) or (T, D) inputs.

    The time embedding, when given, is prepended as one extra position and
    removed again from the output. With UNet skips, the state entering layer
    ``i < L/2`` is pushed and later concatenated channel-wise with the state
    entering the mirror layer ``L-1-i``, then mixed back to D by a Linear.
    """

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layers = [TransformerLayer(cfg, rng) for _ in range(cfg.layers)]
        half = cfg.layers // 2
        self.skips = [Linear(2 * cfg.embed_dim, cfg.embed_dim, rng) for _ in range(half)] \
            if cfg.use_unet_skips else []
        self.ln_out = LayerNorm(cfg.embed_dim)

    def init_skips_identity(self) -> None:
        """Make every skip map pass the incoming state and ignore the mirror."""
        D = self.cfg.embed_dim
        for lin in self.skips:
            lin.weight.data[...] = np.vstack([np.eye(D), np.zeros((D, D))])
            lin.bias.data[...] = 0.0

    def __call__(self, x, time_embed=None, cross_context=None, key_mask=None, cross_mask=None):
        if cross_context is not None and not self.cfg.cross_attention:
            raise ValueError("cross_context given but cross_attention is disabled")
        x = dc.as_tensor(x)
        unbatched = x.ndim == 2
        if unbatched:
            x = x.reshape(1, *x.shape)
            if time_embed is not None:
                time_embed = dc.as_tensor(time_embed).reshape(1, -1)
            if cross_context is not None:
                cross_context = dc.as_tensor(cross_context).reshape(1, *cross_context.shape)
        B, T, D = x.shape
        if D != self.cfg.embed_dim:
            raise dc.ShapeError("transformer", x.shape, detail=f"expected embed_dim {self.cfg.embed_dim}")
        offset = 0
        if time_embed is not None:
            te = dc.as_tensor(time_embed)
            if te.ndim == 1:
                te = te.reshape(1, 1, D) * np.ones((B, 1, 1))
            else:
                te = te.reshape(B, 1, D)
            x = dc.concat([te, x], axis=1)
            offset = 1
            if key_mask is not None:
                key_mask = np.concatenate([np.ones((B, 1), dtype=bool), np.asarray(key_mask, bool)], axis=1)
        bias = alibi_bias(T + offset, self.cfg.heads).bias
        stack = []
        L = len(self.layers)
        for i, layer in enumerate(self.layers):
            if self.skips:
                if i < L // 2:
                    stack.append(x)
                else:
                    x = self.skips[i - L // 2](dc.concat([x, stack.pop()], axis=-1))
            x = layer(x, bias, key_mask, cross_context, cross_mask)
        x = self.ln_out(x)
        if offset:
            x = x[:, offset:]
        return x[0] if unbatched else x


class VoicePromptEncoder(Module):
    """Small transformer over prompt frames; output keeps the prompt length."""

    def __init__(self, feat_dim: int, cfg: VoicePromptEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = Linear(feat_dim, cfg.embed_dim, rng)
        self.body = Transformer(cfg.transformer(), rng)

    def __call__(self, frames, key_mask=None):
        frames = dc.as_tensor(frames)
        if frames.shape[-2] < 1:
            raise ValueError("empty voice prompt; pass the zero pseudo-prompt instead")
        return self.body(self.proj(frames), key_mask=key_mask)
