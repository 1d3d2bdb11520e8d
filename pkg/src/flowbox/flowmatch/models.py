"""Masked audio flow model over frame sequences."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from flowbox import diffcore as dc
from flowbox.netlib import (
    Embedding,
    Linear,
    Module,
    Transformer,
    TransformerConfig,
    VoicePromptEncoder,
    VoicePromptEncoderConfig,
    lora_wrap,
    sinusoidal_embed,
)

from .conditioning import CondArrays


@dataclass
class AudioModelConfig:
    feat_dim: int = 8
    token_vocab: int = 18  # 0 disables transcript conditioning
    token_dim: int = 16
    desc_vocab: int = 0  # 0 disables description cross-attention
    voice_prompt: bool = False
    vp_layers: int = 3
    time_scale: float = 100.0
    zero_out: bool = True
    transformer: TransformerConfig = field(default_factory=TransformerConfig)

    def __post_init__(self):
        if isinstance(self.transformer, dict):
            self.transformer = TransformerConfig(**self.transformer)
        if self.feat_dim < 1:
            raise ValueError("feat_dim must be >= 1")
        needs_cross = bool(self.desc_vocab) or self.voice_prompt
        if needs_cross != self.transformer.cross_attention:
            self.transformer = TransformerConfig(**{**self.transformer.to_dict(), "cross_attention": needs_cross})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transformer"] = self.transformer.to_dict()
        return d


class AudioFlowModel(Module):
    """u(x_t, x_ctx, z, t [, caption, prompt]) on (B, T, C) frames."""

    def __init__(self, cfg: AudioModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        tc = cfg.transformer
        D, C = tc.embed_dim, cfg.feat_dim
        self.in_proj = Linear(2 * C, D, rng)
        if cfg.token_vocab:
            self.tok_emb = Embedding(cfg.token_vocab, cfg.token_dim, rng)
            self.tok_proj = Linear(cfg.token_dim, D, rng)
        self.time_proj = Linear(D, D, rng)
        if cfg.desc_vocab:
            self.desc_emb = Embedding(cfg.desc_vocab, D, rng)
            self.desc_proj = Linear(D, D, rng)
        if cfg.voice_prompt:
            self.vp_enc = VoicePromptEncoder(C, VoicePromptEncoderConfig(cfg.vp_layers, tc.heads, D, tc.ffn_dim), rng)
        self.body = Transformer(tc, rng)
        self.out_proj = Linear(D, C, rng, zero_init=cfg.zero_out)
        self.assign_names()

    # pieces kept separate so tests can probe them
    def hidden_input(self, x_t, x_ctx, tokens=None):
        x_t = dc.as_tensor(x_t)
        x_ctx = np.asarray(x_ctx, dtype=np.float64)
        if x_t.shape != x_ctx.shape:
            raise dc.ShapeError("assemble", x_t.shape, x_ctx.shape)
        h = self.in_proj(dc.concat([x_t, dc.as_tensor(x_ctx)], axis=-1))
        if self.cfg.token_vocab and tokens is not None:
            tokens = np.asarray(tokens)
            if tokens.shape != x_ctx.shape[:-1]:
                raise dc.ShapeError("assemble", tokens.shape, x_ctx.shape, detail="token alignment length")
            h = h + self.tok_proj(self.tok_emb(tokens))
        return h

    def time_embed(self, t, batch: int):
        D = self.cfg.transformer.embed_dim
        t = dc.as_tensor(t)
        if t.ndim == 0:
            t = t.reshape(1) * np.ones(batch)
        return self.time_proj(sinusoidal_embed(t, D, self.cfg.time_scale))

    def cross_context(self, temb, cond: CondArrays):
        if not self.cfg.transformer.cross_attention:
            return None, None
        B = temb.shape[0]
        parts = [temb.reshape(B, 1, -1)]
        masks = [np.ones((B, 1), dtype=bool)]
        if self.cfg.voice_prompt:
            if cond.vp is None:
                raise ValueError("model expects a voice prompt (use the pseudo prompt when absent)")
            parts.append(self.vp_enc(cond.vp, key_mask=cond.vp_mask))
            masks.append(np.asarray(cond.vp_mask, bool))
        if self.cfg.desc_vocab:
            if cond.desc is None:
                raise ValueError("model expects a description (use the empty caption when absent)")
            parts.append(self.desc_proj(self.desc_emb(cond.desc)))
            masks.append(np.asarray(cond.desc_mask, bool))
        return dc.concat(parts, axis=1), np.concatenate(masks, axis=1)

    def __call__(self, x_t, t, cond: CondArrays):
        x_t = dc.as_tensor(x_t)
        h = self.hidden_input(x_t, cond.ctx, cond.tokens)
        temb = self.time_embed(t, x_t.shape[0])
        cross, cross_mask = self.cross_context(temb, cond)
        y = self.body(h, time_embed=temb, cross_context=cross, key_mask=cond.valid, cross_mask=cross_mask)
        return self.out_proj(y)

    def enable_lora(self, rank: int, rng: np.random.Generator, train_extra: tuple[str, ...] = ()) -> list:
        """Freeze everything, adapt the body's self-attention, then unfreeze ``train_extra`` submodules."""
        adapters = lora_wrap(self.body, rank, rng, root=self)
        for name in ("in_proj", "tok_emb", "tok_proj", "time_proj", "desc_emb", "desc_proj", "vp_enc", "out_proj"):
            if hasattr(self, name):
                getattr(self, name).set_trainable(False)
        for name in train_extra:
            getattr(self, name).set_trainable(True)
        return adapters


def assemble_speech_conditioning(model: AudioFlowModel, x_t, x_ctx, tokens, t):
    """Transformer input with the time embedding prepended: (B, T+1, D)."""
    x_t = dc.as_tensor(x_t)
    h = model.hidden_input(x_t, x_ctx, tokens)
    temb = model.time_embed(t, x_t.shape[0])
    return dc.concat([temb.reshape(x_t.shape[0], 1, -1), h], axis=1)


def model_field(model, cond: CondArrays):
    """Adapt ``model(x, t, cond)`` to the solver's ``field(x, t)`` contract."""
    def field(x, t):
        return model(x, t, cond)
    return field
