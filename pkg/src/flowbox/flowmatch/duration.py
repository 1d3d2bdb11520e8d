"""Flow-matching duration model over token sequences, with sample averaging."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from flowbox import diffcore as dc
from flowbox.netlib import Module, TransformerConfig
from flowbox.odesolve import SolverConfig, integrate

from .conditioning import CondArrays, trim_silence
from .models import AudioFlowModel, AudioModelConfig


def _default_body() -> TransformerConfig:
    return TransformerConfig(layers=2, heads=2, embed_dim=32, ffn_dim=64)


@dataclass
class DurationModelConfig:
    token_vocab: int = 18
    scale: float = 5.0  # durations are modelled as d / scale
    time_scale: float = 100.0
    transformer: TransformerConfig = field(default_factory=_default_body)

    def __post_init__(self):
        if isinstance(self.transformer, dict):
            self.transformer = TransformerConfig(**self.transformer)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transformer"] = self.transformer.to_dict()
        return d


class DurationModel(Module):
    """1-channel masked flow model whose "frames" are tokens."""

    def __init__(self, cfg: DurationModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.net = AudioFlowModel(AudioModelConfig(feat_dim=1, token_vocab=cfg.token_vocab,
                                                   time_scale=cfg.time_scale, transformer=cfg.transformer), rng)
        self.assign_names()

    def encode(self, durations) -> np.ndarray:
        return np.asarray(durations, dtype=np.float64)[..., None] / self.cfg.scale

    def decode(self, x) -> np.ndarray:
        return np.asarray(x)[..., 0] * self.cfg.scale

    def __call__(self, x_t, t, cond: CondArrays):
        return self.net(x_t, t, cond)

    def cond_for(self, tokens, ctx_durations=None, ctx_mask=None, batch: int = 1) -> CondArrays:
        tokens = np.asarray(tokens, dtype=np.int64)
        N = len(tokens)
        if ctx_durations is None:
            ctx = np.zeros((N, 1))
        else:
            mask = np.ones(N, bool) if ctx_mask is None else np.asarray(ctx_mask, bool)
            ctx = np.where(mask[:, None], 0.0, self.encode(ctx_durations))
        rep = lambda a: np.broadcast_to(a, (batch,) + a.shape).copy()  # noqa: E731
        return CondArrays(rep(tokens), rep(ctx), np.ones((batch, N), dtype=bool))


def sample_duration_draws(model: DurationModel, tokens, m: int, rng: np.random.Generator,
                          solver: SolverConfig | None = None, ctx_durations=None, ctx_mask=None) -> np.ndarray:
    """m continuous duration sequences, shape (m, N), before averaging."""
    tokens = np.asarray(tokens)
    if tokens.size == 0:
        raise ValueError("empty token sequence")
    if m < 1:
        raise ValueError("m must be >= 1")
    solver = solver or SolverConfig("midpoint", 0.0625)
    cond = model.cond_for(tokens, ctx_durations, ctx_mask, batch=m)
    x0 = rng.standard_normal((m, len(tokens), 1))
    with dc.no_grad():
        x1, _ = integrate(lambda x, t: model(x, t, cond), x0, solver, record=False)
    return model.decode(x1)


def average_durations(draws: np.ndarray) -> np.ndarray:
    """Elementwise mean of draws, clamped at zero (still continuous)."""
    return np.maximum(np.asarray(draws).mean(axis=0), 0.0)


def sample_durations(model: DurationModel, tokens, rng: np.random.Generator, m: int = 5,
                     solver: SolverConfig | None = None, ctx_durations=None, ctx_mask=None,
                     trim: bool = True, max_silence_frames: int = 1) -> np.ndarray:
    """Integer durations from the average of ``m`` draws; edge silence trimmed."""
    draws = sample_duration_draws(model, tokens, m, rng, solver, ctx_durations, ctx_mask)
    d = np.rint(average_durations(draws)).astype(np.int64)
    if ctx_durations is not None and ctx_mask is not None:
        keep = ~np.asarray(ctx_mask, bool)
        d[keep] = np.asarray(ctx_durations, np.int64)[keep]
    return trim_silence(tokens, d, max_silence_frames) if trim else d
