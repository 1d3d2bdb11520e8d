"""Condition bundles, condition dropout, pseudo-transcripts and silence padding."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from flowbox.toydata.aligned import SIL, SOUND, DescriptionVocab

FRAME_RATE = 10


@dataclass
class FeatureSequence:
    """Frames plus a generate-mask; ``context()`` zeroes the masked frames."""

    frames: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be (T, C) with T >= 1")
        if self.mask.shape != (self.frames.shape[0],):
            raise ValueError(f"mask shape {self.mask.shape} does not match T={self.frames.shape[0]}")

    def context(self) -> np.ndarray:
        return np.where(self.mask[:, None], 0.0, self.frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]


def pseudo_voice_prompt(feat_dim: int, frame_rate: int = FRAME_RATE) -> np.ndarray:
    """0.1 s of zero frames standing in for an absent voice prompt."""
    return np.zeros((max(1, int(round(0.1 * frame_rate))), feat_dim))


def empty_caption() -> np.ndarray:
    return np.array([DescriptionVocab.EMPTY], dtype=np.int64)


@dataclass
class ConditionBundle:
    tokens: np.ndarray  # frame-aligned token ids, length T
    context: FeatureSequence
    description: np.ndarray | None = None
    voice_prompt: np.ndarray | None = None
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.shape != (self.context.T,):
            raise ValueError(f"token alignment length {len(self.tokens)} != T={self.context.T}")

    @property
    def has_ctx(self) -> bool:
        return not bool(self.context.mask.all())

    @property
    def has_vp(self) -> bool:
        return self.voice_prompt is not None and bool(np.any(self.voice_prompt != 0))

    @property
    def has_cap(self) -> bool:
        return self.description is not None and bool(np.any(self.description != DescriptionVocab.EMPTY))

    def dropped(self, has_ctx: bool = True, has_vp: bool = True, has_cap: bool = True) -> "ConditionBundle":
        """Replace absent inputs by their pseudo forms; present ones are kept as-is."""
        ctx = self.context
        if not has_ctx:
            ctx = FeatureSequence(ctx.frames, np.ones(ctx.T, dtype=bool))
        vp = self.voice_prompt
        if vp is not None and not has_vp:
            vp = pseudo_voice_prompt(ctx.frames.shape[1], self.frame_rate)
        desc = self.description
        if desc is not None and not has_cap:
            desc = empty_caption()
        return replace(self, context=ctx, voice_prompt=vp, description=desc)

    def unconditional(self) -> "ConditionBundle":
        """Form used by the unconditional guidance pass."""
        return self.dropped(False, False, False)


@dataclass
class DropoutPolicy:
    p_vp_absent: float = 0.5
    p_ctx_absent_given_vp: float = 0.7
    p_ctx_absent_given_no_vp: float = 0.5
    p_cap_absent: float = 0.3

    def __post_init__(self):
        for k, v in vars(self).items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{k}={v} outside [0, 1]")

    def joint(self) -> dict:
        """Analytic P(has_ctx, has_vp, has_cap) for all eight combinations."""
        out = {}
        for vp in (True, False):
            p_vp = 1.0 - self.p_vp_absent if vp else self.p_vp_absent
            p_ctx_absent = self.p_ctx_absent_given_vp if vp else self.p_ctx_absent_given_no_vp
            for ctx in (True, False):
                p_ctx = 1.0 - p_ctx_absent if ctx else p_ctx_absent
                for cap in (True, False):
                    p_cap = 1.0 - self.p_cap_absent if cap else self.p_cap_absent
                    out[(ctx, vp, cap)] = p_vp * p_ctx * p_cap
        return out


def sample_condition_dropout(policy: DropoutPolicy, rng: np.random.Generator, n: int | None = None):
    """Draw (has_ctx, has_vp, has_cap); vp first, ctx given vp, cap independent.

    With ``n`` set, returns three boolean arrays of length n.
    """
    size = 1 if n is None else n
    u = rng.uniform(size=(3, size))
    has_vp = u[0] >= policy.p_vp_absent
    p_ctx_absent = np.where(has_vp, policy.p_ctx_absent_given_vp, policy.p_ctx_absent_given_no_vp)
    has_ctx = u[1] >= p_ctx_absent
    has_cap = u[2] >= policy.p_cap_absent
    if n is None:
        return bool(has_ctx[0]), bool(has_vp[0]), bool(has_cap[0])
    return has_ctx, has_vp, has_cap


def build_pseudo_transcript(duration_seconds: float, frame_rate: int = FRAME_RATE):
    """One ``SOUND`` token per started second; the last one is truncated to fit."""
    if duration_seconds <= 0:
        raise ValueError("duration must be positive")
    total = max(1, int(round(duration_seconds * frame_rate)))
    n = int(np.ceil(total / frame_rate))
    durations = np.full(n, frame_rate, dtype=np.int64)
    durations[-1] = total - frame_rate * (n - 1)
    return np.full(n, SOUND, dtype=np.int64), durations


def pad_silence(tokens, durations, rng: np.random.Generator, frame_rate: int = FRAME_RATE,
                max_seconds: float = 3.0):
    """Prepend and append silence tokens of independent U[0, max_seconds] length."""
    pads = np.floor(rng.uniform(0.0, max_seconds, size=2) * frame_rate).astype(np.int64)
    tokens = np.concatenate([[SIL], np.asarray(tokens, np.int64), [SIL]])
    durations = np.concatenate([[pads[0]], np.asarray(durations, np.int64), [pads[1]]])
    return tokens, durations


def trim_silence(tokens, durations, max_frames: int = 1) -> np.ndarray:
    """Cap leading/trailing silence-token durations at ``max_frames``."""
    d = np.asarray(durations, dtype=np.int64).copy()
    tokens = np.asarray(tokens)
    if len(d) and tokens[0] == SIL:
        d[0] = min(d[0], max_frames)
    if len(d) > 1 and tokens[-1] == SIL:
        d[-1] = min(d[-1], max_frames)
    return d


@dataclass
class CondArrays:
    """Batched, padded conditioning consumed by the audio flow model."""

    tokens: np.ndarray  # (B, T) frame-aligned ids
    ctx: np.ndarray  # (B, T, C) masked context
    valid: np.ndarray  # (B, T) frame exists (not padding)
    desc: np.ndarray | None = None  # (B, S)
    desc_mask: np.ndarray | None = None
    vp: np.ndarray | None = None  # (B, P, C)
    vp_mask: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]


def _pad_stack(seqs, fill=0.0, dtype=np.float64):
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L) + np.asarray(seqs[0]).shape[1:], fill, dtype=dtype)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


def collate(bundles: list[ConditionBundle]) -> tuple[CondArrays, np.ndarray]:
    """Pad bundles to a batch; returns (cond arrays, generate-mask (B, T))."""
    tokens, valid = _pad_stack([b.tokens for b in bundles], fill=SIL, dtype=np.int64)
    ctx, _ = _pad_stack([b.context.context() for b in bundles])
    gen_mask, _ = _pad_stack([b.context.mask for b in bundles], fill=False, dtype=bool)
    cond = CondArrays(tokens, ctx, valid)
    if any(b.description is not None for b in bundles):
        cond.desc, cond.desc_mask = _pad_stack(
            [b.description if b.description is not None else empty_caption() for b in bundles],
            fill=DescriptionVocab.EMPTY, dtype=np.int64)
    if any(b.voice_prompt is not None for b in bundles):
        C = bundles[0].context.frames.shape[1]
        cond.vp, cond.vp_mask = _pad_stack(
            [b.voice_prompt if b.voice_prompt is not None else pseudo_voice_prompt(C, b.frame_rate)
             for b in bundles])
    return cond, gen_mask


def bundle_from_utterance(utt, mask, voice_prompt=None, use_description: bool = False) -> ConditionBundle:
    return ConditionBundle(utt.frame_tokens(), FeatureSequence(utt.frames, mask),
                           utt.description.copy() if use_description else None, voice_prompt)
