"""Training loops for the mixture, audio and duration flow models."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import AdamState, adam_step, backprop
from flowbox.flowmatch import (
    ConditionBundle,
    DropoutPolicy,
    FeatureSequence,
    MaskSpec,
    OTPathConfig,
    collate,
    fm_masked_loss,
    sample_condition_dropout,
    sample_mask,
)
from flowbox.flowmatch.conditioning import _pad_stack, empty_caption, pseudo_voice_prompt
from flowbox.toydata import NoEligiblePrompt, select_voice_prompt


@dataclass
class TrainConfig:
    steps: int = 1000
    batch: int = 64
    lr: float = 1e-3
    warmup: int = 100
    clip: float | None = 0.2
    decay: bool = True
    label_dropout: float = 0.0
    sigma_min: float = 1e-5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, clip=self.clip, warmup=self.warmup,
                         total_steps=self.steps if self.decay else None)


def _loop(model, cfg: TrainConfig, make_loss, log=None, state: AdamState | None = None, start_step: int = 0):
    rng = np.random.default_rng(cfg.seed)
    state = state or cfg.adam()
    params = model.trainable_parameters()
    history = []
    for step in range(start_step + 1, start_step + cfg.steps + 1):
        loss = make_loss(rng)
        backprop(loss, params)
        adam_step(params, state)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step}")
        history.append((step, value))
        if log:
            log(step, value, state)
    return history


def train_mixture_fm(model, data: np.ndarray, cfg: TrainConfig, labels: np.ndarray | None = None, log=None):
    """Flow matching on i.i.d. points; optional labels dropped to the null class at ``label_dropout``."""
    data = np.asarray(data, dtype=np.float64)
    path = OTPathConfig(cfg.sigma_min)
    ones = np.ones(cfg.batch, dtype=bool)

    def make_loss(rng):
        idx = rng.integers(0, len(data), size=cfg.batch)
        lab = None
        if labels is not None:
            lab = np.asarray(labels)[idx].copy()
            lab[rng.uniform(size=cfg.batch) < cfg.label_dropout] = -1
        return fm_masked_loss(lambda x, t: model(x, t, lab), data[idx], ones, rng, path)

    return _loop(model, cfg, make_loss, log)


@dataclass
class AudioBatchSpec:
    mask: MaskSpec
    dropout: DropoutPolicy | None = None
    voice_prompt: bool = False
    description: bool = False


def make_audio_batch(utts, pool, spec: AudioBatchSpec, rng: np.random.Generator):
    """Sample masks and condition dropout; returns (cond, x1, gen_mask)."""
    bundles = []
    for u in utts:
        mask = sample_mask(u.num_frames, spec.mask, rng)
        has_ctx, has_vp, has_cap = True, True, True
        if spec.dropout is not None:
            has_ctx, has_vp, has_cap = sample_condition_dropout(spec.dropout, rng)
        vp = None
        if spec.voice_prompt:
            vp = pseudo_voice_prompt(u.frames.shape[1])
            if has_vp:
                try:
                    vp = select_voice_prompt(pool, u, rng).frames
                except NoEligiblePrompt:
                    pass
        desc = None
        if spec.description:
            desc = u.description.copy() if has_cap else empty_caption()
        b = ConditionBundle(u.frame_tokens(), FeatureSequence(u.frames, mask), desc, vp)
        if not has_ctx:
            b = b.dropped(has_ctx=False)
        bundles.append(b)
    cond, gen_mask = collate(bundles)
    x1, _ = _pad_stack([u.frames for u in utts])
    return cond, x1, gen_mask


def train_audio_fm(model, utts, cfg: TrainConfig, spec: AudioBatchSpec, log=None,
                   state: AdamState | None = None, start_step: int = 0):
    path = OTPathConfig(cfg.sigma_min)

    def make_loss(rng):
        pick = [utts[i] for i in rng.integers(0, len(utts), size=cfg.batch)]
        cond, x1, gen_mask = make_audio_batch(pick, utts, spec, rng)
        return fm_masked_loss(lambda x, t: model(x, t, cond), x1, gen_mask, rng, path)

    return _loop(model, cfg, make_loss, log, state, start_step)


def duration_mask_spec() -> MaskSpec:
    return MaskSpec(p_full=0.3, fraction_low=0.7, fraction_high=1.0, min_span=1, mode="pretrain-multispan")


def train_duration(model, utts, cfg: TrainConfig, mask_spec: MaskSpec | None = None, log=None):
    """Duration flow model on (tokens, durations) pairs with masked token spans."""
    from flowbox.flowmatch import CondArrays

    spec = mask_spec or duration_mask_spec()
    path = OTPathConfig(cfg.sigma_min)

    def make_loss(rng):
        pick = [utts[i] for i in rng.integers(0, len(utts), size=cfg.batch)]
        toks, valid = _pad_stack([u.tokens for u in pick], fill=0, dtype=np.int64)
        x1, _ = _pad_stack([model.encode(u.durations) for u in pick])
        gen = np.zeros(valid.shape, dtype=bool)
        for i, u in enumerate(pick):
            gen[i, :len(u.tokens)] = sample_mask(len(u.tokens), spec, rng)
        ctx = np.where(gen[..., None], 0.0, x1)
        cond = CondArrays(toks, ctx, valid)
        return fm_masked_loss(lambda x, t: model(x, t, cond), x1, gen, rng, path)

    return _loop(model, cfg, make_loss, log)


def eval_audio_loss(model, utts, spec: AudioBatchSpec, seed: int = 0, batch: int = 64) -> float:
    """Masked FM loss on a fixed draw (for validation curves)."""
    rng = np.random.default_rng(seed)
    with dc.no_grad():
        cond, x1, gen_mask = make_audio_batch(utts[:batch], utts, spec, rng)
        return float(fm_masked_loss(lambda x, t: model(x, t, cond), x1, gen_mask, rng).data)
