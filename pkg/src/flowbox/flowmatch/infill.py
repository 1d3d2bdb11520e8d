"""Infilling: integrate the (guided) field from noise and splice in the context."""

from __future__ import annotations

import numpy as np

from flowbox import diffcore as dc
from flowbox.odesolve import DerivativeField, SolverConfig, guided_field, integrate

from .conditioning import ConditionBundle, FeatureSequence, collate
from .guidance import CFGConfig


def build_field(model, bundles: list[ConditionBundle], cfg: CFGConfig | None) -> DerivativeField:
    """Conditional field, or CFG over the fully-dropped bundle when ``cfg.weight > 0``."""
    cond, _ = collate(bundles)
    if cfg is None or cfg.weight == 0:
        return DerivativeField(lambda x, t: model(x, t, cond))
    uncond, _ = collate([b.unconditional() for b in bundles])
    return guided_field(lambda x, t: model(x, t, cond), lambda x, t: model(x, t, uncond), cfg.weight)


def splice(generated: np.ndarray, seq: FeatureSequence) -> np.ndarray:
    return np.where(seq.mask[:, None], generated, seq.frames)


def generate_infill(model, bundle: ConditionBundle, solver: SolverConfig, cfg: CFGConfig | None,
                    rng: np.random.Generator, num_samples: int | None = None, chunk: int = 128):
    """Sample the masked frames of ``bundle``.

    Returns a :class:`FeatureSequence` (mask carried over) when ``num_samples``
    is None, else an array (num_samples, T, C). Unmasked frames are copied
    from the context, never recomputed.
    """
    n = 1 if num_samples is None else num_samples
    T, C = bundle.context.frames.shape
    outs = []
    with dc.no_grad():
        for start in range(0, n, chunk):
            b = min(chunk, n - start)
            fld = build_field(model, [bundle] * b, cfg)
            x0 = rng.standard_normal((b, T, C))
            x1, _ = integrate(fld, x0, solver, record=False)
            outs.append(x1)
    gen = np.concatenate(outs, axis=0)
    out = np.where(bundle.context.mask[None, :, None], gen, bundle.context.frames[None])
    if num_samples is None:
        return FeatureSequence(out[0], bundle.context.mask.copy())
    return out
