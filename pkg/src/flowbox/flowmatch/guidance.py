"""Classifier-free guidance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Tensor

SPEECH_WEIGHT = 0.7
SOUND_WEIGHT = 1.0


@dataclass
class CFGConfig:
    weight: float = SPEECH_WEIGHT

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("guidance weight must be >= 0")


def cfg_field(u_cond, u_uncond, w: float):
    """(1 + w) u_cond - w u_uncond; w = 0 returns u_cond unchanged."""
    if u_cond.shape != u_uncond.shape:
        raise dc.ShapeError("cfg_field", u_cond.shape, u_uncond.shape)
    if w == 0:
        return u_cond
    if isinstance(u_cond, Tensor) or isinstance(u_uncond, Tensor):
        return u_cond * (1.0 + w) - u_uncond * w
    return (1.0 + w) * np.asarray(u_cond) - w * np.asarray(u_uncond)
