"""OT conditional paths and the masked flow-matching objective."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Tensor


@dataclass(frozen=True)
class OTPathConfig:
    sigma_min: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.sigma_min < 1.0:
            raise ValueError("sigma_min must lie in [0, 1)")


class EmptyMaskWarning(UserWarning):
    pass


def _expand_t(t, ndim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (ndim - t.ndim))


def ot_interpolate(x0, x1, t, cfg: OTPathConfig = OTPathConfig()):
    """Point and velocity on the straight path from prior sample to data.

    ``t`` is a scalar or one value per leading-axis example.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise dc.ShapeError("ot_interpolate", x0.shape, x1.shape)
    tt = _expand_t(t, x0.ndim)
    if np.any(tt < 0) or np.any(tt > 1):
        raise ValueError("t must lie in [0, 1]")
    a = 1.0 - cfg.sigma_min
    x_t = (1.0 - a * tt) * x0 + tt * x1
    v_t = x1 - a * x0
    return x_t, v_t


def masked_mse(pred, target, mask) -> Tensor:
    """Squared error averaged over masked frames and channels only.

    ``pred``/``target``: (..., T, C); ``mask``: (..., T) with True = counted.
    With nothing masked the result is an exact 0 (still attached to ``pred``)
    and an :class:`EmptyMaskWarning` is issued.
    """
    pred = dc.as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise dc.ShapeError("masked_mse", pred.shape, target.shape)
    m = np.asarray(mask, dtype=np.float64)[..., None]
    count = m.sum() * pred.shape[-1]
    if count == 0:
        warnings.warn("masked flow-matching loss over zero masked frames", EmptyMaskWarning, stacklevel=2)
        return (pred * 0.0).sum()
    diff = pred - target
    return (diff * diff * m).sum() * (1.0 / count)


def fm_masked_loss(model_fn: Callable, x1: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                   path: OTPathConfig = OTPathConfig()) -> Tensor:
    """Flow-matching loss restricted to masked frames.

    Draws ``t ~ U[0,1]`` per example and ``x0 ~ N(0, I)``, then scores
    ``model_fn(x_t, t)`` against the OT velocity on masked frames.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    t = rng.uniform(0.0, 1.0, size=x1.shape[0])
    x0 = rng.standard_normal(x1.shape)
    x_t, v_t = ot_interpolate(x0, x1, t, path)
    return masked_mse(model_fn(x_t, t), v_t, mask)
