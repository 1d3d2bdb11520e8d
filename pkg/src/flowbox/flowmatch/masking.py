"""Frame-mask samplers for masked pretraining and chunk fine-tuning."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MaskSpec:
    p_full: float = 0.1
    fraction_low: float = 0.7
    fraction_high: float = 1.0
    min_span: int = 10
    mode: str = "pretrain-multispan"

    def __post_init__(self):
        if not 0.0 <= self.p_full <= 1.0:
            raise ValueError("p_full must be in [0, 1]")
        if not 0.0 <= self.fraction_low <= self.fraction_high <= 1.0:
            raise ValueError("need 0 <= fraction_low <= fraction_high <= 1")
        if self.min_span < 1:
            raise ValueError("min_span must be >= 1")
        if self.mode not in ("pretrain-multispan", "finetune-chunk"):
            raise ValueError(f"unknown mask mode {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def pretrain_mask_spec() -> MaskSpec:
    return MaskSpec(p_full=0.1, fraction_low=0.7, fraction_high=1.0, min_span=10, mode="pretrain-multispan")


def finetune_mask_spec() -> MaskSpec:
    return MaskSpec(p_full=0.3, fraction_low=0.7, fraction_high=1.0, min_span=1, mode="finetune-chunk")


def _split(total: int, parts: int, rng: np.random.Generator) -> np.ndarray:
    """Random composition of ``total`` into ``parts`` nonnegative integers."""
    if parts == 1:
        return np.array([total])
    cuts = np.sort(rng.integers(0, total + 1, size=parts - 1))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def sample_mask(T: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of length T, True = frame to generate.

    Sequences shorter than ``min_span`` are masked whole.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if rng.uniform() < spec.p_full or T < spec.min_span:
        return np.ones(T, dtype=bool)
    frac = rng.uniform(spec.fraction_low, spec.fraction_high)
    mask = np.zeros(T, dtype=bool)
    if spec.mode == "finetune-chunk":
        n = min(T, max(1, int(round(frac * T))))
        start = int(rng.integers(0, T - n + 1))
        mask[start:start + n] = True
        return mask
    n = min(T, max(spec.min_span, int(np.ceil(frac * T))))
    free = T - n
    if free == 0:
        return np.ones(T, dtype=bool)
    # k spans of >= min_span separated by >= 1 unmasked frame
    k_max = max(1, min(n // spec.min_span, free + 1))
    k = int(rng.integers(1, k_max + 1))
    lengths = spec.min_span + _split(n - k * spec.min_span, k, rng)
    inner = k - 1
    gaps = _split(free - inner, k + 1, rng)
    gaps[1:k] += 1
    pos = 0
    for i in range(k):
        pos += gaps[i]
        mask[pos:pos + lengths[i]] = True
        pos += lengths[i]
    return mask


def sample_masks(lengths, spec: MaskSpec, rng: np.random.Generator, pad_to: int | None = None) -> np.ndarray:
    """Stack per-example masks into (B, pad_to); padding stays False."""
    lengths = list(lengths)
    width = max(lengths) if pad_to is None else pad_to
    out = np.zeros((len(lengths), width), dtype=bool)
    for i, T in enumerate(lengths):
        out[i, :T] = sample_mask(T, spec, rng)
    return out
