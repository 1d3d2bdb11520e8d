"""Low-rank adapters on self-attention input projections."""

from __future__ import annotations

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Parameter

from .attention import MultiHeadAttention
from .module import Linear, Module


class LoRALinear(Linear):
    """``y = x W + b + (x A) B`` with A: (d_in, r) random and B: (r, d_out) zero.

    Keeps the ``weight``/``bias`` names of the wrapped layer so checkpoints
    of the base model line up name for name.
    """

    def __init__(self, base: Linear, rank: int, rng: np.random.Generator):
        if not 1 <= rank < base.d_in:
            raise ValueError(f"LoRA rank {rank} must be in [1, {base.d_in})")
        self.weight = base.weight
        self.bias = base.bias
        self.d_in, self.d_out = base.d_in, base.d_out
        self.lora_A = Parameter(rng.normal(0.0, 1.0 / np.sqrt(base.d_in), size=(base.d_in, rank)))
        self.lora_B = Parameter(np.zeros((rank, base.d_out)))
        self.rank = rank

    def __call__(self, x):
        y = super().__call__(x)
        return y + dc.matmul(dc.matmul(x, self.lora_A), self.lora_B)


def iter_modules(module: Module, prefix: str = ""):
    yield prefix.rstrip("."), module
    for key, val in vars(module).items():
        if isinstance(val, Module):
            yield from iter_modules(val, f"{prefix}{key}.")
        elif isinstance(val, (list, tuple)):
            for i, item in enumerate(val):
                if isinstance(item, Module):
                    yield from iter_modules(item, f"{prefix}{key}.{i}.")


def lora_wrap(model: Module, rank: int, rng: np.random.Generator,
              projections: tuple[str, ...] = ("q", "k", "v"), root: Module | None = None) -> list[LoRALinear]:
    """Freeze ``model`` and add adapters to every self-attention input projection.

    Returns the adapters; callers unfreeze any extra parameters themselves.
    Each adapter adds ``r * (d_in + d_out)`` trainable entries. Parameter
    names are re-derived from ``root`` (default ``model``).
    """
    model.set_trainable(False)
    adapters = []
    for _, mod in list(iter_modules(model)):
        if isinstance(mod, MultiHeadAttention) and mod.is_self:
            for name in projections:
                base = getattr(mod, name)
                if isinstance(base, LoRALinear):
                    raise ValueError("model already carries LoRA adapters")
                wrapped = LoRALinear(base, rank, rng)
                setattr(mod, name, wrapped)
                adapters.append(wrapped)
    for a in adapters:
        a.lora_A.requires_grad = True
        a.lora_B.requires_grad = True
    (root or model).assign_names()
    return adapters
