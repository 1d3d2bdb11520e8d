"""Parameter containers and the basic layers everything else is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Parameter, Tensor


class Module:
    """Holds Parameters and child Modules as plain attributes.

    Names come from attribute paths (``layers.0.attn.q.weight``), which is
    also the key used by checkpoints and by Adam's moment table.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def assign_names(self) -> "Module":
        for name, p in self.named_parameters():
            p.name = name
        return self

    def set_trainable(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self, trainable_only: bool = False) -> int:
        ps = self.trainable_parameters() if trainable_only else self.parameters()
        return int(sum(p.data.size for p in ps))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching tensors in; returns names that were absent from ``state``."""
        missing = []
        own = dict(self.named_parameters())
        for name, p in own.items():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data[...] = arr
        if strict:
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"missing={missing} unexpected={unexpected}")
        return missing


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else _glorot(rng, d_in, d_out)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x):
        y = dc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, scale: float = 1.0):
        self.weight = Parameter(rng.normal(0.0, scale, size=(num, dim)))

    def __call__(self, ids):
        return self.weight[np.asarray(ids, dtype=np.int64)]


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return dc.layer_norm(x, self.eps) * self.gain + self.shift


class MLP(Module):
    """Stack of Linear+GELU layers with a linear head."""

    def __init__(self, d_in: int, hidden: int, d_out: int, depth: int, rng: np.random.Generator,
                 zero_head: bool = False):
        dims = [d_in] + [hidden] * depth
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.head = Linear(dims[-1], d_out, rng, zero_init=zero_head)

    def __call__(self, x):
        for layer in self.layers:
            x = dc.gelu(layer(x))
        return self.head(x)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = dc.sqrt((x * x).sum(axis=axis, keepdims=True) + eps)
    return x / norm
