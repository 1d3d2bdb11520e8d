"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backprop, no_grad


class NonFiniteError(ArithmeticError):
    pass


def _scalar(out: Tensor) -> float:
    val = float(np.asarray(out.data).reshape(-1)[0])
    if not np.isfinite(val):
        raise NonFiniteError(f"function returned non-finite value {val}")
    return val


def numeric_gradient(fn: Callable[[], Tensor], leaves: Sequence[Tensor], eps: float = 1e-3) -> list[np.ndarray]:
    """Central differences of ``fn()`` w.r.t. every entry of every leaf."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = []
    with no_grad():
        for leaf in leaves:
            flat = leaf.data.reshape(-1)
            g = np.zeros(flat.size)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                fp = _scalar(fn())
                flat[k] = orig - eps
                fm = _scalar(fn())
                flat[k] = orig
                g[k] = (fp - fm) / (2 * eps)
            out.append(g.reshape(leaf.shape))
    return out


def finite_diff_check(
    fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    eps: float = 1e-3,
    analytic: Sequence[np.ndarray] | None = None,
    elementwise: bool = False,
) -> float:
    """Relative disagreement between backprop and central differences.

    Default (normwise, per leaf): ``max|analytic - central| / max(1e-8, max|central|)``,
    worst leaf reported. ``elementwise=True`` divides coordinate by coordinate
    instead, which is dominated by O(eps^2) truncation on near-zero entries.

    ``fn`` closes over ``leaves`` (tensors with ``requires_grad``) and must be
    deterministic. ``analytic`` overrides the backprop gradients, which is
    how the checker itself is calibrated.
    """
    leaves = list(leaves)
    if analytic is None:
        for leaf in leaves:
            leaf.grad = np.zeros_like(leaf.data)
        loss = fn()
        _scalar(loss)
        backprop(loss)
        analytic = [leaf.grad.copy() for leaf in leaves]
    numeric = numeric_gradient(fn, leaves, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if not n.size:
            continue
        diff = np.abs(np.asarray(a) - n)
        if elementwise:
            rel = diff / np.maximum(1e-8, np.abs(n))
        else:
            rel = diff.max() / max(1e-8, float(np.abs(n).max()))
        if np.size(rel):
            worst = max(worst, float(rel.max()))
    return worst
