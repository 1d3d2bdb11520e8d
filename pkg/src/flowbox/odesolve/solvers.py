"""Explicit ODE solvers with evaluation accounting.

Fields follow ``field(x, t) -> dx/dt`` on numpy arrays; a Tensor return value
is unwrapped. Fixed-step methods: euler, midpoint, rk4. Adaptive: dopri5.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Tensor

FIXED_METHODS = {"euler": 1, "midpoint": 2, "rk4": 4}
METHODS = tuple(FIXED_METHODS) + ("dopri5",)


class SolverError(RuntimeError):
    def __init__(self, msg: str, trace: "SolverTrace | None" = None, t: float | None = None):
        super().__init__(msg)
        self.trace = trace
        self.t = t


class DerivativeField:
    """Counts evaluations; ``calls_per_eval`` model passes are charged per evaluation."""

    def __init__(self, fn: Callable, calls_per_eval: int = 1):
        self.fn = fn
        self.calls_per_eval = calls_per_eval
        self.nfe = 0

    @property
    def model_calls(self) -> int:
        return self.nfe * self.calls_per_eval

    def __call__(self, x, t):
        self.nfe += 1
        out = self.fn(x, t)
        if out.shape != x.shape:
            raise dc.ShapeError("field", x.shape, out.shape, detail="derivative shape must equal state shape")
        return out


def as_field(f) -> DerivativeField:
    return f if isinstance(f, DerivativeField) else DerivativeField(f)


def guided_field(cond_fn: Callable, uncond_fn: Callable, weight: float) -> DerivativeField:
    """CFG wrapper: one conditional and one unconditional model pass per evaluation."""
    from flowbox.flowmatch.guidance import cfg_field

    def fn(x, t):
        # keep the graph when differentiating through a step (bespoke training)
        keep = isinstance(x, Tensor) or isinstance(t, Tensor)
        u, v = cond_fn(x, t), uncond_fn(x, t)
        return cfg_field(u, v, weight) if keep else cfg_field(_value(u), _value(v), weight)

    return DerivativeField(fn, calls_per_eval=2)


@dataclass
class SolverConfig:
    method: str = "midpoint"
    step_size: float = 0.0625
    atol: float = 1e-5
    rtol: float = 1e-5
    t_span: tuple = (0.0, 1.0)
    max_evals: int = 10_000
    checkpoints: np.ndarray | None = None  # dense-output times (dopri5)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if self.method in FIXED_METHODS and not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.method == "dopri5" and not (self.atol > 0 and self.rtol > 0):
            raise ValueError("tolerances must be > 0")
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError("t_span must be increasing")

    def num_steps(self) -> int:
        t0, t1 = self.t_span
        return max(1, int(np.ceil((t1 - t0) / self.step_size - 1e-9)))


@dataclass
class SolverTrace:
    times: list = dc_field(default_factory=list)
    states: list = dc_field(default_factory=list)
    nfe: int = 0
    model_calls: int = 0
    rejected: int = 0
    checkpoint_states: np.ndarray | None = None

    def rows(self) -> list[tuple]:
        """(t, ||x||, nfe so far) per accepted time; nfe is spread evenly for fixed steps."""
        n = max(1, len(self.times) - 1)
        return [(float(t), float(np.linalg.norm(x)), int(round(self.nfe * i / n)))
                for i, (t, x) in enumerate(zip(self.times, self.states))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm", "nfe"])
            for r in self.rows():
                w.writerow([repr(r[0]), repr(r[1]), r[2]])


def _value(y):
    return y.data if isinstance(y, Tensor) else y


def _check_finite(x, t, trace):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite state at t={t:.6g}", trace, t)


def fixed_step(method: str, f: Callable, t: float, x, h: float):
    """One explicit step; operation order is part of the contract (bespoke identity relies on it)."""
    if method == "euler":
        return x + h * f(x, t)
    if method == "midpoint":
        k1 = f(x, t)
        k2 = f(x + (h / 2) * k1, t + h / 2)
        return x + h * k2
    if method == "rk4":
        k1 = f(x, t)
        k2 = f(x + (h / 2) * k1, t + h / 2)
        k3 = f(x + (h / 2) * k2, t + h / 2)
        k4 = f(x + h * k3, t + h)
        return x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    raise ValueError(f"{method!r} is not a fixed-step method")


def integrate_fixed(fld, x0, cfg: SolverConfig, record: bool = True):
    if cfg.method not in FIXED_METHODS:
        raise ValueError(f"integrate_fixed needs a fixed method, got {cfg.method!r}")
    fld = as_field(fld)
    start_nfe, start_calls = fld.nfe, fld.model_calls
    t0, t1 = cfg.t_span
    n = cfg.num_steps()
    x = np.asarray(x0, dtype=np.float64)
    trace = SolverTrace()
    if record:
        trace.times.append(t0)
        trace.states.append(x.copy())
    f = lambda y, s: _value(fld(y, s))  # noqa: E731
    with dc.no_grad():
        for i in range(n):
            t = t0 + i * cfg.step_size
            h = min(cfg.step_size, t1 - t)
            x = fixed_step(cfg.method, f, t, x, h)
            t_next = t1 if i == n - 1 else t + h
            trace.nfe = fld.nfe - start_nfe
            _check_finite(x, t_next, trace)
            if record:
                trace.times.append(t_next)
                trace.states.append(x.copy())
    trace.nfe = fld.nfe - start_nfe
    trace.model_calls = fld.model_calls - start_calls
    return x, trace


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 5.0
BETA = 0.04
EXPO = 0.2 - 0.75 * BETA


def _rms(v) -> float:
    return float(np.sqrt(np.mean(np.square(v))))


def _initial_step(f, t0, x0, f0, order, atol, rtol, span):
    sc = atol + rtol * np.abs(x0)
    d0, d1 = _rms(x0 / sc), _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(x0 + h0 * f0, t0 + h0)
    d2 = _rms((f1 - f0) / sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1, span)


def _hermite(t, ta, tb, ya, yb, fa, fb):
    h = tb - ta
    s = (t - ta) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * ya + h10 * h * fa + h01 * yb + h11 * h * fb


def integrate_dopri5(fld, x0, cfg: SolverConfig, record: bool = True):
    """Adaptive Dormand-Prince with FSAL, PI step control and cubic Hermite dense output."""
    fld = as_field(fld)
    start_nfe, start_calls = fld.nfe, fld.model_calls
    t0, t1 = cfg.t_span
    x = np.asarray(x0, dtype=np.float64).copy()
    trace = SolverTrace()

    def sync():
        trace.nfe = fld.nfe - start_nfe
        trace.model_calls = fld.model_calls - start_calls

    def f(y, s):
        if fld.nfe - start_nfe >= cfg.max_evals:
            sync()
            raise SolverError(f"max_evals={cfg.max_evals} exceeded at t={s:.6g}", trace, s)
        return _value(fld(y, s))

    ckpts = None if cfg.checkpoints is None else np.asarray(cfg.checkpoints, dtype=np.float64)
    if ckpts is not None and (np.any(ckpts < t0) or np.any(ckpts > t1)):
        raise ValueError("checkpoint times must lie inside t_span")
    dense = [None] * (0 if ckpts is None else len(ckpts))
    ci = 0
    if record:
        trace.times.append(t0)
        trace.states.append(x.copy())
    with dc.no_grad():
        t = t0
        k1 = f(x, t)
        h = _initial_step(f, t, x, k1, 4, cfg.atol, cfg.rtol, t1 - t0)
        err_old = 1e-4
        if ckpts is not None:
            while ci < len(ckpts) and ckpts[ci] <= t0:
                dense[ci] = x.copy()
                ci += 1
        while t < t1:
            if h < 1e-12 * max(1.0, abs(t)):
                sync()
                raise SolverError(f"step size underflow at t={t:.6g}", trace, t)
            last = t + h >= t1 - 1e-14
            if last:
                h = t1 - t
            ks = [k1]
            for s in range(1, 7):
                y = x.copy()
                for j, a in enumerate(_A[s]):
                    if a:
                        y = y + (h * a) * ks[j]
                ks.append(f(y, t + _C[s] * h))
            x_new = y  # stage-7 input equals the 5th-order solution
            err_vec = h * sum(e * k for e, k in zip(_E, ks) if e)
            sc = cfg.atol + cfg.rtol * np.maximum(np.abs(x), np.abs(x_new))
            err = _rms(err_vec / sc)
            if not np.isfinite(err):
                sync()
                raise SolverError(f"non-finite state at t={t + h:.6g}", trace, t + h)
            if err <= 1.0:
                t_new = t1 if last else t + h
                if ckpts is not None:
                    while ci < len(ckpts) and ckpts[ci] <= t_new:
                        dense[ci] = _hermite(ckpts[ci], t, t_new, x, x_new, ks[0], ks[6])
                        ci += 1
                fac = SAFETY * max(err, 1e-10) ** -EXPO * err_old ** BETA
                fac = min(FAC_MAX, max(FAC_MIN, fac))
                err_old = max(err, 1e-4)
                t, x, k1 = t_new, x_new, ks[6]
                if record:
                    trace.times.append(t)
                    trace.states.append(x.copy())
                h = h * fac
            else:
                trace.rejected += 1
                fac = max(FAC_MIN, SAFETY * err ** -EXPO)
                h = h * min(1.0, fac)
    sync()
    if ckpts is not None:
        trace.checkpoint_states = np.stack(dense)
    return x, trace


def integrate(fld, x0, cfg: SolverConfig, record: bool = True):
    if cfg.method == "dopri5":
        return integrate_dopri5(fld, x0, cfg, record)
    return integrate_fixed(fld, x0, cfg, record)
