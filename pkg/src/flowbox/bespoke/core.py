"""Learned time reparameterisation and scalar state scaling around a fixed-step solver.

Knots: the solver runs on a uniform grid r_i = i/n; the physical time at each
knot is t_i = cumsum(softplus(theta_r))_i / sum, and the state is scaled by
s(r) = exp(piecewise-linear(theta_s)). Inside segment i the transformed field is

    ubar(r, xbar) = (dlog s/dr) xbar + s(r) dt/dr u(xbar / s(r), t(r))

so that with theta_r constant and theta_s = 0 a step is the base step itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from flowbox import diffcore as dc
from flowbox.diffcore import Parameter, Tensor
from flowbox.odesolve import FIXED_METHODS, DerivativeField, SolverConfig, SolverError, as_field, fixed_step, integrate_dopri5

log = logging.getLogger(__name__)


class BespokeParams:
    def __init__(self, n: int = 4, theta_r=None, theta_s=None):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.theta_r = Parameter(np.zeros(n) if theta_r is None else np.asarray(theta_r, float), "theta_r")
        self.theta_s = Parameter(np.zeros(n + 1) if theta_s is None else np.asarray(theta_s, float), "theta_s")
        if self.theta_r.shape != (n,) or self.theta_s.shape != (n + 1,):
            raise ValueError("theta_r needs n entries and theta_s n+1")

    @classmethod
    def identity(cls, n: int = 4) -> "BespokeParams":
        return cls(n)

    def parameters(self) -> list[Parameter]:
        return [self.theta_r, self.theta_s]

    @property
    def num_parameters(self) -> int:
        return self.theta_r.size + self.theta_s.size

    def knots(self) -> Tensor:
        """t_0 = 0 < t_1 < ... < t_n = 1 (differentiable)."""
        inc = dc.softplus(self.theta_r)
        c = dc.concat([dc.as_tensor(np.zeros(1)), _cumsum(inc)], axis=0)
        return c / c[self.n]

    def log_scales(self) -> Tensor:
        return self.theta_s * 1.0

    def state_dict(self) -> dict:
        return {"theta_r": self.theta_r.data.copy(), "theta_s": self.theta_s.data.copy()}

    @classmethod
    def from_state(cls, state: dict) -> "BespokeParams":
        return cls(len(state["theta_r"]), state["theta_r"], state["theta_s"])


def _cumsum(x: Tensor) -> Tensor:
    # sequential adds: keeps t_i bitwise equal to i/n for equal increments and power-of-two n
    parts = [x[0:1]]
    for i in range(1, x.shape[0]):
        parts.append(parts[-1] + x[i:i + 1])
    return dc.concat(parts, axis=0)


def time_reparam(theta_r, r) -> np.ndarray:
    """Map solver time r in [0,1] to physical time; monotone, pinned at 0 and 1."""
    p = BespokeParams(len(theta_r), theta_r)
    with dc.no_grad():
        knots = p.knots().data
    grid = np.linspace(0.0, 1.0, p.n + 1)
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("r must lie in [0, 1]")
    return np.interp(r, grid, knots)


def _segment(params: BespokeParams, i: int, knots: Tensor, logs: Tensor):
    h = 1.0 / params.n
    r_prev = (i - 1) * h
    t_prev = knots[i - 1]
    tdot = (knots[i] - knots[i - 1]) * (1.0 / h)
    ls_prev = logs[i - 1]
    dlogs = (logs[i] - logs[i - 1]) * (1.0 / h)
    return h, r_prev, t_prev, tdot, ls_prev, dlogs


def bespoke_step(params: BespokeParams, i: int, fld, x, base_method: str = "midpoint",
                 knots: Tensor | None = None, logs: Tensor | None = None):
    """Step i (1-based) from t_{i-1} to t_i; returns (t_i, x_i).

    ``x`` may be an array or a Tensor; gradients reach both x and theta.
    """
    if base_method not in FIXED_METHODS:
        raise ValueError(f"base method must be fixed-step, got {base_method!r}")
    knots = params.knots() if knots is None else knots
    logs = params.log_scales() if logs is None else logs
    h, r_prev, t_prev, tdot, ls_prev, dlogs = _segment(params, i, knots, logs)

    def ubar(xb, r):
        dr = r - r_prev
        s = dc.exp(ls_prev + dlogs * dr)
        t = t_prev + tdot * dr
        return dlogs * xb + (s * tdot) * fld(xb / s, t)

    s0 = dc.exp(ls_prev)
    xb = dc.as_tensor(x) * s0
    xb_next = fixed_step(base_method, ubar, r_prev, xb, h)
    s1 = dc.exp(logs[i])
    x_next = xb_next / s1
    if not np.all(np.isfinite(x_next.data)):
        raise SolverError(f"non-finite bespoke state at step {i}")
    return knots[i], x_next


def bespoke_sample(params: BespokeParams, fld, x0, base_method: str = "midpoint"):
    """Run all n steps without gradients; returns (x1, nfe, model_calls)."""
    fld = as_field(fld)
    nfe0, calls0 = fld.nfe, fld.model_calls

    def f(x, t):
        # no gradients needed here, so plain-numpy fields work too
        y = fld(x.data if isinstance(x, Tensor) else x, float(t.data) if isinstance(t, Tensor) else t)
        return y.data if isinstance(y, Tensor) else y

    with dc.no_grad():
        knots, logs = params.knots(), params.log_scales()
        x = dc.as_tensor(np.asarray(x0, dtype=np.float64))
        for i in range(1, params.n + 1):
            _, x = bespoke_step(params, i, f, x, base_method, knots, logs)
    return x.data, fld.nfe - nfe0, fld.model_calls - calls0


@dataclass
class GroundTruth:
    x0: np.ndarray  # (B, ...)
    checkpoints: np.ndarray  # (B, N+1, ...)
    velocities: np.ndarray  # field value at every checkpoint
    weight: float = 0.0
    skipped: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.checkpoints.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1)

    def subset(self, idx) -> "GroundTruth":
        return GroundTruth(self.x0[idx], self.checkpoints[idx], self.velocities[idx], self.weight)


def generate_gt(make_field, x0: np.ndarray, N: int = 200, weight: float = 0.0, atol: float = 1e-5,
                rtol: float = 1e-5, chunk: int = 256, max_evals: int = 10_000) -> GroundTruth:
    """Dense dopri5 trajectories sampled at N+1 uniform times.

    The field is also evaluated at every checkpoint so that knot states can be
    read off a C1 cubic Hermite interpolant.

    ``make_field(idx)`` returns the field for rows ``idx`` of ``x0`` (so any
    per-row conditioning can be sliced). A failing chunk is retried row by
    row; rows that still fail are skipped and logged.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    times = np.linspace(0.0, 1.0, N + 1)
    cfg = SolverConfig("dopri5", atol=atol, rtol=rtol, checkpoints=times, max_evals=max_evals)
    keep, ckpts, vels, skipped = [], [], [], []

    def run(idx):
        fld = make_field(idx)
        _, tr = integrate_dopri5(fld, x0[idx], cfg, record=False)
        states = tr.checkpoint_states
        states[0] = x0[idx]
        with dc.no_grad():
            v = [np.asarray(getattr(y := fld(states[k], float(t)), "data", y)) for k, t in enumerate(times)]
        ckpts.append(np.moveaxis(states, 0, 1))
        vels.append(np.moveaxis(np.stack(v), 0, 1))

    for start in range(0, len(x0), chunk):
        idx = np.arange(start, min(len(x0), start + chunk))
        try:
            run(idx)
            keep.extend(idx)
        except SolverError:
            for j in idx:
                try:
                    run(np.array([j]))
                    keep.append(j)
                except SolverError as err:
                    log.warning("ground-truth trajectory %d skipped: %s", j, err)
                    skipped.append(int(j))
    if not keep:
        raise SolverError("every ground-truth trajectory failed")
    return GroundTruth(x0[keep], np.concatenate(ckpts, axis=0), np.concatenate(vels, axis=0), weight, skipped)


def interp_checkpoints(gt: GroundTruth, t) -> Tensor:
    """Cubic Hermite interpolation of the checkpoints at a (Tensor) time; differentiable in t."""
    t = dc.as_tensor(t)
    tv = float(t.data)
    if not -1e-12 <= tv <= 1 + 1e-12:
        raise ValueError(f"knot time {tv} outside checkpoint range [0, 1]")
    N = gt.N
    k = min(int(np.floor(tv * N)), N - 1)
    k = max(k, 0)
    s = t * N - k
    dt = 1.0 / N
    ya, yb = gt.checkpoints[:, k], gt.checkpoints[:, k + 1]
    fa, fb = gt.velocities[:, k] * dt, gt.velocities[:, k + 1] * dt
    s2 = s * s
    s3 = s2 * s
    h00 = s3 * 2.0 - s2 * 3.0 + 1.0
    h10 = s3 - s2 * 2.0 + s
    h01 = s2 * 3.0 - s3 * 2.0
    h11 = s3 - s2
    return h00 * ya + h10 * fa + h01 * yb + h11 * fb


def _row_norm(d: Tensor) -> Tensor:
    axes = tuple(range(1, d.ndim))
    return dc.sqrt((d * d).sum(axis=axes))


def bespoke_loss(params: BespokeParams, gt: GroundTruth, fld, base_method: str = "midpoint") -> Tensor:
    """Mean over trajectories of sum_i || x(t_i) - step(t_{i-1}, x(t_{i-1})) ||."""
    knots, logs = params.knots(), params.log_scales()
    total = None
    x_prev = interp_checkpoints(gt, knots[0])
    for i in range(1, params.n + 1):
        x_true = interp_checkpoints(gt, knots[i])
        _, x_pred = bespoke_step(params, i, fld, x_prev, base_method, knots, logs)
        d = _row_norm(x_true - x_pred)
        total = d if total is None else total + d
        x_prev = x_true
    return total.mean()


def end_state_rmse(x: np.ndarray, gt: GroundTruth) -> float:
    return float(np.sqrt(np.mean((np.asarray(x) - gt.checkpoints[:, -1]) ** 2)))


class BespokeDivergence(RuntimeError):
    pass


@dataclass
class BespokeConfig:
    n_steps: int = 4
    base_method: str = "midpoint"
    iters: int = 300
    batch: int = 128
    lr: float = 2e-2
    warmup: int = 10
    seed: int = 0


def train_bespoke(fld, gt: GroundTruth, cfg: BespokeConfig, params: BespokeParams | None = None,
                  callback=None, make_field=None):
    """Adam on theta only; returns (params, loss curve). Aborts on 10x loss growth.

    ``make_field(idx)``, when given, replaces ``fld`` and returns the field for
    trajectory rows ``idx`` (per-row conditioning such as class labels).
    """
    from flowbox.diffcore import AdamState, adam_step

    params = params or BespokeParams.identity(cfg.n_steps)
    state = AdamState(lr=cfg.lr, clip=None, warmup=cfg.warmup)
    rng = np.random.default_rng(cfg.seed)
    B = len(gt.x0)
    curve = []
    for it in range(cfg.iters):
        idx = rng.choice(B, size=min(cfg.batch, B), replace=False)
        f = make_field(idx) if make_field is not None else fld
        loss = bespoke_loss(params, gt.subset(idx), f, cfg.base_method)
        dc.backprop(loss, params.parameters())
        value = float(loss.data)
        if not np.isfinite(value) or (curve and value > 10 * curve[0]):
            raise BespokeDivergence(f"bespoke loss diverged at iter {it}: {value:.4g} (initial {curve[0] if curve else float('nan'):.4g}); "
                                    f"theta_r={params.theta_r.data}, theta_s={params.theta_s.data}")
        curve.append(value)
        adam_step(params.parameters(), state)
        if callback:
            callback(it, value)
    return params, curve
