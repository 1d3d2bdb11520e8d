"""Sample-set distances and the metrics CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

CSV_HEADER = ("run_id", "step", "metric", "value")


def _flat(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(len(x), -1)


def _sqdist(a, b):
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T, 0.0)


def median_bandwidth(a, b) -> float:
    z = np.concatenate([_flat(a), _flat(b)])
    if len(z) > 2000:
        z = z[np.random.default_rng(0).choice(len(z), 2000, replace=False)]
    d = _sqdist(z, z)
    med = np.median(d[np.triu_indices(len(z), 1)])
    return float(np.sqrt(0.5 * med)) if med > 0 else 1.0


def mmd2(a, b, bandwidth: float | None = None) -> float:
    """Unbiased Gaussian-kernel MMD^2; median-heuristic bandwidth when unset."""
    a, b = _flat(a), _flat(b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("mmd2 needs at least two samples per side")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    bw = median_bandwidth(a, b) if bandwidth is None else bandwidth
    g = 1.0 / (2 * bw * bw)
    kaa, kbb, kab = np.exp(-g * _sqdist(a, a)), np.exp(-g * _sqdist(b, b)), np.exp(-g * _sqdist(a, b))
    n, m = len(a), len(b)
    return float((kaa.sum() - np.trace(kaa)) / (n * (n - 1)) + (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
                 - 2 * kab.mean())


def energy_distance(a, b) -> float:
    a, b = _flat(a), _flat(b)
    dab = np.sqrt(_sqdist(a, b)).mean()
    return float(2 * dab - np.sqrt(_sqdist(a, a)).mean() - np.sqrt(_sqdist(b, b)).mean())


class MetricsWriter:
    """Append-only CSV of (run_id, step, metric, value); floats written with repr."""

    def __init__(self, path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(CSV_HEADER)

    def log(self, step: int, metric: str, value) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([self.run_id, int(step), metric, repr(float(value))])

    def log_many(self, rows) -> None:
        with open(self.path, "a", newline="") as fh:
            w = csv.writer(fh)
            for step, metric, value in rows:
                w.writerow([self.run_id, int(step), metric, repr(float(value))])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["step"] = int(r["step"])
        r["value"] = float(r["value"])
    return rows
