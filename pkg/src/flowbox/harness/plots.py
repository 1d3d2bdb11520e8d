"""SVG reports: loss curves, error against NFE, 2D scatter."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("loss-curve", "error-vs-nfe", "scatter2d")
HEADER = "desk-scale metrics: MMD^2 / energy distance stand in for FAD-style scores"


def plot_report(series: dict, kind: str, path, title: str | None = None) -> Path:
    """``series`` maps a tag to (x, y) arrays; scatter2d takes (N, 2) points per tag."""
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    if not series or any(len(np.asarray(v[0] if kind != "scatter2d" else v)) == 0 for v in series.values()):
        raise ValueError("empty series")
    plt.rcParams["svg.hashsalt"] = "flowbox"
    fig, ax = plt.subplots(figsize=(5, 4))
    for tag, val in series.items():
        if kind == "scatter2d":
            pts = np.asarray(val)
            ax.plot(pts[:, 0], pts[:, 1], "o", ms=1.5, alpha=0.5, label=tag, linestyle="none")
        else:
            x, y = val
            ax.plot(x, y, "-o" if kind == "error-vs-nfe" else "-", label=tag, ms=3)
    if kind == "loss-curve":
        ax.set(xlabel="step", ylabel="loss")
    elif kind == "error-vs-nfe":
        ax.set(xlabel="NFE", ylabel="error", xscale="log", yscale="log")
    else:
        ax.set(xlabel="x1", ylabel="x2", aspect="equal")
    ax.set_title(title or kind, fontsize=9)
    ax.legend(fontsize=7)
    fig.text(0.01, 0.01, HEADER, fontsize=5)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
