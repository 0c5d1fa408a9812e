"""Static SVG line charts (matplotlib, Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str = "",
              logx: bool = False, logy: bool = False) -> str:
    """Write one SVG with a polyline per entry of ``series``.

    Log axes silently fall back to linear when the data has nonpositive
    values (e.g. a flat zero overshoot curve).
    """
    x = np.asarray(x, dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for name, y in series.items():
        ax.plot(x, np.asarray(y, dtype=float), marker="o", label=name)
    ys = np.concatenate([np.asarray(y, dtype=float).ravel() for y in series.values()]) \
        if series else np.array([1.0])
    if logx and np.all(x > 0):
        ax.set_xscale("log")
    if logy and np.all(ys > 0):
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return str(path)
