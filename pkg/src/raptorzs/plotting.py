"""Figures written next to benchmark tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METHOD_LABELS = {"rzs": "RZS", "rda": "RDA", "vda": "VDA", "scanline": "Scanline"}


def _normalized(v):
    v = np.asarray(v, dtype=float)
    top = np.nanmax(v) if len(v) else 0
    return v / top if top else v


def plot_cost_series(rows: list[dict], path, x_key: str = "ns") -> Path:
    """One panel per method: normalized estimate against normalized wall time and tile loads."""
    path = Path(path)
    methods = sorted({r["method"] for r in rows})
    fig, axes = plt.subplots(1, len(methods), figsize=(5 * len(methods), 4), squeeze=False)
    for ax, method in zip(axes[0], methods):
        rs = sorted((r for r in rows if r["method"] == method), key=lambda r: r[x_key])
        x = [r[x_key] for r in rs]
        ax.loglog(x, _normalized([r["estimate"] for r in rs]), "s-", label="estimated cost")
        ax.loglog(x, _normalized([r["wall_time"] for r in rs]), "o--", label="wall time")
        ax.loglog(x, _normalized([r["tile_loads"] for r in rs]), "^:", label="tile loads")
        ax.set_title(METHOD_LABELS.get(method, method))
        ax.set_xlabel("line segments")
        ax.set_ylabel("normalized value")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(xs, ys, path, xlabel: str, ylabel: str = "wall time (s)", title: str | None = None) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogx(xs, ys, "o-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
