"""Matplotlib rendering of the analysis exports: chord diagrams and radar charts.

Figures are written to files next to the delimited data; no interactive backend
is required.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import N_REGIONS

_DIRECTION_COLORS = {"declined": "#3b6fb5", "enhanced": "#c44e52"}


def render_chord(rows: list[dict], path: str | Path, title: str = "") -> None:
    """Draw significant region-pair connections on a circular layout.

    Expects rows shaped like the chord CSV: region_i/region_j (1-indexed),
    mean_diff, direction.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    angles = 2.0 * math.pi * np.arange(N_REGIONS) / N_REGIONS
    xs, ys = np.cos(angles), np.sin(angles)

    fig, ax = plt.subplots(figsize=(6, 6))
    max_diff = max((abs(r["mean_diff"]) for r in rows), default=1.0) or 1.0
    for r in rows:
        i, j = r["region_i"] - 1, r["region_j"] - 1
        color = _DIRECTION_COLORS.get(r["direction"], "gray")
        alpha = 0.15 + 0.85 * min(abs(r["mean_diff"]) / max_diff, 1.0)
        ax.plot([xs[i], xs[j]], [ys[i], ys[j]], color=color, alpha=alpha, linewidth=0.7)
    ax.scatter(xs, ys, s=8, color="black", zorder=3)
    for k in range(0, N_REGIONS, 10):
        ax.annotate(str(k + 1), (1.08 * xs[k], 1.08 * ys[k]),
                    ha="center", va="center", fontsize=7)
    handles = [
        plt.Line2D([0], [0], color=c, label=d) for d, c in _DIRECTION_COLORS.items()
    ]
    ax.legend(handles=handles, loc="upper right", fontsize=7, frameon=False)
    ax.set_title(title or f"{len(rows)} significant connections")
    ax.set_aspect("equal")
    ax.axis("off")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_radar(metrics_by_method: dict[str, dict[str, float]], path: str | Path,
                 title: str = "Classification performance") -> None:
    """Radar chart of accuracy/sensitivity/specificity/F1 per method."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    categories = ["accuracy", "sensitivity", "specificity", "f1"]
    angles = np.linspace(0, 2 * math.pi, len(categories), endpoint=False).tolist()
    angles += angles[:1]

    fig, ax = plt.subplots(figsize=(5, 5), subplot_kw={"projection": "polar"})
    for method in sorted(metrics_by_method):
        values = [metrics_by_method[method][c] for c in categories]
        values += values[:1]
        ax.plot(angles, values, linewidth=1.2, label=method)
        ax.fill(angles, values, alpha=0.12)
    ax.set_xticks(angles[:-1])
    ax.set_xticklabels(categories, fontsize=8)
    ax.set_ylim(0, 100)
    ax.set_title(title, fontsize=10)
    ax.legend(loc="lower right", fontsize=7, frameon=False)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
