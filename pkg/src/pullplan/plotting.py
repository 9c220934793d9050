"""Figure rendering for the report paths, written next to the CSV output."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_series_figure(
    path: str,
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    xlabel: str,
    ylabel: str,
    title: str,
    hlines: Mapping[str, float] | None = None,
) -> str:
    """Line plot of one or more (x, y) series; returns the written path."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, (xs, ys) in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2, label=label)
    if hlines:
        for label, y in hlines.items():
            ax.axhline(y, linestyle="--", linewidth=1.0, color="grey")
            ax.annotate(label, xy=(0.99, y), xycoords=("axes fraction", "data"),
                        ha="right", va="bottom", fontsize=8, color="grey")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
