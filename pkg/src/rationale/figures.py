"""Matplotlib figure output for the evaluation and benchmark paths.

Figures land next to the delimited/JSON artifacts; nothing here is consumed
back by the library, so styling stays minimal.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_score_histogram(
    scores_by_class: dict[str, np.ndarray],
    path: str | Path,
    title: str = "Token score distribution",
) -> None:
    """Histogram of token scores, one overlaid series per document class."""
    fig, ax = plt.subplots(figsize=(7, 4))
    bins = np.linspace(0.0, 1.0, 41)
    for label, scores in scores_by_class.items():
        scores = np.asarray(scores, dtype=float)
        if scores.size == 0:
            continue
        frac_high = float((scores > 0.9).mean())
        ax.hist(scores, bins=bins, alpha=0.55,
                label=f"{label} (>{0.9:.1f}: {100 * frac_high:.1f}%)")
    ax.axvline(0.5, color="grey", lw=1, ls="--")
    ax.set_xlabel("token score")
    ax.set_ylabel("tokens")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_bars(
    names: Sequence[str],
    seconds: Sequence[float],
    path: str | Path,
    title: str = "Seconds per epoch",
) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ypos = np.arange(len(names))
    ax.barh(ypos, seconds, color="#4878a8")
    ax.set_yticks(ypos, labels=list(names))
    ax.invert_yaxis()
    ax.set_xlabel("seconds per epoch")
    ax.set_title(title)
    for y, s in zip(ypos, seconds):
        ax.text(s, y, f" {s:.1f}", va="center")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
