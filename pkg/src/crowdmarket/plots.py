"""Figure rendering for the experiment report path.

Each simulate command writes these PNGs next to its CSV tables: deviation
curves with 10th-90th percentile bands for the consensus sweeps, and a
reputation x adversary-share heatmap for the combined pipeline.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import SummaryPoint

_STRATEGY_STYLE = {
    "median": ("tab:green", "median"),
    "mean_median_fixed": ("tab:blue", "mean-median (fixed s)"),
    "mean_median_sqrt": ("tab:red", "mean-median (s = sqrt(n))"),
    "committee_mean_median": ("tab:purple", "elected committee + mean-median"),
}


def save_deviation_plot(
    summary: Sequence[SummaryPoint], path: str | Path, title: str
) -> Path:
    """Mean deviation vs adversary share, one curve per strategy."""
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    strategies = sorted({p.strategy for p in summary})
    for strategy in strategies:
        rows = sorted(
            (p for p in summary if p.strategy == strategy),
            key=lambda p: p.adversary_share,
        )
        x = np.array([p.adversary_share for p in rows]) * 100
        mean = np.array([p.mean_deviation for p in rows])
        lo = np.array([p.p10_deviation for p in rows])
        hi = np.array([p.p90_deviation for p in rows])
        color, label = _STRATEGY_STYLE.get(strategy, (None, strategy))
        ax.plot(x, mean, color=color, label=label, lw=1.6)
        ax.fill_between(x, lo, hi, color=color, alpha=0.18, lw=0)
    ax.set_xlabel("adversary share (%)")
    ax.set_ylabel("|consensus value - ground truth|")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_breakdown_heatmap(
    summary: Sequence[SummaryPoint], path: str | Path, title: str
) -> Path:
    """Mean deviation over the (rep share, adversary share) grid."""
    reps = sorted({p.rep_share for p in summary if p.rep_share is not None})
    shares = sorted({p.adversary_share for p in summary})
    grid = np.full((len(reps), len(shares)), np.nan)
    lookup = {(p.rep_share, p.adversary_share): p.mean_deviation for p in summary}
    for i, rep in enumerate(reps):
        for j, share in enumerate(shares):
            grid[i, j] = lookup.get((rep, share), np.nan)
    fig, ax = plt.subplots(figsize=(8, 4.2))
    im = ax.imshow(
        grid,
        origin="lower",
        aspect="auto",
        cmap="viridis",
        extent=(
            100 * (shares[0] - 0.5 * (shares[1] - shares[0])) if len(shares) > 1 else 0,
            100 * (shares[-1] + 0.5 * (shares[1] - shares[0])) if len(shares) > 1 else 100,
            -0.5,
            len(reps) - 0.5,
        ),
    )
    ax.set_yticks(range(len(reps)), [f"{100 * r:.0f}%" for r in reps])
    ax.set_xlabel("adversary share (%)")
    ax.set_ylabel("high-reputation share of honest agents")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="mean |deviation|")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
