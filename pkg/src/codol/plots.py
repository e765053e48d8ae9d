"""Figure rendering for sweep, ratio and alignment reports.

Uses the Agg backend and writes PNG files next to the delimited reports.
Figures carry fixed metadata so identical inputs produce identical bytes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import AlignmentReport
from .report import percent

_PNG_KWARGS = {"dpi": 180, "metadata": {"Software": "codol"}}


def _save(fig: plt.Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)
    return path


def save_sweep_heatmap(sweep_rows: Sequence[dict[str, Any]], path: str | Path) -> Path:
    """Average accuracy as a class-length by domain-length heatmap."""
    mcs = sorted({r["M_c"] for r in sweep_rows})
    mks = sorted({r["M_k"] for r in sweep_rows})
    grid = np.full((len(mcs), len(mks)), np.nan)
    for r in sweep_rows:
        grid[mcs.index(r["M_c"]), mks.index(r["M_k"])] = percent(r["average"])
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(mks), 1.2 + 0.9 * len(mcs)))
    im = ax.imshow(grid, cmap="viridis")
    ax.set_xticks(range(len(mks)), [str(v) for v in mks])
    ax.set_yticks(range(len(mcs)), [str(v) for v in mcs])
    ax.set_xlabel("domain context length")
    ax.set_ylabel("class context length")
    for i in range(len(mcs)):
        for j in range(len(mks)):
            if not np.isnan(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(im, ax=ax, label="avg accuracy (%)")
    fig.tight_layout()
    return _save(fig, path)


def save_ratio_curve(rows: Sequence[dict[str, Any]], path: str | Path) -> Path:
    """Mean accuracy versus domain-label ratio with a seed-spread band."""
    ratios = [r["ratio"] for r in rows]
    means = [percent(r["mean"]) for r in rows]
    spreads = [percent(r.get("spread", 0.0)) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(ratios, means, yerr=[s / 2 for s in spreads], marker="o", capsize=3)
    ax.set_xlabel("domain label ratio")
    ax.set_ylabel("avg accuracy (%)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def _alignment_axes(ax: plt.Axes, matrix: np.ndarray, classes: Sequence[str], title: str) -> Any:
    im = ax.imshow(matrix, cmap="magma")
    ax.set_xticks(range(len(classes)), classes, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(classes)), classes, fontsize=8)
    ax.set_xlabel("prompt class")
    ax.set_ylabel("image class")
    ax.set_title(title, fontsize=9)
    return im


def save_alignment_heatmaps(rep: AlignmentReport, path: str | Path) -> Path:
    """Side-by-side cosine heatmaps: full prompts versus domain-ablated."""
    fig, axes = plt.subplots(1, 2, figsize=(2.5 + 1.6 * len(rep.class_names), 2.2 + 0.8 * len(rep.class_names)))
    t_full = f"with domain blocks (diag {rep.matched_full:.3f})"
    t_abl = f"ablated (diag {rep.matched_ablated:.3f})"
    im0 = _alignment_axes(axes[0], rep.full, rep.class_names, t_full)
    _alignment_axes(axes[1], rep.ablated, rep.class_names, t_abl)
    fig.colorbar(im0, ax=list(axes), shrink=0.8, label="mean cosine")
    return _save(fig, path)
