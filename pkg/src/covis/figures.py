"""Matplotlib renderings written next to each report's delimited output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 110
_SAVE_KW = {"dpi": _DPI, "metadata": {"Software": None}}


def save_covis_figure(maps, score, path) -> None:
    """Montage of covisibility maps plus the per-view mean bar chart."""
    n = len(maps)
    fig, axes = plt.subplots(1, n + 1, figsize=(3.0 * (n + 1), 3.0))
    axes = np.atleast_1d(axes)
    vmax = max(1, max(m.n_views - 1 for m in maps))
    for ax, cmap in zip(axes[:n], maps):
        im = ax.imshow(cmap.counts, cmap="gray", vmin=0, vmax=vmax)
        ax.set_title(f"view {cmap.view_id}")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=list(axes[:n]), shrink=0.8)
    bar = axes[n]
    bar.bar(
        [m.view_id for m in maps], score.per_view_means, color="tab:blue", width=0.6
    )
    bar.axhline(score.S, color="tab:red", linestyle="--", label=f"scene S={score.S:.3f}")
    bar.set_ylim(0, 1.05)
    bar.set_xlabel("view")
    bar.set_ylabel("mean covisibility")
    bar.legend(loc="upper right", fontsize=8)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_stage_sizes_figure(stats: dict, path) -> None:
    """Bar chart of point counts through the enhancement stages."""
    labels = ["colmap", "triangulated", "merged", "low", "high", "final"]
    values = [
        stats["n_colmap"],
        stats["n_triangulated"],
        stats["n_merged"],
        stats["n_merged_low"],
        stats["n_merged_high"],
        stats["n_final"],
    ]
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.bar(labels, values, color="tab:blue")
    for i, v in enumerate(values):
        ax.text(i, v, str(v), ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("points")
    ax.set_title("point-cloud enhancement stages")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_curve_figure(xs, ys, xlabel, ylabel, title, path, logy=False) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(xs, ys, color="tab:blue")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_loss_eval_figure(result, path) -> None:
    """Score histogram split by frustum membership, plus weight histogram."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.5))
    inside = result.chi.astype(bool)
    bins = np.linspace(0.0, 1.0, 41)
    ax1.hist(result.scores[inside], bins=bins, alpha=0.7, label="in frustum")
    ax1.hist(result.scores[~inside], bins=bins, alpha=0.7, label="out of frustum")
    ax1.set_xlabel("proximity score")
    ax1.set_ylabel("gaussians")
    ax1.legend(fontsize=8)
    ax2.hist(result.weights, bins=bins, color="tab:green")
    ax2.set_xlabel("weight")
    ax2.set_title(f"loss {result.total:.6f}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
