"""Matplotlib renderings of the report CSVs (written alongside them)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_dimension_curve(rows, path):
    """Plot (D, MAE, RMSE) rows as error-vs-dimension curves."""
    dims = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(dims, [r[1] for r in rows], "o-", label="MAE")
    ax.plot(dims, [r[2] for r in rows], "s--", label="RMSE")
    ax.set_xlabel("dimension D")
    ax.set_ylabel("error (stars)")
    ax.set_xticks(dims)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_iteration_curve(rows, path):
    """Plot (iteration, train objective, test MAE) rows on twin axes."""
    iters = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iters, [r[1] for r in rows], "o-", color="tab:blue", label="train objective")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("train objective", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(iters, [r[2] for r in rows], "s--", color="tab:red", label="test MAE")
    ax2.set_ylabel("test MAE (stars)", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_profile_bars(profile, path):
    """Grouped bar chart of stereotype affinities per tag."""
    n_tags = len(profile.tags)
    d = profile.dimension
    x = np.arange(n_tags)
    width = 0.8 / d
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * n_tags * d), 4))
    for w in range(d):
        ax.bar(x + (w - (d - 1) / 2) * width, profile.matrix[:, w], width,
               label=f"stereotype {w + 1}")
    ax.axhline(0.5, color="gray", linewidth=0.8, linestyle=":")
    ax.set_xticks(x)
    ax.set_xticklabels(profile.tags, rotation=60, ha="right")
    ax.set_ylabel("like probability")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
