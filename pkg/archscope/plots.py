"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Static Plots
========================
PNG renderings of result tables. Optional: without matplotlib every
function logs a warning and returns None.
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

try:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False

logger = logging.getLogger(__name__)

PALETTE = ["#2563eb", "#10b981", "#f59e0b", "#ef4444", "#8b5cf6", "#64748b"]


def _unavailable(what: str) -> bool:
    if not HAS_MATPLOTLIB:
        logger.warning("matplotlib not installed; skipping %s plot", what)
        return True
    return False


def _save(fig, save_path: Path) -> Path:
    save_path = Path(save_path)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(save_path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    return save_path


def plot_rho_vs_budget(df: pd.DataFrame, save_path: Path, group: str = "mode", x: str = "budget",
                       title: str = "Spearman rho vs. sample budget") -> Optional[Path]:
    """Seed-mean rho per group with a min/max band."""
    if _unavailable("rho-vs-budget"):
        return None
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (name, part) in enumerate(df.groupby(group, sort=True)):
        stats = part.groupby(x)["rho"].agg(["mean", "min", "max"]).reset_index()
        color = PALETTE[i % len(PALETTE)]
        ax.plot(stats[x], stats["mean"], marker="o", color=color, label=str(name))
        ax.fill_between(stats[x], stats["min"], stats["max"], color=color, alpha=0.15)
    ax.set_xscale("log")
    ax.set_xlabel(x.replace("_", " ").title())
    ax.set_ylabel("Spearman rho")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, save_path)


def plot_search_curves(df: pd.DataFrame, save_path: Path, group: str = "mode") -> Optional[Path]:
    """Median best-so-far against samples used."""
    if _unavailable("search"):
        return None
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (name, part) in enumerate(df.groupby(group, sort=True)):
        med = part.groupby("samples")["best_target"].median()
        ax.step(med.index, med.values, where="post", color=PALETTE[i % len(PALETTE)], label=str(name))
    ax.set_xlabel("Samples")
    ax.set_ylabel("Best target so far (median over seeds)")
    ax.set_title("Predictor-guided search")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, save_path)


def plot_correlation_heatmap(matrix: pd.DataFrame, save_path: Path,
                             title: str = "Latency rank correlation") -> Optional[Path]:
    if _unavailable("heatmap"):
        return None
    n = len(matrix)
    fig, ax = plt.subplots(figsize=(max(5, 0.45 * n + 2), max(4, 0.45 * n + 1.5)))
    image = ax.imshow(matrix.values.astype(float), cmap="RdYlGn", vmin=-1, vmax=1)
    ax.set_xticks(np.arange(n))
    ax.set_yticks(np.arange(n))
    ax.set_xticklabels(matrix.columns, rotation=90, fontsize=8)
    ax.set_yticklabels(matrix.index, fontsize=8)
    ax.set_title(title)
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, save_path)
