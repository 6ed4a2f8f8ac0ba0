"""Report figures.  Every function writes one file and returns its path."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_k_sweep(summary: Sequence[dict], path: str | Path) -> Path:
    """Precision, recall and F1 (0-100) against K, with +-1 std bars when available."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ks = [row["k"] for row in summary]
        for metric, marker in (("f1", "o"), ("precision", "s"), ("recall", "^")):
            mean = np.array([np.nan if r[f"{metric}_mean"] is None else 100 * r[f"{metric}_mean"] for r in summary])
            std = np.array([0.0 if r[f"{metric}_std"] is None else 100 * r[f"{metric}_std"] for r in summary])
            ax.errorbar(ks, mean, yerr=std, marker=marker, capsize=3, label=metric.upper() if metric == "f1" else metric.capitalize())
        ax.set_xscale("log")
        ax.set_xticks(ks)
        ax.set_xticklabels([str(k) for k in ks])
        ax.set_xlabel("K (labels per EventID)")
        ax.set_ylabel("score (%)")
        ax.legend()
        return _save(fig, path)


def plot_method_comparison(rows: Sequence[dict], path: str | Path) -> Path:
    """Grouped bars of precision/recall/F1/AUROC per method."""
    metrics = ("precision", "recall", "f1", "auroc")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.4))
        x = np.arange(len(rows))
        width = 0.8 / len(metrics)
        for j, m in enumerate(metrics):
            vals = [0.0 if r[m] is None else 100 * r[m] for r in rows]
            ax.bar(x + (j - 1.5) * width, vals, width, label=m.upper() if m in ("f1", "auroc") else m.capitalize())
        ax.set_xticks(x)
        ax.set_xticklabels([r["method"] for r in rows], rotation=15, ha="right")
        ax.set_ylim(0, 105)
        ax.set_ylabel("score (%)")
        ax.legend(ncol=4, loc="lower center", bbox_to_anchor=(0.5, 1.0))
        return _save(fig, path)


def plot_score_distributions(scores: np.ndarray, labels: np.ndarray, paths: np.ndarray, names: Sequence[str], path: str | Path) -> Path:
    """Score histograms by true label, one panel per scored path."""
    scored = [p for p in range(len(names)) if np.any((paths == p) & np.isfinite(scores))]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, max(1, len(scored)), figsize=(3.2 * max(1, len(scored)), 3.0), squeeze=False)
        bins = np.linspace(0, 1, 41)
        for ax, p in zip(axes[0], scored):
            m = (paths == p) & np.isfinite(scores)
            for lab, name in ((0, "normal"), (1, "anomaly")):
                vals = scores[m & (labels == lab)]
                if len(vals):
                    ax.hist(vals, bins=bins, alpha=0.6, label=f"{name} ({len(vals)})", log=True)
            ax.set_title(f"{names[p]} path")
            ax.set_xlabel("score")
            ax.legend()
        axes[0][0].set_ylabel("lines")
        return _save(fig, path)


def plot_labeling_cost(cost: Sequence[dict], path: str | Path) -> Path:
    """Label count and reduction factor against K."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ks = [c["k"] for c in cost]
        ax.plot(ks, [c["labels"] for c in cost], marker="o", color="C0")
        ax.set_xlabel("K (labels per EventID)")
        ax.set_ylabel("labels", color="C0")
        ax2 = ax.twinx()
        ax2.plot(ks, [c["reduction"] for c in cost], marker="s", color="C1")
        ax2.set_ylabel("reduction (offline lines / labels)", color="C1")
        ax2.grid(False)
        return _save(fig, path)
