"""Deterministic SVG figures (no timestamps, fixed hash salt)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "subflow"


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def scatter_real_vs_generated(real, generated: dict, path) -> Path:
    """Real training points of every class in grey, generated tail draws in colour."""
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(real.x[:, 0], real.x[:, 1], s=1, c="0.8", label="real")
    for c, x in sorted(generated.items()):
        ax.scatter(x[:, 0], x[:, 1], s=1, label=f"class {c} (gen)")
    ax.set_aspect("equal")
    ax.legend(markerscale=6, fontsize=7, loc="upper right")
    return _save(fig, path)


def ablation_bars(summary: dict, path, key: str = "bacc") -> Path:
    names = [n for n in summary if key in summary[n]]
    vals = np.array([summary[n][key] for n in names])
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(range(len(names)), vals)
    ax.set_xticks(range(len(names)), names, rotation=20, fontsize=7)
    ax.set_ylim(vals.min() - 0.02, vals.max() + 0.01)
    ax.set_ylabel(key)
    fig.tight_layout()
    return _save(fig, path)
