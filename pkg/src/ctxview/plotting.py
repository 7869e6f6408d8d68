"""Report figures rendered to PNG files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_METADATA = {"Software": None}
_DPI = 100


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    return Path(path)


def plot_confusion(cm, path, title="Viewpoint confusion (row-normalized)"):
    cm = np.asarray(cm, dtype=float)
    support = cm.sum(axis=1, keepdims=True)
    norm = np.divide(cm, support, out=np.zeros_like(cm), where=support > 0)
    K = cm.shape[0]
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    im = ax.imshow(norm, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(K))
    ax.set_yticks(range(K))
    ax.set_xlabel("predicted bin")
    ax.set_ylabel("true bin")
    ax.set_title(title, fontsize=9)
    if K <= 12:
        for i in range(K):
            for j in range(K):
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if norm[i, j] < 0.5 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return _save(fig, path)


def plot_taxonomy(taxonomy, path):
    kinds = list(taxonomy)
    counts = [taxonomy[k] for k in kinds]
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.bar(kinds, counts, color=["#4c72b0", "#55a868", "#c44e52", "#8172b2"][:len(kinds)])
    ax.set_ylabel("matched objects")
    ax.set_title("Viewpoint error groups", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_split(split, path):
    """MPPE and AVP of the low and high object-count subsets, side by side."""
    metrics = ("mppe", "avp")
    x = np.arange(len(metrics))
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    for offset, side in ((-0.2, "low"), (0.2, "high")):
        values = [split[side].get(m) or 0.0 for m in metrics]
        ax.bar(x + offset, values, width=0.4, label=f"{side} ({split[side]['n_images']} images)")
    ax.set_xticks(x)
    ax.set_xticklabels([m.upper() for m in metrics])
    ax.set_ylim(0.0, 1.0)
    ax.set_title(f"Objects per image <= {split['threshold']} vs above", fontsize=9)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def render_report_figures(report: dict, directory):
    """Write the figures of a report dictionary; returns the file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = [plot_confusion(report["confusion"], directory / "confusion.png").name,
             plot_taxonomy(report["taxonomy"], directory / "taxonomy.png").name]
    if report.get("split"):
        names.append(plot_split(report["split"], directory / "split.png").name)
    return names
