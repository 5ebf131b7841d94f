"""Three-panel projection plot of a 3D embedding, written as SVG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PANELS = ((0, 1, "x", "y"), (0, 2, "x", "z"), (1, 2, "y", "z"))


def label_colors(labels: Sequence[str]) -> dict[str, str]:
    """Colour per label, fixed by the label's rank in sorted order."""
    names = sorted(set(labels))
    if len(names) <= 10:
        cmap = plt.get_cmap("tab10")
        cols = [cmap(i) for i in range(len(names))]
    else:
        cmap = plt.get_cmap("hsv")
        cols = [cmap(i / len(names)) for i in range(len(names))]
    return {name: matplotlib.colors.to_hex(c) for name, c in zip(names, cols)}


def emit_plot(coords: np.ndarray, labels: Sequence[str], path: str | Path | None = None, title: str | None = None):
    """Scatter the xy, xz and yz projections, one colour per label.

    Returns the figure; if ``path`` is given it is saved there as SVG.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    labels = list(labels)
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    colors = label_colors(labels)
    lab = np.asarray(labels)
    with plt.rc_context({"svg.hashsalt": "scimoe", "svg.fonttype": "path"}):
        fig, axes = plt.subplots(1, 3, figsize=(13, 4.4))
        for ax, (i, j, xi, yj) in zip(axes, PANELS):
            for name, color in colors.items():
                pts = coords[lab == name]
                ax.scatter(pts[:, i], pts[:, j], s=9, color=color, label=name, linewidths=0)
            ax.set_xlabel(xi)
            ax.set_ylabel(yj)
            ax.set_title(f"{xi}{yj} projection", fontsize=10)
        if colors:
            axes[-1].legend(loc="center left", bbox_to_anchor=(1.02, 0.5), frameon=False, fontsize=9)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        if path is not None:
            fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return fig
