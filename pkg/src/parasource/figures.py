"""Matplotlib rendering of run products to image files (no interactive use)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["save_decay", "save_field"]


def save_decay(path, series: dict, title=None, ylabel="error"):
    """Semilog decay curves, one per labelled series, against the sweep index."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, values in series.items():
        vals = np.asarray(values, dtype=float)
        # semilogy chokes on exact zeros; clip to a visible floor
        ax.semilogy(np.arange(vals.size), np.maximum(vals, 1e-300),
                    marker="o", markersize=4, label=label)
    ax.set_xlabel("iteration k")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_field(path, mesh, values, title=None):
    """Render a nodal field on the triangulation as a filled color map."""
    tri = mtri.Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    img = ax.tripcolor(tri, np.asarray(values, dtype=float), shading="gouraud")
    fig.colorbar(img, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
