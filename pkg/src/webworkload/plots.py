"""Static SVG figures for characterization reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .patterns import DAILY_GRID, WEEKLY_GRID, _horner  # noqa: E402

# stable SVG ids and no timestamp so reruns produce identical files
matplotlib.rcParams["svg.hashsalt"] = "webworkload"
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def profile_bars(profiles, path, field="cv_mean", title=None):
    """One bar per dataset: mean CV or mean burstiness."""
    fig, ax = plt.subplots(figsize=(6, 3))
    names = [p.dataset_id for p in profiles]
    vals = [getattr(p, field) for p in profiles]
    ax.bar(range(len(vals)), vals, color="#4c72b0")
    ax.set_xticks(range(len(vals)), names, rotation=45, ha="right")
    ax.set_ylabel("CV" if field == "cv_mean" else "burstiness")
    if field == "burstiness_mean":
        ax.set_ylim(-1, 1)
        ax.axhline(0, color="grey", lw=0.8)
    if title:
        ax.set_title(title)
    _save(fig, path)


def centroid_fits(model, fits, names, granularity, path):
    """Each centroid with its fitted polynomial drawn over it."""
    grid = DAILY_GRID if granularity == "daily" else WEEKLY_GRID
    k = model.k
    fig, axes = plt.subplots(1, k, figsize=(3 * k, 2.6), squeeze=False)
    dense = np.linspace(grid[0], grid[-1], 200)
    for j, ax in enumerate(axes[0]):
        ax.plot(grid, model.centroids[j], "o", ms=3, color="#4c72b0", label="centroid")
        ax.plot(dense, _horner(fits[j].coefficients, dense), color="#dd8452", label="fit")
        coefs = ", ".join(f"{c:.3f}" for c in fits[j].coefficients)
        ax.set_title(f"{names[j]} (n={int(model.sizes[j])})\n{coefs}", fontsize=8)
        ax.set_xlabel("hour" if granularity == "daily" else "day (1=Mon)")
    axes[0][0].legend(fontsize=7)
    _save(fig, path)


def time_dependence_bars(dist, path, title=None):
    labels = list(dist)
    buckets = list(next(iter(dist.values()))) if dist else []
    fig, ax = plt.subplots(figsize=(5, 3))
    width = 0.8 / max(len(buckets), 1)
    for i, b in enumerate(buckets):
        ax.bar(np.arange(len(labels)) + i * width, [dist[lab][b] for lab in labels], width,
               label=b)
    ax.set_xticks(np.arange(len(labels)) + 0.4 - width / 2, [str(x) for x in labels])
    ax.set_ylabel("% of rows")
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title)
    _save(fig, path)


def pca_scatter(X, labels, path, title=None):
    """First two principal components, coloured by cluster."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    pts = Xc @ vt[:2].T if vt.shape[0] >= 2 else np.column_stack([Xc @ vt[:1].T, np.zeros(len(X))])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(pts[:, 0], pts[:, 1], c=labels, cmap="tab10", s=8)
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    if title:
        ax.set_title(title)
    _save(fig, path)
