"""Report figures, rendered straight to PNG files.

Figures are built with the object-oriented API (no pyplot state), so the
module is safe to call from tests and headless runs.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

CLASS_COLORS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def _save(fig: Figure, path, stamp: str | None) -> None:
    FigureCanvasAgg(fig)
    metadata = {"Software": None}
    if stamp:
        metadata["Description"] = stamp
    fig.savefig(path, dpi=110, metadata=metadata)


def bench_figure(hp_rows, rf_rows, path, stamp: str | None = None) -> None:
    """Kernel-approximation error: HP by order (bottom axis), RF by count (top axis)."""
    fig = Figure(figsize=(6, 3.6))
    ax = fig.add_subplot(111)
    if hp_rows:
        order, err, sd = np.asarray(hp_rows, dtype=float).T
        ax.semilogy(order, err, "o-", color="#1f77b4", label="HP (order)")
    ax.set_xlabel("HP order")
    ax.set_ylabel("mean |k - k_hat|")
    if rf_rows:
        count, err, sd = np.asarray(rf_rows, dtype=float).T
        top = ax.twiny()
        top.errorbar(count, err, yerr=sd, fmt="s--", color="#d62728", label="RF (features)")
        top.set_xscale("log")
        top.set_xlabel("number of random features")
        top.legend(loc="upper right")
    ax.legend(loc="lower left")
    fig.tight_layout()
    _save(fig, path, stamp)


def scatter_figure(X, y, path, means=None, title: str = "", stamp: str | None = None) -> None:
    """Samples coloured by label; optional cluster means as crosses."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(111)
    for k in np.unique(y):
        pts = X[y == k]
        ax.scatter(pts[:, 0], pts[:, 1], s=3, alpha=0.5, color=CLASS_COLORS[k % len(CLASS_COLORS)],
                   label=f"class {k}")
    if means is not None:
        means = np.asarray(means)
        ax.scatter(means[:, 0], means[:, 1], marker="x", s=30, color="black", linewidths=1)
    ax.set_aspect("equal")
    ax.set_title(title)
    if len(y):
        ax.legend(loc="upper right", fontsize=7, markerscale=3)
    fig.tight_layout()
    _save(fig, path, stamp)


def marginals_figure(real: dict, synth: dict, path, stamp: str | None = None) -> None:
    """One bar panel per column: real vs. synthetic 1-way frequencies."""
    names = list(real)
    fig = Figure(figsize=(2.4 * len(names), 2.6))
    for i, name in enumerate(names):
        ax = fig.add_subplot(1, len(names), i + 1)
        r = np.asarray(real[name]).astype(int)
        s = np.asarray(synth[name]).astype(int) if name in synth else np.zeros(0, dtype=int)
        levels = np.arange(max(r.max(initial=0), s.max(initial=0)) + 1)
        pr = np.bincount(r, minlength=len(levels)) / max(len(r), 1)
        ps = np.bincount(s, minlength=len(levels)) / max(len(s), 1)
        ax.bar(levels - 0.2, pr, width=0.4, label="real", color="#999999")
        ax.bar(levels + 0.2, ps, width=0.4, label="synthetic", color="#d95f02")
        ax.set_title(name, fontsize=9)
        ax.set_xticks(levels)
    fig.axes[0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path, stamp)


def loss_figure(losses, path, stamp: str | None = None) -> None:
    fig = Figure(figsize=(5, 3))
    ax = fig.add_subplot(111)
    ax.semilogy(np.arange(len(losses)), losses, color="#1f77b4")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    fig.tight_layout()
    _save(fig, path, stamp)
