"""Matplotlib figure rendering for reports, boundaries and improvements.

Figures are written to files next to the delimited outputs; no interactive
backend is required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_accuracy_hist(report, path, title: str = "Episode accuracy") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(report.per_episode, bins=20, color="#4878a8", edgecolor="white")
    ax.axvline(report.mean, color="#c44e52", lw=2,
               label=f"mean {report.mean:.4f} +/- {report.ci95:.4f}")
    ax.set_xlabel("per-episode accuracy")
    ax.set_ylabel("episodes")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_paired_hist(vanilla, transformed, path, title: str = "Paired episode accuracy") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(0.0, 1.0, 21)
    ax.hist(vanilla.per_episode, bins=bins, alpha=0.6, label=f"vanilla {vanilla.mean:.4f}")
    ax.hist(transformed.per_episode, bins=bins, alpha=0.6, label=f"transformed {transformed.mean:.4f}")
    ax.set_xlabel("per-episode accuracy")
    ax.set_ylabel("episodes")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_class_deltas(table, path, title: str = "Per-class improvement") -> None:
    classes = [row["class"] for row in table]
    deltas = [row["delta"] for row in table]
    colors = ["#55a868" if d >= 0 else "#c44e52" for d in deltas]
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(classes)), 4))
    ax.bar([str(c) for c in classes], deltas, color=colors)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("novel class")
    ax.set_ylabel("accuracy delta (transformed - vanilla)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_boundary(grid, bounds, path, points=None, labels=None, title: str = "Decision boundary") -> None:
    x0, x1, y0, y1 = bounds
    fig, ax = plt.subplots(figsize=(5, 5))
    lim = np.abs(grid).max() or 1.0
    ax.imshow(grid, origin="lower", extent=(x0, x1, y0, y1), cmap="RdBu_r",
              vmin=-lim, vmax=lim, aspect="auto")
    ax.contour(np.linspace(x0, x1, grid.shape[1]), np.linspace(y0, y1, grid.shape[0]),
               grid, levels=[0.0], colors="black", linewidths=1.5)
    if points is not None:
        points = np.asarray(points)
        labels = np.zeros(len(points)) if labels is None else np.asarray(labels)
        for lab in np.unique(labels):
            sel = labels == lab
            ax.scatter(points[sel, 0], points[sel, 1], s=12, label=f"class {int(lab)}")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curve(history, path, title: str = "Functional training") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(history["train_mse"]))
    ax.plot(epochs, history["train_mse"], label="train MSE")
    if history.get("val_mse") and not np.isnan(history["val_mse"][0]):
        ax.plot(epochs, history["val_mse"], label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("tuple MSE")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
