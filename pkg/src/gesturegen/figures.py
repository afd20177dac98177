"""Matplotlib rendering for reports: metric bars, loss curves, pose strips.

Every report path writes figures next to its delimited output so results
can be eyeballed without extra tooling. The Agg backend keeps this fully
headless.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_BONE_COLOR = "#3A6EA5"
_JOINT_COLOR = "#1F2D3D"


def save_metric_report_figure(report, path, title="evaluation metrics"):
    """Bar chart of a MetricReport with 95% CI error bars."""
    names = sorted(report.means)
    values = [report.means[n] for n in names]
    errors = [report.ci95.get(n) or 0.0 for n in names]

    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(names)), 4))
    x = np.arange(len(names))
    ax.bar(x, values, yerr=errors, capsize=4, color=_BONE_COLOR, alpha=0.85)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_title(f"{title} (mean ± 95% CI over {report.runs} runs)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(history, path, title="training loss"):
    """Line plot of per-epoch loss records (list of dicts with 'epoch')."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [h["epoch"] for h in history]
    for key in sorted(history[0]):
        if key == "epoch":
            continue
        ax.plot(epochs, [h[key] for h in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _draw_pose(ax, joints, parents):
    for j, p in enumerate(parents):
        if p < 0:
            continue
        ax.plot(
            [joints[p, 0], joints[j, 0]],
            [joints[p, 1], joints[j, 1]],
            color=_BONE_COLOR, linewidth=1.5,
        )
    ax.scatter(joints[:, 0], joints[:, 1], s=4, c=_JOINT_COLOR, zorder=3)
    ax.set_aspect("equal")
    ax.axis("off")


def save_pose_strip(positions, skeleton, path, frames=6, title=None):
    """Front-view (x, y) stick-figure strip sampled across the clip."""
    T = positions.shape[0]
    picks = np.linspace(0, T - 1, frames).astype(int)
    fig, axes = plt.subplots(1, frames, figsize=(2.0 * frames, 3))
    if frames == 1:
        axes = [axes]
    for ax, t in zip(axes, picks):
        _draw_pose(ax, positions[t][:, [0, 1]], skeleton.parent_indices)
        ax.set_title(f"t={t}", fontsize=8)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trajectory_figure(positions, skeleton, path, title="root trajectory"):
    """Top-down root path plus height profile."""
    root = positions[:, skeleton.root_index]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(root[:, 0], root[:, 2], color=_BONE_COLOR)
    ax1.scatter([root[0, 0]], [root[0, 2]], c="green", s=30, label="start", zorder=3)
    ax1.scatter([root[-1, 0]], [root[-1, 2]], c="red", s=30, label="end", zorder=3)
    ax1.set_xlabel("x (m)")
    ax1.set_ylabel("z (m)")
    ax1.set_title("top-down path")
    ax1.legend(fontsize=8)
    ax1.set_aspect("equal")
    ax1.grid(alpha=0.3)
    ax2.plot(np.arange(len(root)), root[:, 1], color=_JOINT_COLOR)
    ax2.set_xlabel("frame")
    ax2.set_ylabel("root height (m)")
    ax2.set_title("height profile")
    ax2.grid(alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
