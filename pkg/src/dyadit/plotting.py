"""Figures written next to training logs and metric reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import joint_speed  # noqa: E402
from .motion_repr import to_pose_features  # noqa: E402


def plot_losses(history: list[dict], path, x_key: str, y_keys=("loss",), title: str = ""):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = [row[x_key] for row in history]
    for key in y_keys:
        ys = [row.get(key, np.nan) for row in history]
        ax.plot(xs, ys, marker="o", ms=2.5, lw=1.2, label=key)
    ax.set_yscale("log")
    ax.set_xlabel(x_key)
    ax.set_title(title, fontsize=10)
    ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return Path(path)


def _pose_stats(clips):
    feats = np.concatenate([to_pose_features(c).reshape(len(c), -1) for c in clips])
    return feats.mean(0), feats.std(0)


def plot_pose_statistics(generated, reference, path):
    """Per-dimension pose mean and spread, generated against reference."""
    g_mean, g_std = _pose_stats(generated)
    r_mean, r_std = _pose_stats(reference)
    dims = np.arange(len(g_mean))
    fig, axes = plt.subplots(2, 1, figsize=(8, 4.5), sharex=True)
    for ax, g, r, label in ((axes[0], g_mean, r_mean, "mean"), (axes[1], g_std, r_std, "std")):
        ax.plot(dims, r, lw=1.0, color="0.3", label="reference")
        ax.plot(dims, g, lw=1.0, color="C3", alpha=0.8, label="generated")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(frameon=False, fontsize=8, ncol=2)
    axes[1].set_xlabel("pose feature (axis x joint)")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return Path(path)


def plot_speed_histogram(generated, reference, path, bins: int = 60):
    speeds = {}
    for name, clips in (("reference", reference), ("generated", generated)):
        speeds[name] = np.concatenate([joint_speed(to_pose_features(c))[1:] for c in clips])
    hi = max(np.percentile(v, 99.5) for v in speeds.values())
    edges = np.linspace(0, hi, bins + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for (name, values), color in zip(speeds.items(), ("0.4", "C3")):
        ax.hist(values, bins=edges, density=True, histtype="step", lw=1.3, color=color, label=name)
    ax.set_xlabel("summed joint speed (rad/s)")
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
    return Path(path)


def report_figures(generated, reference, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        plot_pose_statistics(generated, reference, out_dir / "pose_statistics.png"),
        plot_speed_histogram(generated, reference, out_dir / "speed_histogram.png"),
    ]
