"""Figures for simulation runs. Always renders off-screen."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GB = 1e9

plt.rcParams.update({
    "figure.figsize": (7.0, 3.6),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "svg.hashsalt": "fairio",
})


def _save(fig, path):
    # drop the timestamp so reruns produce the same file
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_throughput(metrics, path, title=""):
    """Per-job GB/s per window, with the aggregate as a dashed line."""
    fig, ax = plt.subplots()
    t = np.arange(metrics.n_windows) * metrics.window_s
    total = np.zeros(metrics.n_windows)
    for k in metrics.job_ids:
        y = metrics.job_bytes[k] / metrics.window_s / GB
        total += y
        ax.plot(t, y, lw=1.2, label=k)
    ax.plot(t, total, "k--", lw=0.8, label="aggregate")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("throughput (GB/s)")
    if title:
        ax.set_title(title)
    ax.legend(ncol=min(len(metrics.job_ids) + 1, 5), loc="upper right")
    _save(fig, path)


def plot_compare(results: dict, job, path):
    """Left: aggregate bytes per policy. Right: the job's per-window share."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 3.6))
    names = list(results)
    a.bar(names, [results[p].aggregate_bytes() / GB for p in names], color="0.6")
    a.set_ylabel("completed (GB)")
    for p in names:
        m = results[p]
        w = m.sharing_windows() & m.active[job]
        t = np.arange(m.n_windows)[w] * m.window_s
        b.plot(t, m.window_shares(job)[w], marker=".", lw=0.8, label=f"{p} (std {m.share_std(job):.4f})")
    b.set_xlabel("time (s)")
    b.set_ylabel(f"{job} share")
    b.legend()
    _save(fig, path)
