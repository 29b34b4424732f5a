"""Matplotlib report figures rendered alongside the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_range_miou_figure(path, bin_edges, per_bin_miou, global_miou) -> None:
    """Bar chart of per-depth-bin mIoU with the global value as a line."""
    labels = [f"{int(lo)}-{int(hi)}m" for lo, hi in zip(bin_edges, bin_edges[1:])]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, per_bin_miou, color="#4878cf")
    ax.axhline(global_miou, color="#d65f5f", linestyle="--",
               label=f"global {global_miou:.3f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mIoU")
    ax.set_xlabel("depth from camera")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_figure(path, losses) -> None:
    """Training loss curve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(losses) + 1), losses)
    ax.set_xlabel("step")
    ax.set_ylabel("weighted BCE loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
