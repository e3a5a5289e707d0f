"""Figure rendering for sweep outputs.

Renders PNGs next to the CSV files.  Everything here is presentation only;
the numbers always come from the evaluator rows, never recomputed.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluator import SweepRow


def _by_policy(rows: Sequence[SweepRow]) -> dict[str, list[SweepRow]]:
    groups: dict[str, list[SweepRow]] = {}
    for row in rows:
        groups.setdefault(row.policy_id, []).append(row)
    return groups


def _style(policy_id: str) -> dict:
    if policy_id.startswith("adaptive"):
        return {"linestyle": "-", "marker": "o"}
    return {"linestyle": "--", "marker": "s"}


def plot_rd_curve(rows: Sequence[SweepRow], path: str | Path) -> Path:
    """Dynamic distortion against bitrate, one line per policy."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for pid, group in sorted(_by_policy(rows).items()):
        pts = sorted(
            ((r.bitrate_mbps, r.d_dyn) for r in group if r.d_dyn is not None),
            key=lambda xy: xy[0],
        )
        if pts:
            ax.plot(*zip(*pts), label=pid, **_style(pid))
    ax.set_xlabel("bitrate (Mb/s)")
    ax.set_ylabel("dynamic embedding distortion")
    ax.set_title("rate vs distortion (lossless link)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_loss_robustness(rows: Sequence[SweepRow], path: str | Path) -> Path:
    """Dynamic distortion against drop probability at the fixed loss-study budget."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for pid, group in sorted(_by_policy(rows).items()):
        pts = sorted(
            ((r.drop_prob, r.d_dyn) for r in group if r.d_dyn is not None),
            key=lambda xy: xy[0],
        )
        if pts:
            ax.plot(*zip(*pts), label=pid, **_style(pid))
    ax.set_xlabel("delta drop probability")
    ax.set_ylabel("dynamic embedding distortion")
    ax.set_title("loss robustness")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_keyframes_vs_tau(rows: Sequence[SweepRow], path: str | Path) -> Path:
    """Keyframes per clip against the drift threshold, one line per budget."""
    budgets = sorted({r.budget_bytes for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for budget in budgets:
        pts = sorted(
            ((r.tau_h, r.keyframes_per_clip) for r in rows if r.budget_bytes == budget and r.tau_h is not None),
            key=lambda xy: xy[0],
        )
        if pts:
            ax.plot(*zip(*pts), marker="o", label=f"B={budget}")
    ax.set_xlabel("drift threshold tau_h")
    ax.set_ylabel("keyframes per clip")
    ax.set_title("keyframe rate vs threshold")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_utility_vs_bitrate(rows: Sequence[SweepRow], path: str | Path) -> Path:
    """Probe perplexity (dynamic cells) against bitrate, one line per policy."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for pid, group in sorted(_by_policy(rows).items()):
        pts = sorted(
            ((r.bitrate_mbps, r.ppl_dyn) for r in group if r.ppl_dyn is not None),
            key=lambda xy: xy[0],
        )
        if pts:
            ax.plot(*zip(*pts), label=pid, **_style(pid))
    ax.set_xlabel("bitrate (Mb/s)")
    ax.set_ylabel("next-token perplexity (dynamic cells)")
    ax.set_title("utility vs bitrate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_change_rate_hist(
    samples: np.ndarray, thresholds: Mapping[str, float], path: str | Path
) -> Path:
    """Histogram of per-step change fractions with percentile threshold marks."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(samples, bins=80, color="steelblue")
    ax.set_yscale("log")
    for i, (label, value) in enumerate(sorted(thresholds.items())):
        ax.axvline(value, color=f"C{i + 1}", linestyle="--", label=f"{label}: {value:.4f}")
    ax.set_xlabel("per-step changed fraction")
    ax.set_ylabel("count (log)")
    ax.set_title("change-rate distribution")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
