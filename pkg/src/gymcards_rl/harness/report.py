"""PNG figures drawn next to the CSV outputs."""

from __future__ import annotations

import math
from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _finite(xs: Sequence[float], ys: Sequence[float]) -> tuple[list[float], list[float]]:
    pts = [(x, y) for x, y in zip(xs, ys) if not math.isnan(y)]
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_training(rows: Sequence[dict], path: str | Path, title: str = "") -> Path:
    """Success rate and the thought/action log-prob magnitudes against env steps."""
    steps = [r["env_steps"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
    ax1.plot(*_finite(steps, [r["success_rate"] for r in rows]), marker=".", label="greedy success")
    ax1.plot(*_finite(steps, [r["fallback_rate"] for r in rows]), ls="--", label="fallback rate")
    ax1.set_xlabel("env steps")
    ax1.set_ylim(-0.02, 1.02)
    ax1.legend(loc="best")
    ax2.plot(*_finite(steps, [r["mean_abs_logp_tht"] for r in rows]), label="|logp| thought")
    ax2.plot(*_finite(steps, [r["mean_abs_logp_act"] for r in rows]), label="|logp| action")
    ax2.set_xlabel("env steps")
    ax2.set_yscale("symlog")
    ax2.legend(loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_sweep(curves: dict[str, list[tuple[int, float]]], path: str | Path, title: str = "") -> Path:
    """One success curve per label (e.g. per lambda)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pts in curves.items():
        xs, ys = _finite([p[0] for p in pts], [p[1] for p in pts])
        ax.plot(xs, ys, label=label)
    ax.set_xlabel("env steps")
    ax.set_ylabel("greedy success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_logp_bars(rows: Sequence[dict], path: str | Path) -> Path:
    tasks = [r["task"] for r in rows]
    x = range(len(tasks))
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.bar([i - 0.2 for i in x], [r["mean_abs_logp_tht"] for r in rows], width=0.4, label="thought")
    ax.bar([i + 0.2 for i in x], [r["mean_abs_logp_act"] for r in rows], width=0.4, label="action")
    ax.set_xticks(list(x))
    ax.set_xticklabels(tasks)
    ax.set_ylabel("mean |sum log-prob|")
    ax.set_yscale("symlog")
    ax.legend(loc="best")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
