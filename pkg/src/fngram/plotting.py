"""Figures written next to the tab-separated reports."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "figure.figsize": (5.0, 3.2),
    "savefig.dpi": 120,
    # fixed metadata keeps PNG output byte-stable across runs
    "svg.hashsalt": "fngram",
}


def loss_curve(path, steps: Sequence[int], losses: Sequence[float],
               stream_losses: Sequence[Sequence[float]] | None = None) -> None:
    """Total loss (and per-stream losses when given) against step, log-scaled."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, losses, color="k", lw=1.2, label="total")
        if stream_losses:
            for j, series in enumerate(zip(*stream_losses)):
                ax.plot(steps, series, lw=0.8, ls="--", label=f"stream {j}")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        if min(losses) > 0:
            ax.set_yscale("log")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def metric_bars(path, scores: dict[str, float]) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(scores)
        ax.bar(range(len(names)), [scores[k] for k in names], color="0.4")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("score")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
