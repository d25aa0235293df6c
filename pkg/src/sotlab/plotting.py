"""Figures written next to the text report."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scoring import OVERFLOW, CountingMatrix, ScoreSummary  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# PNG metadata would otherwise carry the matplotlib version string
_META = {"Software": None}


def wer_by_speakers(summary: ScoreSummary, path, label: str = "model") -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        keys = [str(s) for s in summary.wer_by_speakers] + ["Total"]
        vals = [100 * w for w in summary.wer_by_speakers.values()] + [100 * summary.total_wer]
        bars = ax.bar(keys, vals, color=["0.55"] * (len(keys) - 1) + ["0.2"])
        for b, v in zip(bars, vals):
            ax.annotate(f"{v:.1f}", (b.get_x() + b.get_width() / 2, v), ha="center", va="bottom",
                        fontsize=8, xytext=(0, 2), textcoords="offset points")
        ax.set_xlabel("# of speakers in test data")
        ax.set_ylabel("WER (%)")
        ax.set_title(label)
        fig.savefig(path, metadata=_META)
        plt.close(fig)


def counting_heatmap(matrix: CountingMatrix, path) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 0.6 + 0.6 * len(matrix.actual)))
        data = 100 * np.asarray(matrix.fractions)
        ax.imshow(data, cmap="Greys", vmin=0, vmax=100, aspect="auto")
        for i in range(data.shape[0]):
            for j in range(data.shape[1]):
                ax.text(j, i, f"{data[i, j]:.1f}", ha="center", va="center",
                        color="white" if data[i, j] > 60 else "black", fontsize=8)
        ax.set_xticks(range(OVERFLOW), [str(i) for i in range(1, OVERFLOW)] + [f">={OVERFLOW}"])
        ax.set_yticks(range(len(matrix.actual)), [str(a) for a in matrix.actual])
        ax.set_xlabel("Estimated # of speakers (%)")
        ax.set_ylabel("Actual # of speakers")
        fig.savefig(path, metadata=_META)
        plt.close(fig)
