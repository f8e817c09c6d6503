"""Figure rendering for reports: training curves, per-type F1, corpus stats.

Every CLI command that writes a report or log can drop a PNG next to it;
these helpers do the drawing.  The Agg backend is forced so rendering works
headless.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .corpus import CorpusStats  # noqa: E402
from .evaluation import EvalReport  # noqa: E402
from .nn import EpochRecord  # noqa: E402


def training_curves(records: Sequence[EpochRecord], path: str,
                    dev_label: str = "dev loss") -> None:
    """Train loss and dev metric per epoch, learning rate on a second axis."""
    if not records:
        raise ValueError("no epoch records to plot")
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r.train_loss for r in records], label="train loss",
            color="tab:blue")
    ax.plot(epochs, [r.dev_metric for r in records], label=dev_label,
            color="tab:orange")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss / metric")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.lr for r in records], label="lr", color="tab:gray",
             linestyle="--", alpha=0.6)
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="best", fontsize=9)
    ax.set_title("training progress")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def f1_bars(report: EvalReport, path: str) -> None:
    """Per-type F1 bars with the micro score drawn as a reference line."""
    types = sorted(report.per_type)
    scores = [100.0 * report.per_type[t].f1 for t in types]
    micro = 100.0 * report.micro.f1
    fig, ax = plt.subplots(figsize=(max(5.0, 0.6 * len(types) + 2), 4.5))
    if types:
        ax.bar(range(len(types)), scores, color="tab:blue")
        ax.set_xticks(range(len(types)))
        ax.set_xticklabels(types, rotation=45, ha="right", fontsize=8)
    ax.axhline(micro, color="tab:red", linestyle="--",
               label=f"micro F1 = {micro:.2f}")
    ax.set_ylabel("F1 (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=9)
    ax.set_title("span F1 by entity type")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def entity_bars(columns: Sequence[tuple[str, CorpusStats]], path: str,
                top: int = 20) -> None:
    """Grouped entity-count bars per dataset split, most frequent types first."""
    if not columns:
        raise ValueError("no dataset columns to plot")
    totals: dict[str, int] = {}
    for _, stats in columns:
        for etype, count in stats.entity_counts.items():
            totals[etype] = totals.get(etype, 0) + count
    types = sorted(totals, key=lambda t: (-totals[t], t))[:top]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * len(types) + 2), 4.5))
    width = 0.8 / len(columns)
    for i, (label, stats) in enumerate(columns):
        xs = [j + i * width for j in range(len(types))]
        ax.bar(xs, [stats.entity_counts.get(t, 0) for t in types],
               width=width, label=label)
    if types:
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(types))])
        ax.set_xticklabels(types, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("entities")
    ax.legend(fontsize=9)
    ax.set_title("entity counts by split")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
