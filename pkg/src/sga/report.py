"""Report rendering: tab-delimited records with matplotlib figures beside them."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .corpus import StatsReport
from .train import EpochRecord, EvalReport


def write_records(path: str | Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    """One header line, then tab-separated values."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), delimiter="\t", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_training_curves(log: Sequence[EpochRecord], path: str | Path) -> None:
    epochs = [r.epoch for r in log]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r.train_loss for r in log], label="train loss")
    ax_loss.plot(epochs, [r.val_loss for r in log], label="val loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("pairwise ranking loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [r.val_accuracy for r in log], label="val accuracy")
    ax_acc.plot(epochs, [r.val_f1 for r in log], label="val macro F1")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylim(0, 1)
    ax_acc.legend()
    _save(fig, path)


def _cells(results: Sequence[tuple[str, EvalReport | str]]):
    ok = [(label, rep) for label, rep in results if isinstance(rep, EvalReport)]
    return [label for label, _ in ok], [rep for _, rep in ok]


def plot_sweep(
    results: Sequence[tuple[str, EvalReport | str]], mode: str, path: str | Path
) -> None:
    labels, reports = _cells(results)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [float(label) for label in labels]
    ax.plot(xs, [r.accuracy for r in reports], marker="o", label="accuracy")
    ax.plot(xs, [r.f1_macro for r in reports], marker="s", label="macro F1")
    ax.set_xlabel("similarity threshold" if mode == "threshold" else "top-k")
    ax.set_ylim(0, 1)
    ax.legend()
    _save(fig, path)


def plot_ablation(results: Sequence[tuple[str, EvalReport | str]], path: str | Path) -> None:
    labels, reports = _cells(results)
    xs = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([x - width / 2 for x in xs], [r.accuracy for r in reports], width, label="accuracy")
    ax.bar([x + width / 2 for x in xs], [r.f1_macro for r in reports], width, label="macro F1")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=15)
    ax.set_ylim(0, 1)
    ax.legend()
    _save(fig, path)


def plot_stats(stats: StatsReport, path: str | Path) -> None:
    metrics = ["sentences_per_turn", "counter_per_turn", "support_per_turn"]
    short = ["sentences", "countering", "supporting"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.38
    xs = range(len(metrics))
    for offset, (label, row) in zip(
        (-width / 2, width / 2), (("winner", stats.winner), ("loser", stats.loser))
    ):
        values = [getattr(row, m) for m in metrics]
        ax.bar([x + offset for x in xs], values, width, label=label)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(short)
    ax.set_ylabel("mean per turn")
    ax.legend()
    _save(fig, path)
