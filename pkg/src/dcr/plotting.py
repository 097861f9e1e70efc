"""SVG line charts and CSV summaries for run logs and easiness traces."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_runlog(runlog_csv, out_svg) -> None:
    """Loss and learning-rate curves from a run-log CSV."""
    rows = list(csv.DictReader(open(runlog_csv, newline="")))
    if not rows:
        raise ValueError(f"{runlog_csv} is empty")
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for key in rows[0]:
        if key.startswith("loss"):
            ax1.plot(epochs, [float(r[key]) for r in rows], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=7)
    ax2.plot(epochs, [float(r["lr"]) for r in rows], label="lr", color="tab:red")
    if "train_top1_action" in rows[0]:
        ax2b = ax2.twinx()
        ax2b.plot(epochs, [float(r["train_top1_action"]) for r in rows], label="train top-1", color="tab:green")
        ax2b.set_ylabel("train top-1")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)


def easiness_summary(easiness_csv) -> list[dict]:
    """Per-epoch min / mean / max easiness over instances."""
    by_epoch: dict[int, list[float]] = {}
    with open(easiness_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            by_epoch.setdefault(int(row["epoch"]), []).append(float(row["T"]))
    out = []
    for epoch in sorted(by_epoch):
        vals = np.array(by_epoch[epoch])
        out.append(
            {
                "epoch": epoch,
                "T_min": float(vals.min()),
                "T_mean": float(vals.mean()),
                "T_max": float(vals.max()),
            }
        )
    return out


def plot_easiness(easiness_csv, out_svg, summary_csv=None) -> None:
    """Easiness band (min..max, mean line) across epochs, the per-instance
    schedule's signature picture."""
    summary = easiness_summary(easiness_csv)
    if summary_csv:
        with open(summary_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "T_min", "T_mean", "T_max"])
            writer.writeheader()
            writer.writerows(summary)
    epochs = [r["epoch"] for r in summary]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.fill_between(epochs, [r["T_min"] for r in summary], [r["T_max"] for r in summary], alpha=0.3, label="min..max")
    ax.plot(epochs, [r["T_mean"] for r in summary], color="tab:red", label="mean")
    ax.set_xlabel("epoch")
    ax.set_ylabel("easiness")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)


def plot_gap_sweep(sweep: dict, out_svg) -> None:
    """Top-1 as gap frames are revealed (anticipation gap shrinking)."""
    reveals = sorted(sweep)
    top1 = [sweep[r]["action"]["top1"] for r in reveals]
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.plot(reveals, top1, marker="o")
    ax.set_xlabel("gap frames revealed")
    ax.set_ylabel("action top-1")
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)


def write_table_csv(results: dict[str, dict], path) -> None:
    """Flatten {variant: {head: metrics}} into one comparison CSV."""
    heads = sorted({h for m in results.values() for h in m})
    cols = ["variant"]
    for h in heads:
        cols += [f"{h}_top1", f"{h}_top5", f"{h}_recall5"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for name, m in results.items():
            row = [name]
            for h in heads:
                if h in m:
                    row += [m[h]["top1"], m[h]["top5"], m[h]["class_mean_recall@5"]]
                else:
                    row += ["", "", ""]
            writer.writerow(row)
