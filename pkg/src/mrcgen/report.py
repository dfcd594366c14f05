"""Final report rendering: JSON + CSV summaries and matplotlib figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .config import PipelineConfig
from .critics import STATUSES, error_distribution
from .ioutil import atomic_open, read_jsonl, write_json


def build_report(config: PipelineConfig) -> None:
    workdir = config.workdir
    figures = workdir / "figures"
    figures.mkdir(parents=True, exist_ok=True)

    with open(workdir / "critic_counts.json", "r", encoding="utf-8") as fh:
        critic_counts = json.load(fh)
    judgments = list(read_jsonl(workdir / "judgments.jsonl"))
    with open(workdir / "metric_summaries.json", "r", encoding="utf-8") as fh:
        metric_summaries = json.load(fh)
    with open(workdir / "accuracy.json", "r", encoding="utf-8") as fh:
        accuracy = json.load(fh)
    curve = list(read_jsonl(workdir / "ppo_curve.jsonl"))
    metric_rows = list(read_jsonl(workdir / "metrics.jsonl"))

    distribution = error_distribution(
        critic_counts, [r["adjudication"] for r in judgments])

    report = {
        "error_distribution": distribution,
        "critic_counts": critic_counts,
        "metric_summaries": metric_summaries["summaries"],
        "metric_skips": metric_summaries["skipped"],
        "accuracy": accuracy,
        "ppo_final": curve[-1] if curve else None,
        "n_judged": len(judgments),
    }
    write_json(workdir / "report.json", report)

    with atomic_open(workdir / "report.csv") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "key", "value"])
        for status in STATUSES:
            writer.writerow(["error_distribution", status, distribution[status]])
        for name, summary in sorted(metric_summaries["summaries"].items()):
            if summary.get("count"):
                writer.writerow(["metric_mean", name, summary["mean"]])
                writer.writerow(["metric_std", name, summary["std"]])
        for bid, stats in sorted(accuracy.get("backends", {}).items()):
            writer.writerow(["accuracy_mean", bid, stats["mean"]])
            writer.writerow(["accuracy_std", bid, stats["std"]])

    _plot_error_distribution(distribution, figures / "error_distribution.png")
    _plot_metric_histograms(metric_summaries["summaries"],
                            figures / "metric_distributions.png")
    _plot_positional_bias(metric_rows, figures / "positional_bias.png")
    if curve:
        _plot_training_curve(curve, figures / "ppo_training_curve.png")


def _plot_error_distribution(distribution: dict, path: Path) -> None:
    labels = [s for s in STATUSES if distribution.get(s, 0) > 0]
    sizes = [distribution[s] for s in labels]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.pie(sizes, labels=labels, autopct="%1.1f%%", startangle=90)
    ax.set_title("Sample outcome distribution")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def _plot_metric_histograms(summaries: dict, path: Path) -> None:
    names = [n for n, s in sorted(summaries.items()) if s.get("count")]
    if not names:
        return
    fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 3.2))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        summary = summaries[name]
        edges = summary["bucket_edges"]
        widths = [edges[i + 1] - edges[i] for i in range(len(edges) - 1)]
        ax.bar(edges[:-1], summary["histogram"], width=widths, align="edge",
               edgecolor="white")
        ax.set_title(name)
        ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_positional_bias(metric_rows: list[dict], path: Path) -> None:
    values = [r["positional_bias"] for r in metric_rows
              if isinstance(r.get("positional_bias"), (int, float))]
    if not values:
        return
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=20, range=(0, 1), edgecolor="white")
    ax.set_xlabel("answer position (fraction through passage)")
    ax.set_ylabel("count")
    ax.set_title("Positional bias of generated answers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_training_curve(curve: list[dict], path: Path) -> None:
    iterations = [c["iteration"] for c in curve]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(iterations, [c["mean_reward"] for c in curve])
    ax1.set_ylabel("mean shaped reward")
    ax2.plot(iterations, [c["malformed_rate"] for c in curve], color="tab:red")
    ax2.set_ylabel("malformed rate")
    ax2.set_xlabel("iteration")
    fig.suptitle("Toy PPO training curve")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
