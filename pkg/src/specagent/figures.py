"""Benchmark report figures, rendered to files next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import BenchmarkReport


def render_report_figures(report: BenchmarkReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    by_id: dict[str, dict[str, float]] = {}
    for r in report.per_sample:
        if r.total_seconds is not None:
            by_id.setdefault(r.sample_id, {})[r.mode] = r.total_seconds
    pairs = [
        (v["baseline"], v["speculative"])
        for v in by_id.values()
        if "baseline" in v and "speculative" in v
    ]

    if pairs:
        fig, ax = plt.subplots(figsize=(5, 5))
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        lim = max(max(xs), max(ys)) * 1.05
        ax.scatter(xs, ys, s=14, alpha=0.6)
        ax.plot([0, lim], [0, lim], ls="--", lw=1, color="gray")
        ax.set_xlim(0, lim)
        ax.set_ylim(0, lim)
        ax.set_xlabel("baseline total latency (s)")
        ax.set_ylabel("speculative total latency (s)")
        ax.set_title(f"paired total latency (speedup {report.speedup_total:.2f}x)")
        path = out / "latency_pairs.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    modes = sorted(report.mean_total)
    ax.bar(
        range(len(modes)),
        [report.mean_total[m] for m in modes],
        width=0.5,
        color=["#888888", "#4477aa"][: len(modes)],
    )
    ax.set_xticks(range(len(modes)))
    ax.set_xticklabels(modes)
    ax.set_ylabel("mean total latency (s)")
    ax.set_title("mean latency by mode")
    path = out / "mean_latency.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)
    return paths
