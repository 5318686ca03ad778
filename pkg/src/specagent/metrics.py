"""Latency and accuracy reporting over recorded trajectories.

Time-to-first-token runs from the final query update to the first token
of the accepted answer; total latency runs from the first query update to
answer completion. Speedup is the ratio of baseline to speculative mean
latency over paired samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import mean

from .trace import NotAnsweredError, Trajectory


class UnpairedSampleError(Exception):
    pass


@dataclass
class LatencyReport:
    ttft_seconds: float
    total_seconds: float
    per_tool: dict[int, dict] = field(default_factory=dict)


def latency_of(trajectory: Trajectory) -> LatencyReport:
    """Compute the latency report for an answered trajectory."""
    answers = [
        e for e in trajectory.entries
        if e["kind"] == "action" and e.get("action") == "answer" and e.get("accepted")
    ]
    if not answers:
        raise NotAnsweredError("trajectory has no accepted answer")
    answer = answers[0]
    starts = [
        e for e in trajectory.entries
        if e["kind"] == "answer_started" and e["t"] <= answer["t"]
    ]
    answer_start = starts[-1] if starts else answer
    finals = trajectory.find("update", final=True)
    updates = trajectory.find("update")
    if not finals or not updates:
        raise NotAnsweredError("trajectory has no query updates")
    # Headers carry the true speech timing; with buffered updates the entry
    # times reflect injection, not arrival.
    final_s = trajectory.header.get("query_final_seconds", finals[0]["s"])
    start_s = trajectory.header.get("query_start_seconds", updates[0]["s"])
    ttft = answer_start["s"] - final_s
    total = answer["s"] - start_s
    per_tool: dict[int, dict] = {}
    for e in trajectory.entries:
        if e["kind"] == "dispatch":
            per_tool.setdefault(e["id"], {})["dispatch_s"] = e["s"]
        elif e["kind"] == "complete" and e.get("delivered"):
            per_tool.setdefault(e["id"], {})["complete_s"] = e["s"]
    return LatencyReport(ttft_seconds=ttft, total_seconds=total, per_tool=per_tool)


@dataclass
class SampleResult:
    sample_id: str
    mode: str
    ttft_seconds: float | None
    total_seconds: float | None
    correct: bool
    answered: bool


@dataclass
class BenchmarkReport:
    per_sample: list[SampleResult]
    mean_ttft: dict[str, float]
    mean_total: dict[str, float]
    speedup_ttft: float
    speedup_total: float
    accuracy: dict[str, float]
    n_pairs: int

    def summary_table(self) -> str:
        lines = [
            f"{'mode':<14}{'n':>5}{'accuracy':>10}{'mean ttft':>12}{'mean total':>12}",
        ]
        for mode in sorted(self.mean_total):
            n = sum(1 for r in self.per_sample if r.mode == mode)
            lines.append(
                f"{mode:<14}{n:>5}{self.accuracy[mode]:>10.3f}"
                f"{self.mean_ttft[mode]:>12.3f}{self.mean_total[mode]:>12.3f}"
            )
        lines.append("")
        lines.append(f"speedup (total latency): {self.speedup_total:.2f}x")
        lines.append(f"speedup (ttft):          {self.speedup_ttft:.2f}x")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "per_sample": [
                {
                    "sample_id": r.sample_id,
                    "mode": r.mode,
                    "ttft_seconds": r.ttft_seconds,
                    "total_seconds": r.total_seconds,
                    "correct": r.correct,
                    "answered": r.answered,
                }
                for r in self.per_sample
            ],
            "mean_ttft": self.mean_ttft,
            "mean_total": self.mean_total,
            "speedup_ttft": self.speedup_ttft,
            "speedup_total": self.speedup_total,
            "accuracy": self.accuracy,
            "n_pairs": self.n_pairs,
        }


def aggregate(
    results: list[SampleResult],
    baseline_mode: str = "baseline",
    speculative_mode: str = "speculative",
) -> BenchmarkReport:
    """Pair samples across modes and aggregate means, speedups, accuracy."""
    if not results:
        raise UnpairedSampleError("no results to aggregate")
    by_mode: dict[str, dict[str, SampleResult]] = {}
    for r in results:
        by_mode.setdefault(r.mode, {})[r.sample_id] = r
    if baseline_mode not in by_mode or speculative_mode not in by_mode:
        raise UnpairedSampleError("need results for both modes")
    base, spec = by_mode[baseline_mode], by_mode[speculative_mode]
    if set(base) != set(spec):
        missing = set(base) ^ set(spec)
        raise UnpairedSampleError(f"unpaired sample ids: {sorted(missing)[:5]}")
    paired_ids = sorted(
        sid
        for sid in base
        if base[sid].answered and spec[sid].answered
    )
    if not paired_ids:
        raise UnpairedSampleError("no answered pairs")
    mean_ttft = {}
    mean_total = {}
    accuracy = {}
    for mode, rows in by_mode.items():
        answered = [rows[sid] for sid in paired_ids]
        mean_ttft[mode] = mean(r.ttft_seconds for r in answered)
        mean_total[mode] = mean(r.total_seconds for r in answered)
        accuracy[mode] = mean(1.0 if r.correct else 0.0 for r in rows.values())
    return BenchmarkReport(
        per_sample=sorted(results, key=lambda r: (r.sample_id, r.mode)),
        mean_ttft=mean_ttft,
        mean_total=mean_total,
        speedup_ttft=mean_ttft[baseline_mode] / mean_ttft[speculative_mode],
        speedup_total=mean_total[baseline_mode] / mean_total[speculative_mode],
        accuracy=accuracy,
        n_pairs=len(paired_ids),
    )
