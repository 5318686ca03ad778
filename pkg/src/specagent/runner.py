"""Sample pipeline: align, script, simulate, evaluate.

Both benchmark modes ride the same loop; the baseline differs only in the
two documented switches (updates buffered until final, tools awaited
synchronously) plus a sequential script, so the comparison isolates the
speculation mechanism itself.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .config import RunConfig, derive_seed
from .datagen import AlignedPlan, Rejected, align, synthesize_baseline, synthesize_skeleton
from .environment import ToolRegistry, answer_correct, demo_state, state_correct
from .metrics import SampleResult, latency_of
from .model import ScriptedModel
from .samples import Sample
from .session import SimSession
from .stt import segment
from .trace import NotAnsweredError, Trajectory


class SampleRejectedError(Exception):
    pass


@dataclass
class RunOutput:
    trajectory: Trajectory
    result: SampleResult
    aligned: AlignedPlan


def align_sample(sample: Sample, config: RunConfig) -> AlignedPlan | Rejected:
    plan = segment(sample.transcript, config.increment_words)
    step_plans = sample.step_plans(plan, config.increment_words)
    return align(step_plans, sample.ground_truth, config.match_threshold)


def run_sample(
    sample: Sample,
    config: RunConfig,
    registry: ToolRegistry,
    mode: str,
    dataset: str = "synthetic",
) -> RunOutput:
    """Run one sample in one mode and evaluate state/answer correctness."""
    aligned = align_sample(sample, config)
    if isinstance(aligned, Rejected):
        raise SampleRejectedError(f"{sample.id}: {aligned.reason}")
    update_plan = segment(sample.transcript, config.increment_words)
    sample_seed = derive_seed(config.seed, sample.id)
    run_config = replace(config, mode=mode, seed=sample_seed)
    if mode == "baseline":
        script = synthesize_baseline(
            aligned,
            answer_text=sample.gold_answer or "done",
            think_cost=config.think_cost,
        )
    else:
        script = synthesize_skeleton(
            aligned,
            update_plan,
            error_rate=config.error_rate,
            rng=random.Random(derive_seed(sample_seed, "errors")),
            registry=registry,
            answer_text=sample.gold_answer or "done",
            think_cost=config.think_cost,
        )
    initial = demo_state()
    session = SimSession(
        run_config,
        ScriptedModel(script),
        registry,
        update_plan,
        sim_state=initial.copy(),
        sample_id=sample.id,
        dataset=dataset,
    )
    trajectory = session.run()
    answered = any(
        e.get("status") == "answered" for e in trajectory.find("end")
    )
    state_ok = state_correct(initial, session.core.sim_state, sample.ground_truth, registry)
    answer_entries = [
        e for e in trajectory.find("action", action="answer") if e.get("accepted")
    ]
    if sample.gold_answer and answer_entries:
        text = answer_entries[0]["text"]
        answer_ok = answer_correct(text, sample.gold_answer)
    else:
        answer_ok = answered
    try:
        report = latency_of(trajectory)
        ttft, total = report.ttft_seconds, report.total_seconds
    except NotAnsweredError:
        ttft = total = None
    return RunOutput(
        trajectory=trajectory,
        result=SampleResult(
            sample_id=sample.id,
            mode=mode,
            ttft_seconds=ttft,
            total_seconds=total,
            correct=answered and state_ok and answer_ok,
            answered=answered,
        ),
        aligned=aligned,
    )
