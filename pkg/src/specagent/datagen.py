"""Trajectory-skeleton synthesis.

Aligns ground-truth tool calls to the earliest query update at which they
could have been issued (scanning candidate per-update plans backward from
the final update), derives erroneous-call/correction pairs from candidates
that vanish from the final plan, optionally injects synthetic erroneous
calls at a configured rate, and emits scripts that replay the whole flow
through the simulator. Think bodies are placeholders fillable by an
external model through the model interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .protocol import Arg, Ref, ToolCall, render_args, serialize_action
from .model import (
    AfterUpdates,
    tokenize_cost,
    AnyOf,
    CallAbsent,
    AfterFinal,
    AfterInfo,
    Quiescent,
    Script,
    ScriptStep,
)
from .stt import UpdatePlan
from .taskgraph import Safety


class InconsistentPlanError(Exception):
    pass


@dataclass
class StepPlans:
    """Candidate tool-call lists proposed from the query prefix at each update."""

    per_update: list[list[ToolCall]]


@dataclass(frozen=True)
class Correction:
    erroneous: ToolCall
    issue_index: int
    fix: str  # "modify" | "remove"
    fix_index: int
    target_gt_pos: int | None = None  # 0-based index into ground truth for modify


@dataclass
class AlignedPlan:
    ground_truth: list[ToolCall]
    assignments: list[int]  # per ground-truth call: earliest update index (0-based)
    corrections: list[Correction] = field(default_factory=list)
    n_updates: int = 0


@dataclass(frozen=True)
class Rejected:
    reason: str


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------


def edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(call_a: ToolCall, call_b: ToolCall) -> float:
    """Name-gated normalized edit similarity over canonical argument strings."""
    if call_a.name != call_b.name:
        return 0.0
    args_a, args_b = render_args(call_a.args), render_args(call_b.args)
    if args_a == args_b:
        return 1.0
    longest = max(len(args_a), len(args_b))
    return 1.0 - edit_distance(args_a, args_b) / longest


# ---------------------------------------------------------------------------
# Backward consistency alignment
# ---------------------------------------------------------------------------


def align(
    step_plans: StepPlans, ground_truth_calls: list[ToolCall], match_threshold: float
) -> AlignedPlan | Rejected:
    """Assign each ground-truth call its earliest callable update index.

    Scanning runs backward from the final update; the assignment is the
    earliest index reachable through a contiguous run of matching updates
    ending at the final one. A ground-truth call absent from the final
    update's candidates rejects the sample. Candidates that match no
    ground-truth call and vanish from the final plan become corrections.
    """
    plans = step_plans.per_update
    if not plans or not ground_truth_calls:
        return Rejected("empty step plans or ground truth")
    last = len(plans) - 1

    def matches(call: ToolCall, candidates: list[ToolCall]) -> bool:
        return any(similarity(call, c) >= match_threshold for c in candidates)

    assignments = []
    for g in ground_truth_calls:
        if not matches(g, plans[last]):
            return Rejected(
                f"ground-truth call {g.name} not matched at the final update"
            )
        idx = last
        while idx - 1 >= 0 and matches(g, plans[idx - 1]):
            idx -= 1
        # A call is only issuable once the calls it references exist.
        for rid in g.ref_ids():
            if rid - 1 < len(assignments):
                idx = max(idx, assignments[rid - 1])
        assignments.append(idx)

    corrections: list[Correction] = []
    recorded: list[ToolCall] = []
    for u, candidates in enumerate(plans[:-1]):
        for cand in candidates:
            if matches(cand, ground_truth_calls):
                continue
            if matches(cand, plans[last]):
                continue  # still in the final plan: noise, not a correction
            if matches(cand, recorded):
                continue  # already recorded at an earlier update
            recorded.append(cand)
            # Disappearance point: first later update where it is gone.
            fix_index = last
            for v in range(u + 1, last + 1):
                if not matches(cand, plans[v]):
                    fix_index = v
                    break
            same_name = [
                (pos, similarity(cand, g))
                for pos, g in enumerate(ground_truth_calls)
                if g.name == cand.name
            ]
            if same_name:
                pos = max(same_name, key=lambda ps: ps[1])[0]
                corrections.append(
                    Correction(
                        erroneous=cand,
                        issue_index=u,
                        fix="modify",
                        fix_index=max(assignments[pos], u + 1),
                        target_gt_pos=pos,
                    )
                )
            else:
                corrections.append(
                    Correction(erroneous=cand, issue_index=u, fix="remove",
                               fix_index=fix_index)
                )
    return AlignedPlan(
        ground_truth=list(ground_truth_calls),
        assignments=assignments,
        corrections=corrections,
        n_updates=len(plans),
    )


# ---------------------------------------------------------------------------
# Skeleton synthesis
# ---------------------------------------------------------------------------


def _perturb(call: ToolCall, rng) -> ToolCall | None:
    """A same-name call with one argument slightly wrong."""
    for i, a in enumerate(call.args):
        v = a.value
        if isinstance(v, str) and v:
            wrong = v[:-1] if len(v) > 1 else v + "x"
            new = list(call.args)
            new[i] = Arg(value=wrong, key=a.key)
            return ToolCall(call.id, call.name, tuple(new))
        if isinstance(v, bool):
            new = list(call.args)
            new[i] = Arg(value=not v, key=a.key)
            return ToolCall(call.id, call.name, tuple(new))
        if isinstance(v, (int, float)):
            new = list(call.args)
            new[i] = Arg(value=v + 1, key=a.key)
            return ToolCall(call.id, call.name, tuple(new))
    return None


def _ref_target_positions(ground_truth: list[ToolCall]) -> set[int]:
    """0-based positions referenced by other ground-truth calls ($N = position N)."""
    out = set()
    for g in ground_truth:
        for rid in g.ref_ids():
            out.add(rid - 1)
    return out


def inject_synthetic_error(plan: AlignedPlan, rng, registry=None) -> AlignedPlan:
    """Add one erroneous-early-call/fix pair to an aligned plan when possible.

    Prefers calls whose observations nothing references; side-effecting
    calls are ideal targets since they are held until commit and their fix
    can never race a completed execution.
    """
    ref_targets = _ref_target_positions(plan.ground_truth)
    candidates = [
        pos
        for pos, g in enumerate(plan.ground_truth)
        if plan.assignments[pos] > 0
        and pos not in ref_targets
        # The early (erroneous) issue must be able to resolve its own refs.
        and all(
            plan.assignments[r - 1] < plan.assignments[pos] for r in g.ref_ids()
        )
    ]
    if not candidates:
        return plan

    def is_unsafe(call: ToolCall) -> bool:
        return (
            registry is not None
            and call.name in registry
            and registry.get(call.name).safety == Safety.UNSAFE
        )

    unsafe_first = sorted(candidates, key=lambda p: (not is_unsafe(plan.ground_truth[p]), p))
    pos = unsafe_first[0]
    g = plan.ground_truth[pos]
    wrong = _perturb(g, rng)
    if wrong is None:
        return plan
    correction = Correction(
        erroneous=wrong,
        issue_index=plan.assignments[pos] - 1,
        fix="modify",
        fix_index=plan.assignments[pos],
        target_gt_pos=pos,
    )
    return replace(plan, corrections=plan.corrections + [correction])


def _remap_refs(call: ToolCall, position_to_id: dict[int, int]) -> tuple[Arg, ...]:
    """Ground-truth refs address positions; rewrite them to session ids."""
    out = []
    for a in call.args:
        if isinstance(a.value, Ref):
            out.append(Arg(value=Ref(position_to_id[a.value.id - 1]), key=a.key))
        else:
            out.append(a)
    return tuple(out)


def _think(text: str) -> str:
    return f"<think>{text}</think>"


def _step(trigger, emission: str, think_cost: int, skip_if=None) -> ScriptStep:
    # Reasoning dominates real generation time; pad every step to a
    # configurable token cost so simulated sessions carry realistic thinks.
    cost = max(think_cost, tokenize_cost(emission))
    return ScriptStep(trigger=trigger, emission=emission, cost=cost, skip_if=skip_if)


def synthesize_skeleton(
    aligned: AlignedPlan,
    update_plan: UpdatePlan,
    error_rate: float = 0.0,
    rng=None,
    registry=None,
    answer_text: str = "done",
    think_cost: int = 60,
) -> Script:
    """Script that issues each call at its earliest update and fixes mistakes.

    Waiting between updates comes from the script player's built-in pause;
    the pause after the final update (or the first fresh post-final id)
    provides the commit signal. The answer fires once everything resolved.
    """
    for c in aligned.corrections:
        if c.fix_index <= c.issue_index:
            raise InconsistentPlanError(
                f"fix at update {c.fix_index} not after issue at {c.issue_index}"
            )
    plan = aligned
    if rng is not None and error_rate > 0 and rng.random() < error_rate:
        plan = inject_synthetic_error(plan, rng, registry)

    ref_targets = _ref_target_positions(plan.ground_truth)

    def is_safe(call: ToolCall) -> bool:
        if registry is None or call.name not in registry:
            return True
        return registry.get(call.name).safety == Safety.SAFE

    # Demote modify-corrections to remove-plus-fresh-issue when the modify
    # could misbehave: a skipped fix would orphan a referenced or
    # side-effecting ground-truth call, or the fix's own arguments reference
    # calls that are not guaranteed to exist before the fix update.
    proposed_modify_targets = {
        c.target_gt_pos for c in plan.corrections if c.fix == "modify"
    }
    corrections: list[Correction] = []
    claimed: set[int] = set()
    for c in plan.corrections:
        if c.fix == "modify" and c.target_gt_pos is not None:
            target = plan.ground_truth[c.target_gt_pos]
            viable = (
                c.target_gt_pos not in ref_targets
                # one modify per target: a second would issue the call twice
                and c.target_gt_pos not in claimed
                and (not is_safe(c.erroneous) or is_safe(target))
                and all(
                    plan.assignments[r - 1] < c.fix_index
                    and (r - 1) not in proposed_modify_targets
                    for r in target.ref_ids()
                )
            )
            if not viable:
                corrections.append(replace(c, fix="remove", target_gt_pos=None))
                continue
            claimed.add(c.target_gt_pos)
        corrections.append(c)
    modified_targets = {
        c.target_gt_pos for c in corrections if c.fix == "modify"
    }

    # Drop corrections whose erroneous call references positions not yet
    # issued at its issue update; they cannot be replayed.
    def refs_resolvable(c: Correction) -> bool:
        for rid in c.erroneous.ref_ids():
            pos = rid - 1
            if pos < 0 or pos >= len(plan.ground_truth) or pos in modified_targets:
                return False
            if plan.assignments[pos] > c.issue_index:
                return False
        return True

    corrections = [c for c in corrections if refs_resolvable(c)]
    modified_targets = {
        c.target_gt_pos for c in corrections if c.fix == "modify"
    }

    steps: list[ScriptStep] = []
    next_id = 1
    position_to_id: dict[int, int] = {}
    erroneous_ids: dict[int, int] = {}  # index into corrections -> session id

    for u in range(plan.n_updates):
        trigger = AfterUpdates(u + 1)
        # Fixes first so post-final edits precede the committing fresh issue.
        for ci, c in enumerate(corrections):
            if c.fix_index != u:
                continue
            err_id = erroneous_ids[ci]
            guard = AfterInfo(err_id) if is_safe(c.erroneous) else None
            if c.fix == "remove":
                skip = AnyOf((AfterInfo(err_id), CallAbsent(err_id))) if guard else CallAbsent(err_id)
                emission = (
                    _think(f"the earlier call {err_id} no longer fits the request; dropping it")
                    + f"<tool_call>REMOVE {err_id}.</tool_call>"
                )
                steps.append(_step(trigger, emission, think_cost, skip_if=skip))
            else:
                target = plan.ground_truth[c.target_gt_pos]
                position_to_id[c.target_gt_pos] = err_id
                fixed = ToolCall(err_id, target.name, _remap_refs(target, position_to_id))
                emission = (
                    _think(f"correcting call {err_id} now that the request is clearer")
                    + serialize_action(fixed)
                )
                steps.append(_step(trigger, emission, think_cost, skip_if=guard))
        # Ground-truth issues assigned to this update.
        for pos, g in enumerate(plan.ground_truth):
            if plan.assignments[pos] != u or pos in modified_targets:
                continue
            call = ToolCall(next_id, g.name, _remap_refs(g, position_to_id))
            position_to_id[pos] = next_id
            next_id += 1
            emission = (
                _think(f"enough information to run {call.name} now")
                + serialize_action(call)
            )
            steps.append(_step(trigger, emission, think_cost))
        # Erroneous issues (speculation that will need fixing). Corrections
        # never issue at the final update, so these cannot follow the commit.
        for ci, c in enumerate(corrections):
            if c.issue_index != u:
                continue
            call = ToolCall(next_id, c.erroneous.name, _remap_refs(c.erroneous, position_to_id))
            erroneous_ids[ci] = next_id
            next_id += 1
            emission = (
                _think(f"acting early on the partial request with {call.name}")
                + serialize_action(call)
            )
            steps.append(_step(trigger, emission, think_cost, skip_if=AfterFinal()))

    steps.append(
        _step(
            Quiescent(),
            _think("all observations are in; answering")
            + f"<answer>{answer_text}</answer>",
            think_cost,
        )
    )
    return Script(steps=steps, auto_wait=True)


def synthesize_baseline(
    aligned: AlignedPlan,
    answer_text: str = "done",
    think_cost: int = 60,
) -> Script:
    """Sequential reason-and-act script: one call at a time after the final update."""
    steps: list[ScriptStep] = []
    position_to_id: dict[int, int] = {}
    for pos, g in enumerate(aligned.ground_truth):
        call_id = pos + 1
        position_to_id[pos] = call_id
        call = ToolCall(call_id, g.name, _remap_refs(g, position_to_id))
        trigger = AfterFinal() if pos == 0 else AfterInfo(pos)
        emission = (
            _think(f"next step of the plan: {call.name}") + serialize_action(call)
        )
        steps.append(_step(trigger, emission, think_cost))
    steps.append(
        _step(
            Quiescent(),
            _think("plan finished; answering") + f"<answer>{answer_text}</answer>",
            think_cost,
        )
    )
    return Script(steps=steps, auto_wait=True)
