"""The core event-driven session loop.

One controller owns the session: it grants the model generation budget up
to the next scheduled event, parses the stream into actions as they
complete, validates them (rejected actions become error notices and the
generation restarts), maintains the tool-call graph, injects arriving
events into the context (with an interruption mark when the model was cut
mid-generation), appends plan hints after query updates and tool calls,
latches the commit barrier, and ends the session on an accepted answer.

``SessionCore`` is time-agnostic so the simulated (token-clock) driver and
the wall-clock gateway share the same action/event handling; ``SimSession``
is the deterministic virtual-time driver.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Callable

from .clock import (
    EmptyQueueError,
    EventQueue,
    VirtualClock,
    advance_generation,
    advance_to_next,
    budget_until_next,
    sample_rate,
    seconds_to_tokens,
)
from .config import RunConfig, derive_seed
from .environment import (
    SimState,
    ToolRegistry,
    ToolRuntimeError,
    demo_state,
    resolve_refs,
)
from .model import Context, ContextView
from .protocol import (
    Action,
    Answer,
    CancelNotice,
    ErrorNotice,
    FinalQueryUpdate,
    Information,
    InjectedEvent,
    PartialQueryUpdate,
    Pause,
    PlanEntry,
    PlanHint,
    Remove,
    Think,
    ToolCall,
    parse_incremental,
    render_args,
    serialize_action,
)
from .stt import Update, UpdatePlan, schedule_updates
from .taskgraph import (
    STATUS_LETTER,
    GraphError,
    Safety,
    Status,
    TaskGraph,
)
from .trace import Trajectory


class Phase(enum.Enum):
    LISTENING = "listening"
    POST_FINAL = "post_final"
    ANSWERED = "answered"
    FAILED = "failed"


class Outcome(enum.Enum):
    CONTINUE = "continue"
    PAUSE = "pause"
    ANSWERED = "answered"
    REJECTED = "rejected"
    FAILED = "failed"


@dataclass
class ToolDone:
    """Scheduled completion of a dispatched tool execution."""

    id: int
    generation: int
    name: str
    resolved_args: list


@dataclass
class DispatchItem:
    id: int
    generation: int
    name: str
    safety: Safety
    resolved_args: list


class StepParser:
    """Incremental action assembly with think-pairing enforcement.

    One instance per generation stream. feed() returns the completed
    actions in order, or an error reason when the stream violates the
    grammar (malformed region, action without a think, double think).
    """

    def __init__(self):
        self.buffer = ""
        self.have_think = False
        self.saw_answer_tag = False
        self.fed_any = False

    def feed(self, text: str) -> tuple[list[Action], str | None]:
        self.fed_any = True
        self.buffer += text
        if "<answer>" in self.buffer:
            self.saw_answer_tag = True
        res = parse_incremental(self.buffer)
        if res.malformed is not None:
            return res.actions, f"malformed output ({res.malformed.message})"
        self.buffer = res.remainder
        out = []
        for action in res.actions:
            if isinstance(action, Think):
                if self.have_think:
                    return out, "two think blocks without an action"
                self.have_think = True
            else:
                if not self.have_think:
                    return out, "action without a preceding think block"
                self.have_think = False
            out.append(action)
        return out, None

    def finish(self) -> str | None:
        """Check the stream may end here (no dangling fragment or think)."""
        if self.buffer.strip():
            return "generation ended mid-action"
        if self.have_think:
            return "generation ended without an action"
        if not self.fed_any:
            return "empty generation"
        return None


class SessionCore:
    """Time-agnostic action/event handling shared by both drivers."""

    def __init__(
        self,
        config: RunConfig,
        registry: ToolRegistry,
        sim_state: SimState,
        trajectory: Trajectory,
        timefn: Callable[[], tuple[int, float]],
        queue_empty_fn: Callable[[], bool],
    ):
        self.config = config
        self.registry = registry
        self.sim_state = sim_state
        self.trajectory = trajectory
        self.timefn = timefn
        self.queue_empty_fn = queue_empty_fn
        self.graph = TaskGraph()
        self.segments: list[tuple[str, str]] = []
        self.phase = Phase.LISTENING
        self.outstanding: set[int] = set()
        self.error_count = 0
        self.updates_seen = 0
        self.query_parts: list[str] = []
        self.end_reason: str | None = None
        self.answer_started = False

    # -- trace plumbing ------------------------------------------------------

    def emit(self, kind: str, **data) -> dict:
        t, s = self.timefn()
        return self.trajectory.append(t, s, kind, **data)

    def append_model_text(self, text: str) -> None:
        if self.segments and self.segments[-1][0] == "model":
            self.segments[-1] = ("model", self.segments[-1][1] + text)
        else:
            self.segments.append(("model", text))

    # -- context -------------------------------------------------------------

    def view(self) -> ContextView:
        calls = tuple(
            PlanEntry(r.id, r.name, r.args, STATUS_LETTER[r.status])
            for r in self.graph.active_plan()
        )
        info_texts = {
            r.id: r.observation
            for r in self.graph.records.values()
            if r.status == Status.COMPLETED
        }
        cancelled = frozenset(
            r.id for r in self.graph.records.values() if r.status == Status.CANCELLED
        )
        return ContextView(
            updates_seen=self.updates_seen,
            final_received=self.graph.final_query_received,
            query_text=" ".join(self.query_parts),
            calls=calls,
            info_ids=frozenset(info_texts),
            info_texts=info_texts,
            cancelled_ids=cancelled,
            error_count=self.error_count,
        )

    def context(self) -> Context:
        return Context(segments=list(self.segments), view=self.view())

    # -- event injection -----------------------------------------------------

    def inject(self, event: InjectedEvent, **extra) -> None:
        from .protocol import render_event

        self.segments.append(("injected", render_event(event)))
        if isinstance(event, (PartialQueryUpdate, FinalQueryUpdate)):
            self.emit(
                "update",
                index=self.updates_seen,
                final=isinstance(event, FinalQueryUpdate),
                text=event.text,
                interrupted=event.interrupted,
                **extra,
            )
        elif isinstance(event, Information):
            self.emit("information", id=event.id, text=event.text,
                      interrupted=event.interrupted, **extra)
        elif isinstance(event, CancelNotice):
            self.emit("cancel_notice", id=event.id, reason=event.reason,
                      interrupted=event.interrupted, **extra)
        elif isinstance(event, PlanHint):
            self.emit(
                "plan_hint",
                calls=[
                    {"id": c.id, "name": c.name, "args": render_args(c.args), "status": c.status}
                    for c in event.calls
                ],
                interrupted=event.interrupted,
                **extra,
            )
        elif isinstance(event, ErrorNotice):
            self.emit("error_notice", text=event.text, interrupted=event.interrupted, **extra)
        else:
            raise TypeError(f"cannot inject {event!r}")

    def inject_plan_hint(self) -> None:
        calls = tuple(
            PlanEntry(r.id, r.name, r.args, STATUS_LETTER[r.status])
            for r in self.graph.active_plan()
        )
        self.inject(PlanHint(calls))

    def process_update(self, update: Update, interrupted: bool) -> None:
        self.updates_seen += 1
        self.query_parts.append(update.text)
        if update.is_final:
            self.inject(FinalQueryUpdate(update.text, interrupted))
            self.graph.note_final_query()
            if self.phase == Phase.LISTENING:
                self.phase = Phase.POST_FINAL
        else:
            self.inject(PartialQueryUpdate(update.text, interrupted))
        self.inject_plan_hint()

    def process_tool_done(self, done: ToolDone, interrupted: bool) -> None:
        spec = self.registry.get(done.name)
        try:
            observation, mutation = spec.handler(done.resolved_args, self.sim_state)
        except ToolRuntimeError as e:
            observation, mutation = f"tool error: {e}", None
        if spec.safety == Safety.SAFE and mutation is not None:
            raise ToolRuntimeError(f"read-only tool {spec.name} attempted a state mutation")
        result = self.graph.complete(done.id, done.generation, observation)
        self.emit("complete", id=done.id, generation=done.generation,
                  delivered=result.deliver)
        if result.deliver:
            if mutation is not None:
                self.sim_state.apply(mutation)
            self.outstanding.discard(done.id)
            self.inject(Information(done.id, observation, interrupted))
        elif result.emit_cancel:
            rec = self.graph.records[done.id]
            self.emit("cancel", id=done.id, reason=rec.cancel_reason or "cancelled")
            self.outstanding.discard(done.id)
            self.inject(CancelNotice(done.id, rec.cancel_reason or "cancelled", interrupted))

    # -- dispatch ------------------------------------------------------------

    def take_ready(self) -> list[DispatchItem]:
        """Mark every ready call executing and return its dispatch data."""
        items = []
        for cid in self.graph.ready_set():
            rec = self.graph.mark_executing(cid)
            completions = {d: self.graph.records[d].observation for d in rec.deps}
            items.append(
                DispatchItem(
                    id=rec.id,
                    generation=rec.generation,
                    name=rec.name,
                    safety=rec.safety,
                    resolved_args=resolve_refs(rec.args, completions),
                )
            )
        return items

    # -- actions ---------------------------------------------------------------

    def note_answer_started(self) -> None:
        if not self.answer_started:
            self.answer_started = True
            self.emit("answer_started")

    def forbidden(self, reason: str) -> Outcome:
        """Reject an action: inject an error notice and restart generation."""
        self.error_count += 1
        self.answer_started = False
        self.inject(
            ErrorNotice(
                f"invalid action: {reason}. Do not repeat this behavior; "
                "continue with a valid action.",
            ),
            reason=reason,
        )
        if self.error_count > self.config.max_errors:
            self.fail("error budget exhausted")
            return Outcome.FAILED
        return Outcome.REJECTED

    def fail(self, reason: str) -> None:
        self.phase = Phase.FAILED
        self.end_reason = reason
        self._shutdown_cleanup()

    def _shutdown_cleanup(self) -> None:
        """Cancel whatever never resolved so every call pairs with an outcome."""
        for cid in self.graph.non_terminal_ids():
            rec = self.graph.records[cid]
            rec.status = Status.CANCELLED
            rec.cancel_reason = "session ended"
            rec.cancel_notified = True
            self.emit("cancel", id=cid, reason="session ended")
            self.outstanding.discard(cid)
            self.inject(CancelNotice(cid, "session ended"))

    def validate_action(self, action: Action) -> str | None:
        """Reason this action is forbidden right now, or None when valid.

        Covers the loop-level rules: pausing with nothing outstanding once
        the final update arrived and the queue is idle, answering before the
        final update, and calls to unregistered tools. Graph-level
        rejections (cycles, unknown ids, post-commit edits of executing
        side-effecting calls) surface when the edit is applied and are
        routed through the same error-notice path.
        """
        if isinstance(action, Pause):
            if (
                self.graph.final_query_received
                and self.queue_empty_fn()
                and not self.graph.non_terminal_ids()
            ):
                return "pause with nothing outstanding"
        elif isinstance(action, Answer):
            if self.phase != Phase.POST_FINAL:
                return "answer before final query update"
        elif isinstance(action, ToolCall):
            if action.name not in self.registry:
                return f"unknown tool {action.name!r}"
        return None

    def handle_action(self, action: Action) -> Outcome:
        if isinstance(action, Think):
            self.emit("action", action="think", text=serialize_action(action), accepted=True)
            return Outcome.CONTINUE

        raw = serialize_action(action)

        if isinstance(action, ToolCall):
            reason = self.validate_action(action)
            if reason is not None:
                self.emit("action", action="tool_call", text=raw, accepted=False, id=action.id)
                return self.forbidden(reason)
            safety = self.registry.get(action.name).safety
            commits = self.graph.would_commit(action)
            try:
                rec = self.graph.issue(action, safety)
            except GraphError as e:
                self.emit("action", action="tool_call", text=raw, accepted=False, id=action.id)
                return self.forbidden(str(e))
            self.emit("action", action="tool_call", text=raw, accepted=True, id=action.id)
            if commits:
                self.graph.latch_commit()
                self.emit("commit")
            self.emit(
                "issue" if rec.generation == 1 else "edit",
                id=rec.id,
                generation=rec.generation,
                name=rec.name,
                args=render_args(rec.args),
                safety=rec.safety.value,
                deps=sorted(rec.deps),
            )
            self.outstanding.add(rec.id)
            self.inject_plan_hint()
            return Outcome.CONTINUE

        if isinstance(action, Remove):
            try:
                cancelled = self.graph.remove(action.target_id)
            except GraphError as e:
                self.emit("action", action="remove", text=raw, accepted=False,
                          target=action.target_id)
                return self.forbidden(str(e))
            self.emit("action", action="remove", text=raw, accepted=True,
                      target=action.target_id)
            for cid in cancelled:
                rec = self.graph.records[cid]
                reason = rec.cancel_reason or "cancelled"
                self.emit("cancel", id=cid, reason=reason)
                self.outstanding.discard(cid)
                self.inject(CancelNotice(cid, reason))
            self.inject_plan_hint()
            return Outcome.CONTINUE

        if isinstance(action, Pause):
            reason = self.validate_action(action)
            if reason is not None:
                self.emit("action", action="pause", text=raw, accepted=False)
                return self.forbidden(reason)
            self.emit("action", action="pause", text=raw, accepted=True)
            if self.graph.maybe_commit(action):
                self.emit("commit")
            return Outcome.PAUSE

        if isinstance(action, Answer):
            reason = self.validate_action(action)
            if reason is not None:
                self.emit("action", action="answer", text=raw, accepted=False)
                return self.forbidden(reason)
            self.emit("action", action="answer", text=raw, accepted=True)
            self.phase = Phase.ANSWERED
            self.end_reason = None
            self._shutdown_cleanup()
            return Outcome.ANSWERED

        raise TypeError(f"unknown action {action!r}")


# ---------------------------------------------------------------------------
# Deterministic virtual-time driver
# ---------------------------------------------------------------------------


class SimSession:
    """Runs one session against the token clock with a scripted model."""

    def __init__(
        self,
        config: RunConfig,
        model,
        registry: ToolRegistry,
        update_plan: UpdatePlan,
        sim_state: SimState | None = None,
        sample_id: str = "sample",
        dataset: str = "",
    ):
        if not update_plan.updates or not update_plan.updates[-1].is_final:
            raise ValueError("update plan must end with a final update")
        self.config = config
        self.model = model
        self.update_plan = update_plan
        rate = config.rate
        if rate is None:
            rate = sample_rate(
                random.Random(derive_seed(config.seed, "rate")),
                config.rate_min,
                config.rate_max,
            )
        self.clock = VirtualClock(rate)
        self.queue = EventQueue()
        self.latency_rng = random.Random(derive_seed(config.seed, "latency"))
        header = {
            "seed": config.seed,
            "rate": rate,
            "mode": config.mode,
            "sample_id": sample_id,
            "dataset": dataset,
            "latency": config.tool_latency,
            "config_hash": config.hash(),
            # True speech timing, independent of update buffering, so both
            # modes measure latency from the same origin.
            "query_start_seconds": update_plan.updates[0].arrival_seconds,
            "query_final_seconds": update_plan.updates[-1].arrival_seconds,
        }
        self.trajectory = Trajectory(header=header)
        self.core = SessionCore(
            config=config,
            registry=registry,
            sim_state=sim_state if sim_state is not None else demo_state(),
            trajectory=self.trajectory,
            timefn=lambda: (self.clock.now, self.clock.now / self.clock.rate),
            queue_empty_fn=lambda: len(self.queue) == 0,
        )
        self.total_tokens = 0

    # -- scheduling ----------------------------------------------------------

    def _schedule_updates(self) -> None:
        if self.config.mode == "baseline":
            # Buffer partial updates: the model sees one final update with
            # the whole utterance at the final arrival time.
            final = self.update_plan.updates[-1]
            merged = Update(
                text=self.update_plan.full_text(),
                arrival_seconds=final.arrival_seconds,
                is_final=True,
            )
            self.queue.push(
                seconds_to_tokens(final.arrival_seconds, self.clock.rate), merged
            )
        else:
            schedule_updates(self.update_plan, self.clock, self.queue)

    def _dispatch_ready(self) -> None:
        for item in self.core.take_ready():
            spec = self.core.registry.get(item.name)
            latency = spec.latency_model.draw(self.latency_rng)
            due = self.clock.now + seconds_to_tokens(latency, self.clock.rate)
            self.core.emit(
                "dispatch",
                id=item.id,
                generation=item.generation,
                name=item.name,
                safety=item.safety.value,
                latency_seconds=latency,
                completes_at=due,
            )
            self.queue.push(
                due, ToolDone(item.id, item.generation, item.name, item.resolved_args)
            )

    def _process_scheduled(self, payload, interrupted: bool) -> None:
        if isinstance(payload, Update):
            self.core.process_update(payload, interrupted)
        elif isinstance(payload, ToolDone):
            self.core.process_tool_done(payload, interrupted)
        else:
            raise TypeError(f"unknown scheduled payload {payload!r}")

    def _deliver_due(self, first_interrupted: bool) -> None:
        first = True
        while True:
            due = self.queue.peek_due()
            if due is None or due > self.clock.now:
                return
            ev = self.queue.pop()
            self._process_scheduled(ev.payload, interrupted=first_interrupted and first)
            first = False
            self._dispatch_ready()

    def _drain_until_resolved(self, call_id: int) -> None:
        """Baseline synchronous tools: block until this call resolves.

        A call that cannot run yet (held side-effecting call before the
        commit) drains whatever is scheduled and then hands control back to
        generation; awaiting it would deadlock.
        """
        while not self.core.graph.records[call_id].terminal and len(self.queue):
            ev = advance_to_next(self.clock, self.queue)
            self._process_scheduled(ev.payload, interrupted=False)
            self._dispatch_ready()

    # -- generation ----------------------------------------------------------

    def _generate(self) -> Outcome:
        core = self.core
        handle = self.model.begin(core.context())
        parser = StepParser()
        emitted = 0
        while True:
            budget = budget_until_next(self.clock, self.queue)
            if budget is not None and budget <= 0:
                handle.interrupt()
                if emitted:
                    core.emit("interrupted", text=parser.buffer)
                    self._deliver_due(first_interrupted=True)
                else:
                    self._deliver_due(first_interrupted=False)
                return Outcome.CONTINUE
            chunk = handle.next_chunk()
            if chunk is None:
                break
            emitted += chunk.tokens
            self.total_tokens += chunk.tokens
            advance_generation(self.clock, self.queue, chunk.tokens)
            if self.total_tokens > self.config.max_total_tokens:
                handle.interrupt()
                core.fail("max token cap reached")
                return Outcome.FAILED
            core.append_model_text(chunk.text)
            actions, err = parser.feed(chunk.text)
            if parser.saw_answer_tag and not core.answer_started:
                core.note_answer_started()
            for action in actions:
                if isinstance(action, Think):
                    core.handle_action(action)
                    continue
                outcome = core.handle_action(action)
                if outcome in (Outcome.REJECTED, Outcome.FAILED):
                    handle.interrupt()
                    return outcome
                self._dispatch_ready()
                if outcome in (Outcome.ANSWERED, Outcome.PAUSE):
                    handle.interrupt()
                    return outcome
                if self.config.mode == "baseline" and isinstance(action, ToolCall):
                    # Await the observation before generating further.
                    handle.interrupt()
                    self._drain_until_resolved(action.id)
                    return Outcome.CONTINUE
            if err is not None:
                handle.interrupt()
                return core.forbidden(err)
        # Stream completed on its own.
        err = parser.finish()
        if err is not None:
            return core.forbidden(err)
        return Outcome.CONTINUE

    # -- main loop -------------------------------------------------------------

    def run(self) -> Trajectory:
        self._schedule_updates()
        core = self.core
        while True:
            self._deliver_due(first_interrupted=False)
            if core.phase in (Phase.ANSWERED, Phase.FAILED):
                break
            self._dispatch_ready()
            outcome = self._generate()
            if outcome in (Outcome.ANSWERED, Outcome.FAILED):
                break
            if outcome == Outcome.PAUSE:
                try:
                    ev = advance_to_next(self.clock, self.queue)
                except EmptyQueueError:
                    out = core.forbidden("pause with nothing outstanding")
                    if out == Outcome.FAILED:
                        break
                    continue
                self._process_scheduled(ev.payload, interrupted=False)
                self._dispatch_ready()
        status = "answered" if core.phase == Phase.ANSWERED else "failed"
        core.emit(
            "end",
            status=status,
            reason=core.end_reason,
            error_count=core.error_count,
            total_tokens=self.total_tokens,
        )
        if core.phase == Phase.ANSWERED:
            from .metrics import latency_of

            report = latency_of(self.trajectory)
            core.emit(
                "metrics",
                ttft_seconds=report.ttft_seconds,
                total_seconds=report.total_seconds,
                per_tool={str(k): v for k, v in report.per_tool.items()},
            )
        return self.trajectory


def run_session(
    config: RunConfig,
    model,
    registry: ToolRegistry,
    update_plan: UpdatePlan,
    sim_state: SimState | None = None,
    sample_id: str = "sample",
    dataset: str = "",
) -> Trajectory:
    """Run one simulated session to completion and return its trajectory."""
    return SimSession(
        config, model, registry, update_plan, sim_state, sample_id, dataset
    ).run()
