"""Task execution manager for speculative tool calls.

Issued tool calls form a DAG through ``$N`` argument references. Re-issuing
an existing id overwrites that call (a modification); the special REMOVE
call cancels a call and, transitively, everything depending on it. Tools
classified unsafe (side-effecting) are held and may not start executing
until the graph commits; commit happens once the final query update has
arrived and the model either opens a fresh id beyond every previous one or
pauses. Results of superseded generations are discarded on arrival.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .protocol import Arg, Pause, ToolCall


class Safety(enum.Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"


class Status(enum.Enum):
    ISSUED = "issued"
    HELD = "held"
    EXECUTING = "executing"
    COMPLETED = "completed"
    CANCELLED = "cancelled"


# Plan-hint letters for the non-terminal-or-completed statuses.
STATUS_LETTER = {
    Status.ISSUED: "I",
    Status.HELD: "H",
    Status.EXECUTING: "X",
    Status.COMPLETED: "C",
}


class GraphError(Exception):
    """Base for rejected graph edits; the loop reports these to the model."""


class CycleError(GraphError):
    pass


class UnknownRefError(GraphError):
    pass


class UnknownIdError(GraphError):
    pass


class PostCommitEditError(GraphError):
    pass


class ConsumedObservationError(GraphError):
    """Edit of a call whose observation is already in the model's context."""


class CancelledIdError(GraphError):
    pass


@dataclass
class ToolCallRecord:
    id: int
    name: str
    args: tuple[Arg, ...]
    safety: Safety
    status: Status
    deps: frozenset[int]
    generation: int = 1
    observation: str | None = None
    cancel_reason: str | None = None
    cancel_notified: bool = False
    dispatched_generations: set[int] = field(default_factory=set)

    @property
    def terminal(self) -> bool:
        return self.status in (Status.COMPLETED, Status.CANCELLED)


@dataclass
class CompleteResult:
    deliver: bool
    emit_cancel: bool = False


class TaskGraph:
    """Mutable graph state, owned and serialized by one session controller."""

    def __init__(self):
        self.records: dict[int, ToolCallRecord] = {}
        self.max_issued_id = 0
        self.committed = False
        self.final_query_received = False
        self.pending_discards: set[tuple[int, int]] = set()

    # -- queries ------------------------------------------------------------

    def dependents_closure(self, root: int) -> set[int]:
        """All ids that transitively depend on root (root excluded)."""
        out: set[int] = set()
        frontier = [root]
        while frontier:
            cur = frontier.pop()
            for rec in self.records.values():
                if cur in rec.deps and rec.id not in out and rec.id != root:
                    out.add(rec.id)
                    frontier.append(rec.id)
        return out

    def ready_set(self) -> list[int]:
        """Ids eligible for dispatch, in ascending id order.

        A safe issued call is ready once its dependencies completed; a held
        unsafe call additionally waits for commit.
        """
        out = []
        for rec in sorted(self.records.values(), key=lambda r: r.id):
            if rec.status == Status.ISSUED or (rec.status == Status.HELD and self.committed):
                if all(
                    d in self.records and self.records[d].status == Status.COMPLETED
                    for d in rec.deps
                ):
                    out.append(rec.id)
        return out

    def non_terminal_ids(self) -> list[int]:
        return sorted(r.id for r in self.records.values() if not r.terminal)

    def active_plan(self) -> list[ToolCallRecord]:
        """Non-cancelled records in id order, for plan hints."""
        return [r for r in sorted(self.records.values(), key=lambda r: r.id)
                if r.status != Status.CANCELLED]

    # -- mutations ----------------------------------------------------------

    def note_final_query(self) -> None:
        self.final_query_received = True

    def issue(self, call: ToolCall, safety: Safety) -> ToolCallRecord:
        """Insert a fresh call or overwrite an existing id (a modification)."""
        if call.id < 1:
            raise UnknownIdError("tool call id must be >= 1")
        deps = call.ref_ids()
        existing = self.records.get(call.id)
        for d in deps:
            if d == call.id:
                raise CycleError(f"call {call.id} cannot reference itself")
            if d not in self.records:
                raise UnknownRefError(f"reference to never-issued call {d}")
            if self.records[d].status == Status.CANCELLED:
                # a dependency that will never complete would strand this call
                raise CancelledIdError(f"reference to cancelled call {d}")
            if existing is None and d > call.id:
                raise CycleError(
                    f"reference to {d} must be strictly smaller than the new id {call.id}"
                )
        if existing is None:
            status = Status.ISSUED if safety == Safety.SAFE else Status.HELD
            rec = ToolCallRecord(
                id=call.id, name=call.name, args=call.args,
                safety=safety, status=status, deps=frozenset(deps),
            )
            self.records[call.id] = rec
            self.max_issued_id = max(self.max_issued_id, call.id)
            return rec
        # Modification path.
        if existing.status == Status.CANCELLED:
            raise CancelledIdError(f"call {call.id} was cancelled and cannot be reissued")
        if existing.status == Status.COMPLETED:
            raise ConsumedObservationError(
                f"call {call.id} already completed and its observation was delivered"
            )
        if (
            self.committed
            and existing.safety == Safety.UNSAFE
            and existing.status == Status.EXECUTING
        ):
            raise PostCommitEditError(
                f"call {call.id} is side-effecting and already executing"
            )
        descendants = self.dependents_closure(call.id)
        for d in deps:
            if d == call.id or d in descendants:
                raise CycleError(f"reference to {d} would create a cycle through {call.id}")
        if existing.status == Status.EXECUTING:
            self.pending_discards.add((call.id, existing.generation))
        existing.name = call.name
        existing.args = call.args
        existing.deps = frozenset(deps)
        existing.generation += 1
        existing.safety = safety
        existing.status = Status.ISSUED if safety == Safety.SAFE else Status.HELD
        existing.observation = None
        return existing

    def remove(self, target_id: int) -> list[int]:
        """Cancel target_id and all transitive dependents.

        Returns the newly cancelled ids in topological (dependency-first)
        order so the caller can emit cancellation notices.
        """
        rec = self.records.get(target_id)
        if rec is None:
            raise UnknownIdError(f"call {target_id} was never issued")
        if rec.status == Status.CANCELLED:
            raise CancelledIdError(f"call {target_id} is already cancelled")
        if rec.status == Status.COMPLETED:
            raise ConsumedObservationError(
                f"call {target_id} already completed and its observation was delivered"
            )
        if self.committed and rec.safety == Safety.UNSAFE and rec.status == Status.EXECUTING:
            raise PostCommitEditError(
                f"call {target_id} is side-effecting and already executing"
            )
        doomed = {target_id} | {
            d for d in self.dependents_closure(target_id)
            if not self.records[d].terminal
        }
        order = self._topological(doomed)
        for i in order:
            r = self.records[i]
            r.status = Status.CANCELLED
            r.cancel_reason = (
                "removed" if i == target_id else f"depends on cancelled call {target_id}"
            )
            r.cancel_notified = True  # the caller emits notices for the returned ids
        return order

    def _topological(self, ids: set[int]) -> list[int]:
        """Dependency-first order over the induced subgraph, ties by id."""
        remaining = set(ids)
        out: list[int] = []
        while remaining:
            layer = sorted(
                i for i in remaining
                if not (self.records[i].deps & remaining)
            )
            if not layer:  # cannot happen while the graph is acyclic
                raise CycleError("dependency cycle detected during cancellation")
            for i in layer:
                out.append(i)
                remaining.discard(i)
        return out

    def would_commit(self, action) -> bool:
        """True when this action, applied now, would latch the commit barrier.

        Evaluate *before* applying the action: a fresh id beyond every
        previously issued one, or a pause, commits once the final query
        update has been received. Edits of existing ids never commit.
        """
        if self.committed or not self.final_query_received:
            return False
        return isinstance(action, Pause) or (
            isinstance(action, ToolCall) and action.id > self.max_issued_id
        )

    def latch_commit(self) -> None:
        self.committed = True

    def maybe_commit(self, action) -> bool:
        """Check and latch in one step (for actions that cannot fail to apply)."""
        if self.would_commit(action):
            self.latch_commit()
            return True
        return False

    def mark_executing(self, call_id: int) -> ToolCallRecord:
        rec = self.records.get(call_id)
        if rec is None:
            raise UnknownIdError(f"call {call_id} was never issued")
        if rec.status not in (Status.ISSUED, Status.HELD):
            raise GraphError(f"call {call_id} is {rec.status.value}, not dispatchable")
        if rec.safety == Safety.UNSAFE and not self.committed:
            raise PostCommitEditError(
                f"call {call_id} is side-effecting and the graph is not committed"
            )
        rec.status = Status.EXECUTING
        rec.dispatched_generations.add(rec.generation)
        return rec

    def complete(self, call_id: int, generation: int, observation: str) -> CompleteResult:
        """Record an execution result; deliver only if it is still current."""
        rec = self.records.get(call_id)
        if rec is None:
            raise UnknownIdError(f"call {call_id} was never issued")
        if generation not in rec.dispatched_generations:
            raise GraphError(
                f"call {call_id} generation {generation} was never dispatched"
            )
        if rec.status == Status.CANCELLED:
            emit = not rec.cancel_notified
            rec.cancel_notified = True
            return CompleteResult(deliver=False, emit_cancel=emit)
        if generation != rec.generation or rec.status == Status.COMPLETED:
            self.pending_discards.discard((call_id, generation))
            return CompleteResult(deliver=False)
        rec.status = Status.COMPLETED
        rec.observation = observation
        return CompleteResult(deliver=True)
