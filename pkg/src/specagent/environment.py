"""Tool registry and simulated world.

Tools declare a safety class (read-only tools are safe to run
speculatively; side-effecting tools are unsafe and held until commit) and
a latency model. Handlers are pure: they map resolved arguments plus the
current world state to an observation and an optional mutation, and the
session controller applies mutations in completion order. Correctness of
a session is judged by replaying the ground-truth calls on a copy of the
initial state and comparing the write-visible tables.
"""

from __future__ import annotations

import copy
import importlib
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import yaml

from .protocol import Arg, Ref, ToolCall
from .taskgraph import Safety

WRITE_TABLES = ("messages_sent", "events_created", "files_written")


class ToolRuntimeError(Exception):
    """Handler failure; reported to the model inside the observation."""


class MissingDependencyError(Exception):
    """A $N reference had no completed observation at dispatch time."""


class GroundTruthExecutionError(Exception):
    pass


class UnknownToolError(KeyError):
    pass


# ---------------------------------------------------------------------------
# Latency models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedLatency:
    seconds: float

    def draw(self, rng) -> float:
        return self.seconds


@dataclass(frozen=True)
class UniformLatency:
    low: float
    high: float

    def draw(self, rng) -> float:
        return rng.uniform(self.low, self.high)


@dataclass(frozen=True)
class MeasuredLatency:
    """Wall-clock of the real handler execution; only meaningful live."""

    def draw(self, rng) -> float:
        return 0.0


LatencyModel = FixedLatency | UniformLatency | MeasuredLatency


def latency_from_config(cfg: object) -> LatencyModel:
    if isinstance(cfg, dict):
        kind = cfg.get("kind", "uniform")
        if kind == "fixed":
            return FixedLatency(float(cfg["seconds"]))
        if kind == "uniform":
            return UniformLatency(float(cfg["low"]), float(cfg["high"]))
        if kind == "measured":
            return MeasuredLatency()
        raise ValueError(f"unknown latency kind {kind!r}")
    if isinstance(cfg, (int, float)):
        return FixedLatency(float(cfg))
    raise ValueError(f"bad latency config {cfg!r}")


# ---------------------------------------------------------------------------
# Simulated world state
# ---------------------------------------------------------------------------


@dataclass
class Mutation:
    """Append one record to a named table."""

    table: str
    record: dict


class SimState:
    """Named tables of records; snapshot-comparable."""

    def __init__(self, tables: dict[str, list[dict]] | None = None):
        self.tables: dict[str, list[dict]] = {}
        for name, rows in (tables or {}).items():
            self.tables[name] = [dict(r) for r in rows]

    def copy(self) -> "SimState":
        return SimState(copy.deepcopy(self.tables))

    def rows(self, table: str) -> list[dict]:
        return self.tables.setdefault(table, [])

    def apply(self, mutation: Mutation) -> None:
        self.rows(mutation.table).append(dict(mutation.record))

    def snapshot(self, tables: tuple[str, ...] = WRITE_TABLES) -> dict[str, list]:
        """Order-insensitive canonical form of the selected tables."""
        out = {}
        for t in tables:
            rows = self.tables.get(t, [])
            out[t] = sorted(sorted(r.items()) for r in rows)
        return out

    def equal_writes(self, other: "SimState") -> bool:
        return self.snapshot() == other.snapshot()


def demo_state() -> SimState:
    """A small populated world for tests, benchmarks and the live demo."""
    return SimState(
        {
            "contacts": [
                {"name": "Alice", "email": "alice@example.com"},
                {"name": "Alicia", "email": "alicia@example.com"},
                {"name": "Bob", "email": "bob@example.com"},
                {"name": "Carol", "email": "carol@example.com"},
                {"name": "Dave", "email": "dave@example.com"},
            ],
            "files": [
                {"path": "notes.txt", "content": "remember the milk"},
                {"path": "report.txt", "content": "quarterly numbers are up"},
            ],
            "pages": [
                {"topic": "paris", "text": "Paris is the capital of France."},
                {"topic": "tokyo", "text": "Tokyo is the capital of Japan."},
                {"topic": "everest", "text": "Mount Everest is the highest mountain."},
            ],
        }
    )


# ---------------------------------------------------------------------------
# Handlers (read-only handlers must not return mutations)
# ---------------------------------------------------------------------------

Handler = Callable[[list, SimState], tuple[str, Mutation | None]]


def get_contact_handler(args: list, state: SimState) -> tuple[str, Mutation | None]:
    if not args:
        raise ToolRuntimeError("get_contact requires a name")
    name = str(args[0])
    for row in state.rows("contacts"):
        if row["name"].lower() == name.lower():
            return row["email"], None
    return f"no contact named {name}", None


def search_web_handler(args: list, state: SimState) -> tuple[str, Mutation | None]:
    if not args:
        raise ToolRuntimeError("search_web requires a query")
    query = str(args[0]).lower()
    for row in state.rows("pages"):
        if row["topic"] in query:
            return row["text"], None
    return f"no results for: {args[0]}", None


def open_file_handler(args: list, state: SimState) -> tuple[str, Mutation | None]:
    if not args:
        raise ToolRuntimeError("open_file requires a path")
    path = str(args[0])
    for row in state.rows("files"):
        if row["path"] == path:
            return row["content"], None
    return f"no such file: {path}", None


def send_message_handler(args: list, state: SimState) -> tuple[str, Mutation | None]:
    if len(args) < 2:
        raise ToolRuntimeError("send_message requires recipient and body")
    recipient, body = str(args[0]), str(args[1])
    return (
        f"message sent to {recipient}",
        Mutation("messages_sent", {"recipient": recipient, "body": body}),
    )


def create_event_handler(args: list, state: SimState) -> tuple[str, Mutation | None]:
    if len(args) < 2:
        raise ToolRuntimeError("create_event requires a title and a time")
    title, when = str(args[0]), str(args[1])
    return (
        f"event created: {title}",
        Mutation("events_created", {"title": title, "when": when}),
    )


def write_file_handler(args: list, state: SimState) -> tuple[str, Mutation | None]:
    if len(args) < 2:
        raise ToolRuntimeError("write_file requires a path and content")
    path, content = str(args[0]), str(args[1])
    return (
        f"wrote {path}",
        Mutation("files_written", {"path": path, "content": content}),
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass
class ToolSpec:
    name: str
    safety: Safety
    latency_model: LatencyModel
    handler: Handler


class ToolRegistry:
    def __init__(self, specs: dict[str, ToolSpec] | None = None):
        self.specs = dict(specs or {})

    def __contains__(self, name: str) -> bool:
        return name in self.specs

    def get(self, name: str) -> ToolSpec:
        try:
            return self.specs[name]
        except KeyError:
            raise UnknownToolError(name) from None

    def add(self, spec: ToolSpec) -> None:
        self.specs[spec.name] = spec

    def with_latency(self, model: LatencyModel) -> "ToolRegistry":
        """Copy of the registry with every tool's latency model replaced."""
        return ToolRegistry(
            {
                n: ToolSpec(s.name, s.safety, model, s.handler)
                for n, s in self.specs.items()
            }
        )


def load_registry(path: str | Path) -> ToolRegistry:
    """Load a declarative tool manifest (name, safety, latency, handler)."""
    data = yaml.safe_load(Path(path).read_text())
    reg = ToolRegistry()
    for entry in data["tools"]:
        mod_name, func_name = entry["handler"].split(":")
        handler = getattr(importlib.import_module(mod_name), func_name)
        reg.add(
            ToolSpec(
                name=entry["name"],
                safety=Safety(entry["safety"]),
                latency_model=latency_from_config(entry.get("latency", {"kind": "uniform", "low": 0.5, "high": 1.0})),
                handler=handler,
            )
        )
    return reg


def default_registry() -> ToolRegistry:
    """The bundled demo toolset, loaded from the packaged manifest."""
    return load_registry(Path(__file__).parent / "data" / "tools.yaml")


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def resolve_refs(args: tuple[Arg, ...] | list[Arg], completions: dict[int, str]) -> list:
    """Substitute every $N with the completed observation for call N."""
    out = []
    for a in args:
        if isinstance(a.value, Ref):
            if a.value.id not in completions:
                raise MissingDependencyError(f"no completed observation for call {a.value.id}")
            out.append(completions[a.value.id])
        else:
            out.append(a.value)
    return out


def execute(
    spec: ToolSpec, resolved_args: list, state: SimState, rng
) -> tuple[str, float, Mutation | None]:
    """Run a handler and draw its latency.

    Handler failures become error-text observations so a bad call never
    crashes a session. Safe handlers must not return a mutation.
    """
    latency = spec.latency_model.draw(rng)
    try:
        observation, mutation = spec.handler(resolved_args, state)
    except ToolRuntimeError as e:
        return f"tool error: {e}", latency, None
    if spec.safety == Safety.SAFE and mutation is not None:
        raise ToolRuntimeError(f"read-only tool {spec.name} attempted a state mutation")
    return observation, latency, mutation


def replay_ground_truth(
    initial: SimState, calls: list[ToolCall], registry: ToolRegistry
) -> SimState:
    """Execute the ground-truth calls in order on a copy of the state."""
    state = initial.copy()
    observations: dict[int, str] = {}
    for pos, call in enumerate(calls, start=1):
        try:
            spec = registry.get(call.name)
            resolved = resolve_refs(call.args, observations)
            obs, mutation = spec.handler(resolved, state)
        except (UnknownToolError, MissingDependencyError, ToolRuntimeError) as e:
            raise GroundTruthExecutionError(f"ground-truth call {pos} failed: {e}") from e
        observations[call.id if call.id else pos] = obs
        if mutation is not None:
            state.apply(mutation)
    return state


def state_correct(
    initial: SimState,
    achieved: SimState,
    ground_truth_calls: list[ToolCall],
    registry: ToolRegistry,
) -> bool:
    """Compare achieved write-visible state against a ground-truth replay."""
    expected = replay_ground_truth(initial, ground_truth_calls, registry)
    return achieved.equal_writes(expected)


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower().translate(_PUNCT_TABLE)).strip()


def answer_correct(answer_text: str, gold_answer: str) -> bool:
    """Normalized containment or exact match."""
    a, g = normalize_answer(answer_text), normalize_answer(gold_answer)
    if not a or not g:
        return False
    return g in a
