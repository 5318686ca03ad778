"""Model abstraction: an interruptible streaming text source.

Three implementations: a deterministic scripted model (tests, benchmarks,
data synthesis), a recorded-trajectory replayer, and a client for an
external event-stream API. Scripted emissions stream one token per tick
so the virtual clock can interrupt generation at token granularity; token
counts follow a deterministic rule (whitespace-delimited words plus one
per tag) so trajectories are portable.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

import httpx

from .protocol import PlanEntry

WAIT_EMISSION = "<think>waiting for more information</think><pause>"


class ScriptExhausted(Exception):
    """The script has no step for the current context: test misconfiguration."""


class ModelTransportError(Exception):
    """External model client failure (never surfaced as a silent pause)."""


# ---------------------------------------------------------------------------
# Token accounting
# ---------------------------------------------------------------------------

_TAG_RE = re.compile(r"</?[a-z_]+>")


def tokenize_cost(text: str) -> int:
    """Deterministic token count: whitespace-delimited words + 1 per tag."""
    tags = len(_TAG_RE.findall(text))
    words = len(_TAG_RE.sub(" ", text).split())
    return tags + words


def split_units(text: str) -> list[str]:
    """Split text into token units (tags and words), preserving all bytes."""
    units: list[str] = []
    pending = ""

    def flush_words(seg: str) -> None:
        nonlocal pending
        pos = 0
        for m in re.finditer(r"\s*\S+", seg):
            units.append(pending + m.group(0))
            pending = ""
            pos = m.end()
        pending += seg[pos:]

    i = 0
    for m in _TAG_RE.finditer(text):
        if m.start() > i:
            flush_words(text[i : m.start()])
        units.append(pending + m.group(0))
        pending = ""
        i = m.end()
    if i < len(text):
        flush_words(text[i:])
    if pending:
        if units:
            units[-1] += pending
        else:
            units.append(pending)
    return units


def chunk_emission(text: str, cost: int) -> list[str]:
    """Distribute an emission over exactly ``cost`` one-token chunks.

    Extra budget beyond the natural unit count becomes silent thinking
    ticks right after the opening think tag; a tighter budget merges the
    leading units into the first tick.
    """
    units = split_units(text)
    cost = max(1, cost) if units else 0
    n = len(units)
    if cost == n:
        return units
    if cost > n:
        pad_at = 1 if units and units[0].lstrip().startswith("<think>") else 0
        return units[:pad_at] + [""] * (cost - n) + units[pad_at:]
    merged = "".join(units[: n - cost + 1])
    return [merged] + units[n - cost + 1 :]


# ---------------------------------------------------------------------------
# Context view and triggers
# ---------------------------------------------------------------------------


@dataclass
class ContextView:
    """Structured summary of the context the model can see."""

    updates_seen: int = 0
    final_received: bool = False
    query_text: str = ""
    calls: tuple[PlanEntry, ...] = ()
    info_ids: frozenset[int] = frozenset()
    info_texts: dict[int, str] = field(default_factory=dict)
    cancelled_ids: frozenset[int] = frozenset()
    error_count: int = 0

    @property
    def unresolved_ids(self) -> set[int]:
        return {c.id for c in self.calls if c.status in ("I", "H", "X")}

    @property
    def quiescent(self) -> bool:
        return self.final_received and not self.unresolved_ids

    @property
    def next_id(self) -> int:
        known = {c.id for c in self.calls} | set(self.cancelled_ids)
        return max(known, default=0) + 1


@dataclass
class Context:
    """Ordered segments plus the derived view."""

    segments: list[tuple[str, str]]  # (origin: "model" | "injected", text)
    view: ContextView

    def text(self) -> str:
        return "".join(t for _, t in self.segments)


@dataclass(frozen=True)
class Always:
    def matches(self, view: ContextView) -> bool:
        return True


@dataclass(frozen=True)
class AfterUpdates:
    n: int

    def matches(self, view: ContextView) -> bool:
        return view.updates_seen >= self.n


@dataclass(frozen=True)
class AfterFinal:
    def matches(self, view: ContextView) -> bool:
        return view.final_received


@dataclass(frozen=True)
class AfterInfo:
    id: int

    def matches(self, view: ContextView) -> bool:
        return self.id in view.info_ids


@dataclass(frozen=True)
class Quiescent:
    """Final update received and every issued call resolved."""

    def matches(self, view: ContextView) -> bool:
        return view.quiescent


@dataclass(frozen=True)
class CallAbsent:
    """The id was never issued (not active, not cancelled)."""

    id: int

    def matches(self, view: ContextView) -> bool:
        return self.id not in {c.id for c in view.calls} and self.id not in view.cancelled_ids


@dataclass(frozen=True)
class AnyOf:
    of: tuple

    def matches(self, view: ContextView) -> bool:
        return any(t.matches(view) for t in self.of)


Trigger = Always | AfterUpdates | AfterFinal | AfterInfo | Quiescent | CallAbsent | AnyOf

_TRIGGER_KINDS = {
    "always": Always,
    "after_updates": AfterUpdates,
    "after_final": AfterFinal,
    "after_info": AfterInfo,
    "quiescent": Quiescent,
    "call_absent": CallAbsent,
    "any_of": AnyOf,
}


def trigger_to_dict(t: Trigger) -> dict:
    for kind, cls in _TRIGGER_KINDS.items():
        if isinstance(t, cls):
            d = {"kind": kind}
            if isinstance(t, AfterUpdates):
                d["n"] = t.n
            elif isinstance(t, (AfterInfo, CallAbsent)):
                d["id"] = t.id
            elif isinstance(t, AnyOf):
                d["of"] = [trigger_to_dict(x) for x in t.of]
            return d
    raise TypeError(f"not a trigger: {t!r}")


def trigger_from_dict(d: dict) -> Trigger:
    cls = _TRIGGER_KINDS[d["kind"]]
    if cls is AfterUpdates:
        return AfterUpdates(int(d["n"]))
    if cls is AfterInfo:
        return AfterInfo(int(d["id"]))
    if cls is CallAbsent:
        return CallAbsent(int(d["id"]))
    if cls is AnyOf:
        return AnyOf(tuple(trigger_from_dict(x) for x in d["of"]))
    return cls()


# ---------------------------------------------------------------------------
# Scripts
# ---------------------------------------------------------------------------


@dataclass
class ScriptStep:
    trigger: Trigger
    emission: str
    cost: int | None = None  # total tokens; defaults to tokenize_cost(emission)
    skip_if: Trigger | None = None  # consume without emitting when this matches

    def token_cost(self) -> int:
        return self.cost if self.cost is not None else tokenize_cost(self.emission)

    def to_dict(self) -> dict:
        d = {"trigger": trigger_to_dict(self.trigger), "emission": self.emission}
        if self.cost is not None:
            d["cost"] = self.cost
        if self.skip_if is not None:
            d["skip_if"] = trigger_to_dict(self.skip_if)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptStep":
        return cls(
            trigger=trigger_from_dict(d["trigger"]),
            emission=d["emission"],
            cost=d.get("cost"),
            skip_if=trigger_from_dict(d["skip_if"]) if "skip_if" in d else None,
        )


@dataclass
class Script:
    steps: list[ScriptStep]
    auto_wait: bool = True  # emit a pause step when the next trigger is not yet met

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "auto_wait": self.auto_wait}

    @classmethod
    def from_dict(cls, d: dict) -> "Script":
        return cls(
            steps=[ScriptStep.from_dict(s) for s in d["steps"]],
            auto_wait=d.get("auto_wait", True),
        )


# ---------------------------------------------------------------------------
# Generation handles
# ---------------------------------------------------------------------------


@dataclass
class Chunk:
    text: str
    tokens: int = 1


class GenerationHandle:
    """One generation stream; emission and interruption may race.

    After interrupt() at most one further token is emitted.
    """

    def next_chunk(self) -> Chunk | None:
        raise NotImplementedError

    def interrupt(self) -> None:
        raise NotImplementedError


class _ListHandle(GenerationHandle):
    def __init__(self, chunks: list[str], on_complete=None):
        self._chunks = chunks
        self._pos = 0
        self._interrupted = False
        self._on_complete = on_complete

    def next_chunk(self) -> Chunk | None:
        if self._interrupted or self._pos >= len(self._chunks):
            if self._pos >= len(self._chunks) and self._on_complete:
                cb, self._on_complete = self._on_complete, None
                cb()
            return None
        text = self._chunks[self._pos]
        self._pos += 1
        if self._pos >= len(self._chunks) and self._on_complete:
            cb, self._on_complete = self._on_complete, None
            cb()
        return Chunk(text=text, tokens=1)

    def interrupt(self) -> None:
        self._interrupted = True


# ---------------------------------------------------------------------------
# Scripted model
# ---------------------------------------------------------------------------


class ScriptedModel:
    """Plays a script in step order, waiting when the next step is not due."""

    def __init__(self, script: Script):
        self.script = script
        self.pointer = 0

    def begin(self, context: Context) -> GenerationHandle:
        view = context.view
        while (
            self.pointer < len(self.script.steps)
            and self.script.steps[self.pointer].skip_if is not None
            and self.script.steps[self.pointer].skip_if.matches(view)
        ):
            self.pointer += 1
        if self.pointer >= len(self.script.steps):
            raise ScriptExhausted(f"no step left after {self.pointer} steps")
        step = self.script.steps[self.pointer]
        if step.trigger.matches(view):
            index = self.pointer

            def consume(i=index):
                if self.pointer == i:
                    self.pointer = i + 1

            return _ListHandle(chunk_emission(step.emission, step.token_cost()), consume)
        if self.script.auto_wait:
            return _ListHandle(chunk_emission(WAIT_EMISSION, tokenize_cost(WAIT_EMISSION)))
        raise ScriptExhausted(
            f"step {self.pointer} trigger {self.script.steps[self.pointer].trigger} not met"
        )


def replay_model_from_entries(entries: list[dict]) -> ScriptedModel:
    """Rebuild a scripted model from recorded trajectory action entries.

    Each recorded think is folded into the following action's emission.
    """
    steps: list[ScriptStep] = []
    pending_think = ""
    for e in entries:
        if e.get("kind") != "action":
            continue
        if e.get("action") == "think":
            pending_think = e.get("text", "")
            continue
        emission = pending_think + e.get("text", "")
        pending_think = ""
        steps.append(ScriptStep(trigger=Always(), emission=emission))
    return ScriptedModel(Script(steps=steps, auto_wait=True))


# ---------------------------------------------------------------------------
# External streaming API client
# ---------------------------------------------------------------------------

AUTH_ENV_VAR = "SPECAGENT_MODEL_TOKEN"


@dataclass
class StreamingApiConfig:
    base_url: str
    model: str
    timeout: float = 30.0
    auth_env_var: str = AUTH_ENV_VAR


class _SseHandle(GenerationHandle):
    def __init__(self, response, stream_cm):
        self._response = response
        self._cm = stream_cm
        self._lines = response.iter_lines()
        self._done = False

    def next_chunk(self) -> Chunk | None:
        if self._done:
            return None
        try:
            for line in self._lines:
                if not line.startswith("data:"):
                    continue
                payload = line[len("data:") :].strip()
                if payload == "[DONE]":
                    self._close()
                    return None
                d = json.loads(payload)
                return Chunk(text=d.get("text", ""), tokens=int(d.get("tokens", 1)))
        except httpx.HTTPError as e:
            self._close()
            raise ModelTransportError(str(e)) from e
        self._close()
        return None

    def interrupt(self) -> None:
        self._close()

    def _close(self) -> None:
        if not self._done:
            self._done = True
            self._cm.__exit__(None, None, None)


class StreamingApiModel:
    """Client for an event-stream generation endpoint.

    POSTs the context segments to ``{base_url}/v1/stream`` and reads
    ``data: {"text": ..., "tokens": ...}`` lines until ``data: [DONE]``.
    """

    def __init__(self, config: StreamingApiConfig, client: httpx.Client | None = None):
        self.config = config
        headers = {}
        token = os.environ.get(config.auth_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(
            base_url=config.base_url, timeout=config.timeout, headers=headers
        )

    def begin(self, context: Context) -> GenerationHandle:
        body = {
            "model": self.config.model,
            "segments": [{"origin": o, "text": t} for o, t in context.segments],
        }
        try:
            cm = self._client.stream("POST", "/v1/stream", json=body)
            response = cm.__enter__()
            if response.status_code != 200:
                cm.__exit__(None, None, None)
                raise ModelTransportError(f"status {response.status_code}")
        except httpx.HTTPError as e:
            raise ModelTransportError(str(e)) from e
        return _SseHandle(response, cm)


# ---------------------------------------------------------------------------
# Interactive demo model (drives the live gateway demo deterministically)
# ---------------------------------------------------------------------------

_MSG_RE = re.compile(r"(?:message|text) to (\w+)", re.IGNORECASE)
_BODY_RE = re.compile(r"saying (.+?)\s*$", re.IGNORECASE)
_SEARCH_RE = re.compile(r"(?:search for|look up|what is|who is) (.+?)\s*$", re.IGNORECASE)


class InteractiveDemoModel:
    """Keyword-rule model: speculates a contact lookup from a partial
    utterance, revises it when the hypothesis changes, holds the message
    send until commit, and answers from observations."""

    def begin(self, context: Context) -> GenerationHandle:
        emission = self._decide(context.view)
        return _ListHandle(chunk_emission(emission, tokenize_cost(emission)))

    def _decide(self, view: ContextView) -> str:
        q = view.query_text
        msg = _MSG_RE.search(q)
        search = _SEARCH_RE.search(q)
        by_name = {c.name: c for c in view.calls}
        if msg:
            name = msg.group(1)
            lookup = by_name.get("get_contact")
            if lookup is None:
                return (
                    f"<think>the user wants to message {name}; fetching the contact early</think>"
                    f'<tool_call>{view.next_id}. get_contact("{name}")</tool_call>'
                )
            current = lookup.args[0].value if lookup.args else ""
            if current != name and lookup.status in ("I", "X"):
                return (
                    f"<think>the recipient changed to {name}; rewriting the lookup</think>"
                    f'<tool_call>{lookup.id}. get_contact("{name}")</tool_call>'
                )
            if current != name and lookup.status == "C":
                # the stale lookup already delivered; fetch the new contact fresh
                return (
                    f"<think>the recipient changed to {name} after the lookup finished</think>"
                    f'<tool_call>{view.next_id}. get_contact("{name}")</tool_call>'
                )
            send = by_name.get("send_message")
            body_m = _BODY_RE.search(q)
            if send is None and body_m:
                body = body_m.group(1).strip().rstrip(".")
                return (
                    "<think>recipient and body are known; queueing the send</think>"
                    f'<tool_call>{view.next_id}. send_message(${lookup.id}, "{body}")</tool_call>'
                )
            if send is not None and send.status == "C":
                return (
                    "<think>the message went out; reporting back</think>"
                    f"<answer>Message sent to {name}.</answer>"
                )
            return WAIT_EMISSION
        if search:
            topic = search.group(1).strip().rstrip("?.")
            call = by_name.get("search_web")
            if call is None:
                return (
                    f"<think>looking up {topic} right away</think>"
                    f'<tool_call>{view.next_id}. search_web("{topic}")</tool_call>'
                )
            if call.status == "C" and view.final_received:
                answer = view.info_texts.get(call.id, "no results")
                return f"<think>found it</think><answer>{answer}</answer>"
            return WAIT_EMISSION
        if view.final_received and view.quiescent:
            return "<think>nothing actionable in the request</think><answer>Okay.</answer>"
        return WAIT_EMISSION
