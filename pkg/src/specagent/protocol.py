"""Tag-based wire format between the model and the runtime.

Model output is a stream of tagged regions. Each complete step is one
``<think>...</think>`` block followed by one action: a ``<tool_call>``,
a bare ``<pause>``, or an ``<answer>...</answer>``. Tool-call bodies are
``ID. name(arg, key=arg, ...)`` with a positive integer id, or the special
body ``REMOVE ID.`` which cancels a previously issued call. Injected
runtime events render to tagged text blocks that are appended to the
model's context verbatim.

Grammar notes:
- Strings are double-quoted; ``\\``, ``"``, newline and tab are escaped.
  Free text (think/answer bodies, string literals) must not contain the
  literal closing tag of its enclosing region; the parser scans for the
  first closing tag.
- ``$N`` in an argument position references the observation of call N.
- Parsing is incremental: an unfinished trailing region is returned as a
  remainder and re-parsed once more bytes arrive, so any chunking of the
  same byte stream yields the same action sequence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Think:
    text: str


@dataclass(frozen=True)
class Ref:
    """Reference to the observation of a previously issued tool call."""

    id: int


@dataclass(frozen=True)
class Arg:
    """One argument: optional keyword, literal or reference value."""

    value: object  # str | int | float | bool | Ref
    key: str | None = None


@dataclass(frozen=True)
class ToolCall:
    id: int
    name: str
    args: tuple[Arg, ...] = ()

    def ref_ids(self) -> set[int]:
        return {a.value.id for a in self.args if isinstance(a.value, Ref)}


@dataclass(frozen=True)
class Pause:
    pass


@dataclass(frozen=True)
class Answer:
    text: str


@dataclass(frozen=True)
class Remove:
    target_id: int


Action = Think | ToolCall | Pause | Answer | Remove


# ---------------------------------------------------------------------------
# Injected events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartialQueryUpdate:
    text: str
    interrupted: bool = False


@dataclass(frozen=True)
class FinalQueryUpdate:
    text: str
    interrupted: bool = False


@dataclass(frozen=True)
class Information:
    id: int
    text: str
    interrupted: bool = False


@dataclass(frozen=True)
class CancelNotice:
    id: int
    reason: str
    interrupted: bool = False


@dataclass(frozen=True)
class PlanEntry:
    """One row of a plan hint: an active (non-cancelled) tool call."""

    id: int
    name: str
    args: tuple[Arg, ...]
    status: str  # one of "I", "H", "X", "C"


@dataclass(frozen=True)
class PlanHint:
    calls: tuple[PlanEntry, ...]
    interrupted: bool = False


@dataclass(frozen=True)
class ErrorNotice:
    text: str
    interrupted: bool = False


InjectedEvent = (
    PartialQueryUpdate | FinalQueryUpdate | Information | CancelNotice | PlanHint | ErrorNotice
)

INTERRUPT_MARK = "</think_interrupted>"

PLAN_STATUS_LETTERS = ("I", "H", "X", "C")


@dataclass(frozen=True)
class Malformed:
    """Diagnostic for a closed tag region that violates the grammar."""

    message: str
    text: str = ""


@dataclass
class ParseResult:
    actions: list[Action] = field(default_factory=list)
    remainder: str = ""
    malformed: Malformed | None = None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t"}
_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}


def escape_string(s: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in s)


def render_value(value: object) -> str:
    if isinstance(value, Ref):
        return f"${value.id}"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return f'"{escape_string(value)}"'
    raise TypeError(f"unsupported argument value: {value!r}")


def render_args(args: tuple[Arg, ...] | list[Arg]) -> str:
    parts = []
    for a in args:
        v = render_value(a.value)
        parts.append(f"{a.key}={v}" if a.key is not None else v)
    return ", ".join(parts)


def serialize_action(action: Action) -> str:
    if isinstance(action, Think):
        return f"<think>{action.text}</think>"
    if isinstance(action, ToolCall):
        return f"<tool_call>{action.id}. {action.name}({render_args(action.args)})</tool_call>"
    if isinstance(action, Pause):
        return "<pause>"
    if isinstance(action, Answer):
        return f"<answer>{action.text}</answer>"
    if isinstance(action, Remove):
        return f"<tool_call>REMOVE {action.target_id}.</tool_call>"
    raise TypeError(f"not an action: {action!r}")


def serialize_actions(actions: list[Action]) -> str:
    return "".join(serialize_action(a) for a in actions)


def render_call_body(call: ToolCall) -> str:
    """The tool-call body text without tags (dataset/plan-file encoding)."""
    return f"{call.id}. {call.name}({render_args(call.args)})"


def render_event(event: InjectedEvent) -> str:
    """Render an injected event to the exact tagged text placed in context."""
    prefix = INTERRUPT_MARK if event.interrupted else ""
    if isinstance(event, PartialQueryUpdate):
        body = f"<partial_query_update>{event.text}</partial_query_update>"
    elif isinstance(event, FinalQueryUpdate):
        body = f"<final_query_update>{event.text}</final_query_update>"
    elif isinstance(event, Information):
        if event.id < 1:
            raise ValueError("information id must be >= 1")
        body = f"<information> {event.id}. {event.text}</information>"
    elif isinstance(event, CancelNotice):
        if event.id < 1:
            raise ValueError("cancel id must be >= 1")
        body = f"<cancel> {event.id}. {event.reason}</cancel>"
    elif isinstance(event, PlanHint):
        rows = "".join(
            f"\n {c.id}. {c.name}({render_args(c.args)}) [{c.status}]" for c in event.calls
        )
        body = f"<current_plan>{rows}\n</current_plan>"
    elif isinstance(event, ErrorNotice):
        body = f"<error>{event.text}</error>"
    else:
        raise TypeError(f"not an injected event: {event!r}")
    return prefix + body


def serialize_events(events: list[InjectedEvent]) -> str:
    return "".join(render_event(e) for e in events)


# ---------------------------------------------------------------------------
# Action parsing
# ---------------------------------------------------------------------------

_OPEN_TAGS = ("<think>", "<tool_call>", "<answer>", "<pause>")


def _is_tag_prefix(fragment: str, tags: tuple[str, ...]) -> bool:
    return any(t.startswith(fragment) for t in tags)


class _Cursor:
    """Character cursor over a tool-call body or event body."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self) -> None:
        while not self.eof() and self.text[self.pos] in " \t":
            self.pos += 1

    def take(self, n: int = 1) -> str:
        s = self.text[self.pos : self.pos + n]
        self.pos += n
        return s

    def match(self, literal: str) -> bool:
        if self.text.startswith(literal, self.pos):
            self.pos += len(literal)
            return True
        return False

    def take_re(self, pattern: str) -> str | None:
        m = re.compile(pattern).match(self.text, self.pos)
        if not m:
            return None
        self.pos = m.end()
        return m.group(0)


class BodyError(ValueError):
    pass


def _parse_value(cur: _Cursor) -> object:
    c = cur.peek()
    if c == '"':
        cur.take()
        out = []
        while True:
            if cur.eof():
                raise BodyError("unterminated string literal")
            ch = cur.take()
            if ch == '"':
                return "".join(out)
            if ch == "\\":
                if cur.eof():
                    raise BodyError("dangling escape in string literal")
                esc = cur.take()
                if esc not in _UNESCAPES:
                    raise BodyError(f"unknown escape \\{esc}")
                out.append(_UNESCAPES[esc])
            else:
                out.append(ch)
    if c == "$":
        cur.take()
        digits = cur.take_re(r"\d+")
        if digits is None:
            raise BodyError("reference without id")
        rid = int(digits)
        if rid < 1:
            raise BodyError("reference id must be >= 1")
        return Ref(rid)
    num = cur.take_re(r"-?\d+(\.\d+)?([eE][+-]?\d+)?")
    if num is not None:
        if "." in num or "e" in num or "E" in num:
            return float(num)
        return int(num)
    word = cur.take_re(r"[A-Za-z_][A-Za-z0-9_]*")
    if word == "true":
        return True
    if word == "false":
        return False
    if word is not None:
        raise BodyError(f"bare word {word!r} is not a value")
    raise BodyError(f"expected a value at {cur.text[cur.pos:cur.pos + 12]!r}")


def parse_args(text: str) -> tuple[Arg, ...]:
    """Parse the inside of the parentheses of a tool call."""
    cur = _Cursor(text)
    cur.skip_ws()
    if cur.eof():
        return ()
    args: list[Arg] = []
    while True:
        cur.skip_ws()
        key = None
        mark = cur.pos
        word = cur.take_re(r"[A-Za-z_][A-Za-z0-9_]*")
        if word is not None:
            cur.skip_ws()
            if cur.match("="):
                key = word
                cur.skip_ws()
            else:
                cur.pos = mark  # bare word: re-read as a value (true/false)
        value = _parse_value(cur)
        args.append(Arg(value=value, key=key))
        cur.skip_ws()
        if cur.eof():
            return tuple(args)
        if not cur.match(","):
            raise BodyError(f"expected ',' at {cur.text[cur.pos:cur.pos + 12]!r}")


_REMOVE_RE = re.compile(r"REMOVE +(\d+)\.\Z")
_CALL_HEAD_RE = re.compile(r"(\d+)\.( +)")


def parse_tool_body(body: str) -> ToolCall | Remove:
    """Parse the trimmed body of a <tool_call> region."""
    body = body.strip()
    m = _REMOVE_RE.fullmatch(body)
    if m:
        target = int(m.group(1))
        if target < 1:
            raise BodyError("id must be >= 1")
        return Remove(target)
    m = _CALL_HEAD_RE.match(body)
    if not m:
        raise BodyError("missing id prefix")
    call_id = int(m.group(1))
    if call_id < 1:
        raise BodyError("id must be >= 1")
    cur = _Cursor(body)
    cur.pos = m.end()
    name = cur.take_re(r"[A-Za-z_][A-Za-z0-9_]*")
    if name is None:
        raise BodyError("invalid tool name")
    cur.skip_ws()
    if not cur.match("("):
        raise BodyError("expected '(' after tool name")
    close = body.rfind(")")
    if close < cur.pos - 1 or body[close + 1 :].strip():
        raise BodyError("expected ')' at end of call")
    args = parse_args(body[cur.pos : close])
    return ToolCall(call_id, name, args)


def parse_incremental(buffer: str) -> ParseResult:
    """Parse every maximal complete action from the accumulated buffer.

    Returns the actions in order, the unfinished trailing fragment, and a
    diagnostic when a closed region violates the grammar. On a diagnostic
    the remainder holds everything from the offending region onward.
    """
    res = ParseResult()
    i = 0
    n = len(buffer)
    while True:
        while i < n and buffer[i] in " \t\r\n":
            i += 1
        if i >= n:
            res.remainder = ""
            return res
        if buffer[i] != "<":
            res.malformed = Malformed("text outside tags", buffer[i : i + 24])
            res.remainder = buffer[i:]
            return res
        frag = buffer[i:]
        if frag.startswith("<pause>"):
            res.actions.append(Pause())
            i += len("<pause>")
            continue
        matched = False
        for open_tag, close_tag, kind in (
            ("<think>", "</think>", "think"),
            ("<tool_call>", "</tool_call>", "tool_call"),
            ("<answer>", "</answer>", "answer"),
        ):
            if not frag.startswith(open_tag):
                continue
            matched = True
            start = i + len(open_tag)
            end = buffer.find(close_tag, start)
            if end < 0:
                res.remainder = buffer[i:]
                return res
            content = buffer[start:end]
            if kind == "think":
                res.actions.append(Think(content))
            elif kind == "answer":
                res.actions.append(Answer(content))
            else:
                try:
                    res.actions.append(parse_tool_body(content))
                except BodyError as e:
                    res.malformed = Malformed(str(e), content)
                    res.remainder = buffer[i:]
                    return res
            i = end + len(close_tag)
            break
        if matched:
            continue
        if _is_tag_prefix(frag, _OPEN_TAGS):
            res.remainder = frag
            return res
        res.malformed = Malformed("unknown tag", frag[:24])
        res.remainder = frag
        return res


# ---------------------------------------------------------------------------
# Event parsing (the reverse of render_event, for portable transcripts)
# ---------------------------------------------------------------------------

_EVENT_TAGS = (
    "<partial_query_update>",
    "<final_query_update>",
    "<information>",
    "<cancel>",
    "<current_plan>",
    "<error>",
    INTERRUPT_MARK,
)

_PLAN_ROW_RE = re.compile(r" (\d+)\. ([A-Za-z_][A-Za-z0-9_]*)\((.*)\) \[([IHXC])\]\Z")


def _parse_id_body(body: str, what: str) -> tuple[int, str]:
    m = re.match(r" (\d+)\. ", body)
    if not m:
        raise BodyError(f"{what} body missing id prefix")
    ident = int(m.group(1))
    if ident < 1:
        raise BodyError(f"{what} id must be >= 1")
    return ident, body[m.end() :]


def parse_events_incremental(buffer: str) -> tuple[list[InjectedEvent], str, Malformed | None]:
    """Parse complete injected events from a rendered event stream."""
    events: list[InjectedEvent] = []
    i = 0
    n = len(buffer)
    interrupted = False
    while True:
        if i >= n:
            return events, ("" if not interrupted else INTERRUPT_MARK), None
        frag = buffer[i:]
        if frag.startswith(INTERRUPT_MARK):
            interrupted = True
            i += len(INTERRUPT_MARK)
            continue
        matched = False
        for open_tag in _EVENT_TAGS[:-1]:
            if not frag.startswith(open_tag):
                continue
            matched = True
            close_tag = "</" + open_tag[1:]
            start = i + len(open_tag)
            end = buffer.find(close_tag, start)
            if end < 0:
                rem = (INTERRUPT_MARK if interrupted else "") + buffer[i:]
                return events, rem, None
            body = buffer[start:end]
            try:
                events.append(_event_from_body(open_tag, body, interrupted))
            except BodyError as e:
                return events, buffer[i:], Malformed(str(e), body[:24])
            interrupted = False
            i = end + len(close_tag)
            break
        if matched:
            continue
        if _is_tag_prefix(frag, _EVENT_TAGS):
            rem = (INTERRUPT_MARK if interrupted else "") + frag
            return events, rem, None
        return events, frag, Malformed("unknown event tag", frag[:24])


def _event_from_body(open_tag: str, body: str, interrupted: bool) -> InjectedEvent:
    if open_tag == "<partial_query_update>":
        return PartialQueryUpdate(body, interrupted)
    if open_tag == "<final_query_update>":
        return FinalQueryUpdate(body, interrupted)
    if open_tag == "<information>":
        ident, text = _parse_id_body(body, "information")
        return Information(ident, text, interrupted)
    if open_tag == "<cancel>":
        ident, text = _parse_id_body(body, "cancel")
        return CancelNotice(ident, text, interrupted)
    if open_tag == "<error>":
        return ErrorNotice(body, interrupted)
    if open_tag == "<current_plan>":
        if body == "\n":
            return PlanHint((), interrupted)
        if not body.startswith("\n") or not body.endswith("\n"):
            raise BodyError("plan body must be newline-delimited")
        rows = body[1:-1].split("\n")
        calls = []
        for row in rows:
            m = _PLAN_ROW_RE.fullmatch(row)
            if not m:
                raise BodyError(f"bad plan row {row!r}")
            calls.append(
                PlanEntry(
                    id=int(m.group(1)),
                    name=m.group(2),
                    args=parse_args(m.group(3)),
                    status=m.group(4),
                )
            )
        return PlanHint(tuple(calls), interrupted)
    raise BodyError(f"unknown tag {open_tag}")


# ---------------------------------------------------------------------------
# Round-trip check
# ---------------------------------------------------------------------------


def roundtrip_check(actions: list[Action]) -> bool:
    """True when serialize-then-parse reproduces the actions exactly."""
    text = serialize_actions(actions)
    res = parse_incremental(text)
    return res.malformed is None and res.remainder == "" and res.actions == list(actions)
