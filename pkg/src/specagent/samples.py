"""Benchmark samples: synthetic suite generation and dataset adapters.

A sample bundles a timed transcript, the ground-truth tool calls (ids are
1-based positions; ``$N`` references position N), the word index at which
each call becomes issuable, an expected answer, and optional noise
candidates (calls that look right mid-utterance but vanish from the final
plan, e.g. a recipient the user revises). Per-update candidate plans are
derived from those word indices, so alignment runs exactly as it would on
externally provided plans.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import StepPlans
from .protocol import Arg, Ref, ToolCall, parse_tool_body, render_call_body
from .stt import TimedTranscript, TimedWord, UpdatePlan, transcript_from_text


@dataclass(frozen=True)
class NoiseCandidate:
    call: ToolCall
    from_word: int   # candidate appears once this word has been heard
    until_word: int  # and disappears once this word has been heard


@dataclass
class Sample:
    id: str
    transcript: TimedTranscript
    ground_truth: list[ToolCall]
    callable_from: list[int]  # per ground-truth call: 0-based word index
    gold_answer: str
    noise: list[NoiseCandidate] = field(default_factory=list)

    def step_plans(self, plan: UpdatePlan, increment_n: int) -> StepPlans:
        """Candidate calls visible at each update, from the word indices."""
        per_update: list[list[ToolCall]] = []
        heard = 0
        for _ in plan.updates:
            heard = min(heard + increment_n, len(self.transcript.words))
            last = heard - 1
            cands = [
                g
                for g, cf in zip(self.ground_truth, self.callable_from)
                if cf <= last
            ]
            cands += [
                nc.call
                for nc in self.noise
                if nc.from_word <= last < nc.until_word
            ]
            per_update.append(cands)
        return StepPlans(per_update)


# ---------------------------------------------------------------------------
# JSONL adapter
# ---------------------------------------------------------------------------


def sample_to_dict(s: Sample) -> dict:
    return {
        "id": s.id,
        "words": [{"w": w.text, "end": w.end_seconds} for w in s.transcript.words],
        "ground_truth": [render_call_body(g) for g in s.ground_truth],
        "callable_from": s.callable_from,
        "gold_answer": s.gold_answer,
        "noise": [
            {"call": render_call_body(n.call), "from": n.from_word, "until": n.until_word}
            for n in s.noise
        ],
    }


def sample_from_dict(d: dict) -> Sample:
    if "words" in d:
        transcript = TimedTranscript(
            tuple(TimedWord(w["w"], float(w["end"])) for w in d["words"])
        )
    else:
        transcript = transcript_from_text(d["query"])
    ground_truth = [parse_tool_body(b) for b in d["ground_truth"]]
    callable_from = d.get(
        "callable_from", [len(transcript.words) - 1] * len(ground_truth)
    )
    return Sample(
        id=str(d["id"]),
        transcript=transcript,
        ground_truth=ground_truth,
        callable_from=list(callable_from),
        gold_answer=d.get("gold_answer", ""),
        noise=[
            NoiseCandidate(parse_tool_body(n["call"]), int(n["from"]), int(n["until"]))
            for n in d.get("noise", [])
        ],
    )


def load_samples(path: str | Path) -> list[Sample]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(sample_from_dict(json.loads(line)))
    return out


def save_samples(samples: list[Sample], path: str | Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(sample_to_dict(s), sort_keys=True) + "\n" for s in samples)
    )


# ---------------------------------------------------------------------------
# Synthetic suite
# ---------------------------------------------------------------------------

_TOPICS = ("paris", "tokyo", "everest")
_NAMES = ("Alice", "Bob", "Carol", "Dave")
_BODIES = (
    ["hello", "there"],
    ["see", "you", "at", "noon"],
    ["the", "report", "is", "ready"],
)


def _timed(words: list[str], words_per_second: float = 2.5) -> TimedTranscript:
    return TimedTranscript(
        tuple(
            TimedWord(w, end_seconds=(i + 1) / words_per_second) for i, w in enumerate(words)
        )
    )


def _call(pos: int, name: str, *values) -> ToolCall:
    return ToolCall(pos, name, tuple(Arg(value=v) for v in values))


def _search_sample(i: int, rng: random.Random) -> Sample:
    topic = rng.choice(_TOPICS)
    words = ["could", "you", "search", "for", topic, "and", "tell", "me",
             "what", "you", "can", "find"]
    return Sample(
        id=f"search-{i}",
        transcript=_timed(words),
        ground_truth=[_call(1, "search_web", topic)],
        callable_from=[words.index(topic)],
        gold_answer="capital" if topic in ("paris", "tokyo") else "mountain",
    )


def _message_sample(i: int, rng: random.Random) -> Sample:
    name = rng.choice(_NAMES)
    body = rng.choice(_BODIES)
    words = ["please", "send", "a", "message", "to", name, "saying"] + body + [
        "thanks", "a", "lot"
    ]
    body_text = " ".join(body)
    name_at = words.index(name)
    body_done = len(words) - 4  # index of the last body word
    return Sample(
        id=f"message-{i}",
        transcript=_timed(words),
        ground_truth=[
            _call(1, "get_contact", name),
            _call(2, "send_message", Ref(1), body_text),
        ],
        callable_from=[name_at, body_done],
        gold_answer=f"message sent to {name}",
    )


def _revision_sample(i: int, rng: random.Random) -> Sample:
    wrong, right = "Alice", "Alicia"
    body = rng.choice(_BODIES)
    words = ["send", "a", "message", "to", wrong, "uh", "wait", "I", "mean",
             right, "saying"] + body + ["thanks"]
    wrong_at, right_at = words.index(wrong), words.index(right)
    body_done = len(words) - 2
    return Sample(
        id=f"revision-{i}",
        transcript=_timed(words),
        ground_truth=[
            _call(1, "get_contact", right),
            _call(2, "send_message", Ref(1), " ".join(body)),
        ],
        callable_from=[right_at, body_done],
        gold_answer=f"message sent to {right}",
        noise=[NoiseCandidate(_call(1, "get_contact", wrong), wrong_at, right_at)],
    )


def _search_revision_sample(i: int, rng: random.Random) -> Sample:
    wrong, right = rng.choice([("paris", "tokyo"), ("tokyo", "everest")])
    words = ["search", "for", wrong, "no", "hang", "on", "make", "that",
             right, "and", "summarize", "what", "you", "find"]
    return Sample(
        id=f"searchfix-{i}",
        transcript=_timed(words),
        ground_truth=[_call(1, "search_web", right)],
        callable_from=[words.index(right)],
        gold_answer="capital" if right == "tokyo" else "mountain",
        noise=[NoiseCandidate(_call(1, "search_web", wrong), words.index(wrong),
                              words.index(right))],
    )


def _event_sample(i: int, rng: random.Random) -> Sample:
    name = rng.choice(_NAMES)
    title = rng.choice(["standup", "review", "lunch"])
    when = rng.choice(["monday", "tuesday", "friday"])
    words = ["check", "my", "notes", "file", "then", "set", "up", "a",
             "meeting", "called", title, "for", when, "and", "message",
             name, "saying", "it", "is", "booked"]
    return Sample(
        id=f"event-{i}",
        transcript=_timed(words),
        ground_truth=[
            _call(1, "open_file", "notes.txt"),
            _call(2, "create_event", title, when),
            _call(3, "get_contact", name),
            _call(4, "send_message", Ref(3), "it is booked"),
        ],
        callable_from=[
            words.index("file"),
            words.index(when),
            words.index(name),
            len(words) - 1,
        ],
        gold_answer=f"event created and {name} notified",
    )


def _briefing_sample(i: int, rng: random.Random) -> Sample:
    topic = rng.choice(_TOPICS)
    name = rng.choice(_NAMES)
    words = ["open", "the", "report", "file", "look", "up", topic, "as",
             "well", "and", "send", name, "a", "message", "saying", "the",
             "briefing", "is", "ready"]
    return Sample(
        id=f"briefing-{i}",
        transcript=_timed(words),
        ground_truth=[
            _call(1, "open_file", "report.txt"),
            _call(2, "search_web", topic),
            _call(3, "get_contact", name),
            _call(4, "send_message", Ref(3), "the briefing is ready"),
        ],
        callable_from=[
            words.index("file"),
            words.index(topic),
            words.index(name),
            len(words) - 1,
        ],
        gold_answer=f"briefing ready and message sent to {name}",
    )


def _chain_sample(i: int, rng: random.Random) -> Sample:
    name = rng.choice(_NAMES)
    body = rng.choice(_BODIES)
    words = ["message", name, "saying"] + body + [
        "then", "put", "a", "reminder", "about", "it", "on", "my",
        "calendar", "for", "tomorrow"
    ]
    body_done = 2 + len(body)
    return Sample(
        id=f"chain-{i}",
        transcript=_timed(words),
        ground_truth=[
            _call(1, "get_contact", name),
            _call(2, "send_message", Ref(1), " ".join(body)),
            _call(3, "create_event", Ref(2), "tomorrow"),
        ],
        callable_from=[words.index(name), body_done, len(words) - 1],
        gold_answer=f"done message sent to {name} and reminder created",
    )


_TEMPLATES = (
    _search_sample,
    _message_sample,
    _revision_sample,
    _search_revision_sample,
    _event_sample,
    _chain_sample,
    _briefing_sample,
)


def generate_suite(n: int, seed: int) -> list[Sample]:
    """Deterministic synthetic suite cycling the templates (DAG depth 1-3)."""
    rng = random.Random(seed)
    return [_TEMPLATES[i % len(_TEMPLATES)](i, rng) for i in range(n)]
