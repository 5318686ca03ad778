"""Fake streaming speech-to-text.

Turns a word-timestamped transcript into scheduled partial/final query
updates in fixed word increments: each update's arrival time is the end
time of its last word, and the last update is the final one. Plain-text
input gets synthetic timestamps from a constant speaking rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .clock import EventQueue, VirtualClock, seconds_to_tokens

DEFAULT_WORDS_PER_SECOND = 2.5


class EmptyTranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class TimedWord:
    text: str
    end_seconds: float


@dataclass(frozen=True)
class TimedTranscript:
    words: tuple[TimedWord, ...]

    def __post_init__(self):
        times = [w.end_seconds for w in self.words]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("word end times must be strictly increasing")

    def text(self) -> str:
        return " ".join(w.text for w in self.words)


@dataclass(frozen=True)
class Update:
    text: str
    arrival_seconds: float
    is_final: bool


@dataclass(frozen=True)
class UpdatePlan:
    updates: tuple[Update, ...]

    def full_text(self) -> str:
        return " ".join(u.text for u in self.updates)


def transcript_from_text(
    text: str, words_per_second: float = DEFAULT_WORDS_PER_SECOND
) -> TimedTranscript:
    """Synthetic timestamps for datasets that ship plain text only."""
    words = text.split()
    return TimedTranscript(
        tuple(
            TimedWord(w, end_seconds=(i + 1) / words_per_second)
            for i, w in enumerate(words)
        )
    )


def transcript_from_jsonl(path: str | Path) -> TimedTranscript:
    """Line-delimited word records: {"word": ..., "end": seconds}."""
    words = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        words.append(TimedWord(str(d["word"]), float(d["end"])))
    return TimedTranscript(tuple(words))


def segment(transcript: TimedTranscript, increment_n: int) -> UpdatePlan:
    """Group words into consecutive chunks of increment_n (last may be short)."""
    if increment_n < 1:
        raise ValueError("increment must be >= 1")
    words = transcript.words
    if not words:
        raise EmptyTranscriptError("transcript has no words")
    updates = []
    for start in range(0, len(words), increment_n):
        chunk = words[start : start + increment_n]
        updates.append(
            Update(
                text=" ".join(w.text for w in chunk).strip(),
                arrival_seconds=chunk[-1].end_seconds,
                is_final=start + increment_n >= len(words),
            )
        )
    return UpdatePlan(tuple(updates))


def schedule_updates(plan: UpdatePlan, clock: VirtualClock, queue: EventQueue) -> list[int]:
    """Enqueue every update at its token-converted arrival time."""
    due_tokens = []
    for update in plan.updates:
        due = seconds_to_tokens(update.arrival_seconds, clock.rate)
        queue.push(due, update)
        due_tokens.append(due)
    return due_tokens
