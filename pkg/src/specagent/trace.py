"""Trajectory records: the line-delimited trace format and its validator.

A trace is one JSON header line followed by one JSON entry per line.
Every entry carries a token timestamp ``t`` and its wall-equivalent
seconds ``s``. The format is stream-appendable so live sessions can
write as they go, and traces round-trip byte-exactly: the writer is
deterministic given the same session seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class CorruptTraceError(Exception):
    pass


class NotAnsweredError(Exception):
    pass


@dataclass
class Violation:
    rule: str
    detail: str
    line: int

    def __str__(self) -> str:
        return f"{self.rule} (line {self.line}): {self.detail}"


@dataclass
class Trajectory:
    header: dict
    entries: list[dict] = field(default_factory=list)

    def append(self, t: int, s: float, kind: str, **data) -> dict:
        entry = {"t": t, "s": s, "kind": kind, **data}
        self.entries.append(entry)
        return entry

    # -- serialization -------------------------------------------------------

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "header", **self.header}, sort_keys=True)]
        lines.extend(json.dumps(e, sort_keys=True) for e in self.entries)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Trajectory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise CorruptTraceError("empty trace")
        parsed = []
        for i, ln in enumerate(lines, start=1):
            try:
                parsed.append(json.loads(ln))
            except json.JSONDecodeError as e:
                raise CorruptTraceError(f"line {i}: {e}") from e
        head = parsed[0]
        if head.get("kind") != "header":
            raise CorruptTraceError("first line is not a header")
        header = {k: v for k, v in head.items() if k != "kind"}
        entries = []
        for i, e in enumerate(parsed[1:], start=2):
            if not all(k in e for k in ("t", "s", "kind")):
                raise CorruptTraceError(f"line {i}: entry missing t/s/kind")
            entries.append(e)
        return cls(header=header, entries=entries)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read(cls, path: str | Path) -> "Trajectory":
        return cls.from_jsonl(Path(path).read_text())

    # -- convenience ---------------------------------------------------------

    def find(self, kind: str, **match) -> list[dict]:
        out = []
        for e in self.entries:
            if e["kind"] != kind:
                continue
            if all(e.get(k) == v for k, v in match.items()):
                out.append(e)
        return out

    def first(self, kind: str, **match) -> dict | None:
        found = self.find(kind, **match)
        return found[0] if found else None


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(canon).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Validation: re-check the runtime invariants over a recorded trace
# ---------------------------------------------------------------------------

RULE_TIME = "time-nonmonotonic"
RULE_ANSWER_BEFORE_FINAL = "answer-before-final"
RULE_UNSAFE_BEFORE_COMMIT = "unsafe-dispatch-before-commit"
RULE_UNPAIRED_CALL = "unpaired-tool-call"
RULE_DUPLICATE_COMMIT = "duplicate-commit"
RULE_CANCELLED_ACTIVE = "cancelled-then-active"
RULE_INFO_WITHOUT_COMPLETION = "information-without-completion"
RULE_DISPATCH_UNKNOWN = "dispatch-of-unknown-call"


def validate(trajectory: Trajectory) -> list[Violation]:
    """Check ordering, commit safety and observation pairing; list violations."""
    violations: list[Violation] = []

    def flag(rule: str, detail: str, line: int) -> None:
        violations.append(Violation(rule, detail, line))

    last_t = -1
    committed_line = None
    final_line = None
    cancelled: set[int] = set()
    issued: dict[tuple[int, int], int] = {}  # (id, generation) -> line
    latest_gen: dict[int, int] = {}
    delivered: set[tuple[int, int]] = set()
    dispatched: set[tuple[int, int]] = set()

    for lineno, e in enumerate(trajectory.entries, start=2):
        kind = e["kind"]
        t = e["t"]
        if t < last_t:
            flag(RULE_TIME, f"entry at t={t} after t={last_t}", lineno)
        last_t = max(last_t, t)

        if kind == "update" and e.get("final"):
            final_line = lineno
        elif kind == "commit":
            if committed_line is not None:
                flag(RULE_DUPLICATE_COMMIT, "second commit entry", lineno)
            committed_line = lineno
        elif kind in ("issue", "edit"):
            cid, gen = e["id"], e["generation"]
            if cid in cancelled:
                flag(RULE_CANCELLED_ACTIVE, f"call {cid} re-issued after cancel", lineno)
            issued[(cid, gen)] = lineno
            latest_gen[cid] = max(latest_gen.get(cid, 0), gen)
        elif kind == "dispatch":
            cid, gen = e["id"], e["generation"]
            if (cid, gen) not in issued:
                flag(RULE_DISPATCH_UNKNOWN, f"call {cid} gen {gen} never issued", lineno)
            if cid in cancelled:
                flag(RULE_CANCELLED_ACTIVE, f"call {cid} dispatched after cancel", lineno)
            if e.get("safety") == "unsafe" and committed_line is None:
                flag(
                    RULE_UNSAFE_BEFORE_COMMIT,
                    f"unsafe call {cid} dispatched before commit",
                    lineno,
                )
            dispatched.add((cid, gen))
        elif kind == "complete":
            cid, gen = e["id"], e["generation"]
            if e.get("delivered"):
                if cid in cancelled:
                    flag(RULE_CANCELLED_ACTIVE, f"call {cid} delivered after cancel", lineno)
                delivered.add((cid, gen))
        elif kind == "cancel":
            cancelled.add(e["id"])
        elif kind == "information":
            cid = e["id"]
            if not any(d[0] == cid for d in delivered):
                flag(
                    RULE_INFO_WITHOUT_COMPLETION,
                    f"information for call {cid} without a delivered completion",
                    lineno,
                )
        elif kind == "action" and e.get("action") == "answer" and e.get("accepted"):
            if final_line is None:
                flag(RULE_ANSWER_BEFORE_FINAL, "accepted answer before final update", lineno)

    # Pairing: the latest generation of every issued id must end delivered,
    # cancelled, or superseded (superseded only applies to older generations).
    for (cid, gen), lineno in issued.items():
        if gen != latest_gen.get(cid):
            continue  # superseded by a later edit
        if cid in cancelled:
            continue
        if (cid, gen) in delivered:
            continue
        flag(
            RULE_UNPAIRED_CALL,
            f"call {cid} gen {gen} has neither information nor cancel",
            lineno,
        )

    return violations
