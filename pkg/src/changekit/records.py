"""Conversation records and their JSON-lines persistence.

One record per line, UTF-8, with this exact key layout::

    {"record_id": str, "sample_id": str, "kind": str, "provenance": str,
     "image_a": str, "image_b": str,
     "conversations": [{"from": "human"|"assistant", "value": str}, ...]}

The ``<image_a>`` / ``<image_b>`` tokens inside turn text are positional
placeholders for the two time points; the sibling path fields say what they
point at. ``<STOP>`` delimiters are a rendering concern (see
render_training_text) and are never stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import IoFailure, MalformedLine, SchemaViolation

HUMAN = "human"
ASSISTANT = "assistant"

IMAGE_A_TOKEN = "<image_a>"
IMAGE_B_TOKEN = "<image_b>"
STOP_TOKEN = "<STOP>"

KINDS = ("caption", "binary", "quantify", "localize", "gpt_assisted", "multi_turn")
PROVENANCES = ("rule_based", "gpt_assisted")

# rule-based kinds that must have exactly one human turn
SINGLE_TURN_KINDS = ("caption", "binary", "quantify", "localize")


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str


@dataclass(frozen=True)
class ConversationRecord:
    record_id: str
    sample_id: str
    kind: str
    provenance: str
    image_a: str
    image_b: str
    turns: tuple[Turn, ...]

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "sample_id": self.sample_id,
            "kind": self.kind,
            "provenance": self.provenance,
            "image_a": self.image_a,
            "image_b": self.image_b,
            "conversations": [{"from": t.speaker, "value": t.text} for t in self.turns],
        }


_REQUIRED_FIELDS = ("record_id", "sample_id", "kind", "provenance", "image_a", "image_b", "conversations")


def record_from_dict(obj: dict, line_no: int | None = None) -> ConversationRecord:
    for field_name in _REQUIRED_FIELDS:
        if field_name not in obj:
            raise SchemaViolation(field_name, "missing", line_no)
    convs = obj["conversations"]
    if not isinstance(convs, list) or not convs:
        raise SchemaViolation("conversations", "must be a non-empty array", line_no)
    turns = []
    for i, c in enumerate(convs):
        if not isinstance(c, dict) or "from" not in c or "value" not in c:
            raise SchemaViolation("conversations", f"entry {i} needs 'from' and 'value'", line_no)
        if c["from"] not in (HUMAN, ASSISTANT):
            raise SchemaViolation("conversations", f"entry {i} has unknown speaker {c['from']!r}", line_no)
        if not isinstance(c["value"], str):
            raise SchemaViolation("conversations", f"entry {i} value must be a string", line_no)
        turns.append(Turn(speaker=c["from"], text=c["value"]))
    for field_name in _REQUIRED_FIELDS[:-1]:
        if not isinstance(obj[field_name], str):
            raise SchemaViolation(field_name, "must be a string", line_no)
    if obj["kind"] not in KINDS:
        raise SchemaViolation("kind", f"unknown kind {obj['kind']!r}", line_no)
    if obj["provenance"] not in PROVENANCES:
        raise SchemaViolation("provenance", f"unknown provenance {obj['provenance']!r}", line_no)
    return ConversationRecord(
        record_id=obj["record_id"],
        sample_id=obj["sample_id"],
        kind=obj["kind"],
        provenance=obj["provenance"],
        image_a=obj["image_a"],
        image_b=obj["image_b"],
        turns=tuple(turns),
    )


def write_records(records: Sequence[ConversationRecord] | Iterable[ConversationRecord], out: str | Path) -> int:
    """Write one JSON object per line, in input order. Returns lines written."""
    out = Path(out)
    count = 0
    try:
        with out.open("w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), ensure_ascii=False))
                fh.write("\n")
                count += 1
    except OSError as exc:
        raise IoFailure(f"cannot write {out}: {exc}") from exc
    return count


def read_records(path: str | Path) -> list[ConversationRecord]:
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"record file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, str(exc)) from exc
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "not a JSON object")
            records.append(record_from_dict(obj, line_no))
    return records


def validate_record(record: ConversationRecord) -> list[str]:
    """Structural invariant check; returns human-readable problems (empty = ok)."""
    problems = []
    turns = record.turns
    if not turns:
        return ["no turns"]
    if turns[0].speaker != HUMAN:
        problems.append("first turn is not human")
    if turns[-1].speaker != ASSISTANT:
        problems.append("last turn is not assistant")
    for i, (a, b) in enumerate(zip(turns, turns[1:])):
        if a.speaker == b.speaker:
            problems.append(f"turns {i} and {i + 1} do not alternate")
    for i, t in enumerate(turns):
        if not t.text:
            problems.append(f"turn {i} has empty text")
    first = turns[0].text
    a_pos = first.find(IMAGE_A_TOKEN)
    b_pos = first.find(IMAGE_B_TOKEN)
    if a_pos < 0 or first.count(IMAGE_A_TOKEN) != 1:
        problems.append(f"first human turn must contain {IMAGE_A_TOKEN} exactly once")
    if b_pos < 0 or first.count(IMAGE_B_TOKEN) != 1:
        problems.append(f"first human turn must contain {IMAGE_B_TOKEN} exactly once")
    if a_pos >= 0 and b_pos >= 0 and a_pos > b_pos:
        problems.append("image placeholders out of order (t1 must precede t2)")
    for i, t in enumerate(turns[1:], start=1):
        if IMAGE_A_TOKEN in t.text or IMAGE_B_TOKEN in t.text:
            problems.append(f"turn {i} contains an image placeholder (only allowed in the first turn)")
    human_turns = sum(1 for t in turns if t.speaker == HUMAN)
    if record.kind == "multi_turn":
        if human_turns < 3:
            problems.append(f"multi_turn record has {human_turns} human turns, needs >= 3")
    elif record.kind in SINGLE_TURN_KINDS and human_turns != 1:
        problems.append(f"{record.kind} record has {human_turns} human turns, needs exactly 1")
    return problems


def render_training_text(record: ConversationRecord) -> str:
    """Flatten a record to the speaker-prefixed, <STOP>-delimited training form."""
    parts = []
    for turn in record.turns:
        prefix = "Human:" if turn.speaker == HUMAN else "Assistant:"
        parts.append(f"{prefix} {turn.text} {STOP_TOKEN}")
    return " ".join(parts)
