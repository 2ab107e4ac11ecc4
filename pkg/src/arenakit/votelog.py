"""Battle/vote data model, JSONL persistence and descriptive statistics."""
from __future__ import annotations

import datetime as dt
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Optional


class LogError(Exception):
    """Base class for vote-log errors."""


class RecordParseError(LogError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class RecordSchemaError(LogError):
    def __init__(self, field_name: str, message: str | None = None):
        super().__init__(message or f"missing or invalid required field: {field_name}")
        self.field_name = field_name


class RecordValidationError(LogError):
    pass


class VoteOutcome(Enum):
    LEFT_WIN = "leftvote"
    RIGHT_WIN = "rightvote"
    TIE = "tievote"
    BOTH_BAD = "bothbad_vote"


def validate_model_name(name: str) -> str:
    if not isinstance(name, str) or not name.strip():
        raise RecordValidationError(f"invalid model name: {name!r}")
    return name


@dataclass(frozen=True)
class ChatTurn:
    role: str  # "user" | "assistant"
    text: str
    image_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.role not in ("user", "assistant"):
            raise RecordValidationError(f"invalid chat role: {self.role!r}")
        if self.role == "assistant" and self.image_ids:
            raise RecordValidationError("assistant turns never carry images")


@dataclass(frozen=True)
class TaxonomyTag:
    question_category: str
    question_subcategory: str
    image_domain: str
    image_subdomain: str

    def to_dict(self) -> dict:
        return {
            "question_category": self.question_category,
            "question_subcategory": self.question_subcategory,
            "image_domain": self.image_domain,
            "image_subdomain": self.image_subdomain,
        }


@dataclass(frozen=True)
class BattleRecord:
    id: str
    timestamp: int  # UTC seconds
    model_left: str
    model_right: str
    anonymous: bool
    conversation_left: tuple[ChatTurn, ...]
    conversation_right: tuple[ChatTurn, ...]
    outcome: VoteOutcome
    input_tokens: int
    output_tokens_left: int
    output_tokens_right: int
    feedback_reason: Optional[str] = None
    tag: Optional[TaxonomyTag] = None

    def __post_init__(self):
        validate_model_name(self.model_left)
        validate_model_name(self.model_right)
        if self.model_left == self.model_right:
            raise RecordValidationError("model_left equals model_right")
        for n in (self.input_tokens, self.output_tokens_left, self.output_tokens_right):
            if n < 0:
                raise RecordValidationError("token counts must be >= 0")
        left_user = [(t.text, t.image_ids) for t in self.conversation_left if t.role == "user"]
        right_user = [(t.text, t.image_ids) for t in self.conversation_right if t.role == "user"]
        if left_user != right_user:
            raise RecordValidationError("conversations must share identical user turns")

    @property
    def user_rounds(self) -> int:
        return sum(1 for t in self.conversation_left if t.role == "user")


def _turn_to_dict(t: ChatTurn) -> dict:
    d: dict = {"role": t.role, "text": t.text}
    if t.image_ids:
        d["image_ids"] = list(t.image_ids)
    return d


def _turn_from_dict(d: dict) -> ChatTurn:
    return ChatTurn(
        role=d.get("role", ""),
        text=d.get("text", ""),
        image_ids=tuple(d.get("image_ids", ())),
    )


def serialize_record(record: BattleRecord) -> str:
    """One-line JSON form; inverse of parse_record."""
    obj: dict = {
        "id": record.id,
        "timestamp": record.timestamp,
        "model_left": record.model_left,
        "model_right": record.model_right,
        "anonymous": record.anonymous,
        "conversation_left": [_turn_to_dict(t) for t in record.conversation_left],
        "conversation_right": [_turn_to_dict(t) for t in record.conversation_right],
        "outcome": record.outcome.value,
        "input_tokens": record.input_tokens,
        "output_tokens_left": record.output_tokens_left,
        "output_tokens_right": record.output_tokens_right,
    }
    if record.feedback_reason is not None:
        obj["feedback_reason"] = record.feedback_reason
    if record.tag is not None:
        obj["tag"] = record.tag.to_dict()
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


_REQUIRED = (
    "id", "timestamp", "model_left", "model_right", "anonymous",
    "conversation_left", "conversation_right", "outcome",
    "input_tokens", "output_tokens_left", "output_tokens_right",
)


def parse_record(line: str) -> BattleRecord:
    """Parse one JSONL line into a BattleRecord.

    Unknown keys are ignored; optional keys (feedback_reason, tag) default
    to absent.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        offset = len(line[: e.pos].encode("utf-8"))
        raise RecordParseError(f"malformed JSON: {e.msg}", offset=offset) from e
    if not isinstance(obj, dict):
        raise RecordParseError("line is not a JSON object")
    for key in _REQUIRED:
        if key not in obj:
            raise RecordSchemaError(key)
    try:
        outcome = VoteOutcome(obj["outcome"])
    except ValueError:
        raise RecordSchemaError("outcome", f"unknown outcome token: {obj['outcome']!r}")
    tag = None
    if obj.get("tag") is not None:
        t = obj["tag"]
        tag = TaxonomyTag(
            question_category=t.get("question_category", ""),
            question_subcategory=t.get("question_subcategory", ""),
            image_domain=t.get("image_domain", ""),
            image_subdomain=t.get("image_subdomain", ""),
        )
    return BattleRecord(
        id=str(obj["id"]),
        timestamp=int(obj["timestamp"]),
        model_left=obj["model_left"],
        model_right=obj["model_right"],
        anonymous=bool(obj["anonymous"]),
        conversation_left=tuple(_turn_from_dict(d) for d in obj["conversation_left"]),
        conversation_right=tuple(_turn_from_dict(d) for d in obj["conversation_right"]),
        outcome=outcome,
        input_tokens=int(obj["input_tokens"]),
        output_tokens_left=int(obj["output_tokens_left"]),
        output_tokens_right=int(obj["output_tokens_right"]),
        feedback_reason=obj.get("feedback_reason"),
        tag=tag,
    )


def append_record(log_path: str | os.PathLike, record: BattleRecord) -> None:
    """Append one record atomically (single O_APPEND write of a full line)."""
    data = (serialize_record(record) + "\n").encode("utf-8")
    fd = os.open(os.fspath(log_path), os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
    try:
        os.write(fd, data)
    finally:
        os.close(fd)


def iter_records(log_path: str | os.PathLike) -> Iterator[BattleRecord]:
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield parse_record(line)


def load_log(log_path: str | os.PathLike) -> list[BattleRecord]:
    return list(iter_records(log_path))


def estimate_tokens(text: str, tokenizer: Callable[[str], int] | None = None) -> int:
    """Token count via an injected tokenizer; default is ceil(bytes / 4)."""
    if tokenizer is not None:
        return tokenizer(text)
    return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class VoteStats:
    total_votes: int
    anonymous_count: int
    outcome_counts: dict[VoteOutcome, int]
    total_rounds: int
    avg_rounds: float
    avg_input_tokens: float
    avg_output_tokens: float
    votes_per_day: dict[dt.date, int] = field(default_factory=dict)
    chats_per_model: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total_votes": self.total_votes,
            "anonymous_count": self.anonymous_count,
            "outcome_counts": {k.value: v for k, v in self.outcome_counts.items()},
            "total_rounds": self.total_rounds,
            "avg_rounds": self.avg_rounds,
            "avg_input_tokens": self.avg_input_tokens,
            "avg_output_tokens": self.avg_output_tokens,
            "votes_per_day": {d.isoformat(): n for d, n in sorted(self.votes_per_day.items())},
            "chats_per_model": dict(sorted(self.chats_per_model.items())),
        }


def summary_stats(records: Iterable[BattleRecord]) -> VoteStats:
    """Descriptive statistics over a record list (empty input yields zeros).

    Input tokens are counted per conversation, not per round; output tokens
    average over both sides of every battle.
    """
    records = list(records)
    n = len(records)
    outcome_counts = {o: 0 for o in VoteOutcome}
    per_day: Counter[dt.date] = Counter()
    per_model: Counter[str] = Counter()
    total_rounds = 0
    sum_input = 0
    sum_output = 0
    anonymous = 0
    for r in records:
        outcome_counts[r.outcome] += 1
        if r.anonymous:
            anonymous += 1
        total_rounds += r.user_rounds
        sum_input += r.input_tokens
        sum_output += r.output_tokens_left + r.output_tokens_right
        day = dt.datetime.fromtimestamp(r.timestamp, dt.timezone.utc).date()
        per_day[day] += 1
        per_model[r.model_left] += 1
        per_model[r.model_right] += 1
    return VoteStats(
        total_votes=n,
        anonymous_count=anonymous,
        outcome_counts=outcome_counts,
        total_rounds=total_rounds,
        avg_rounds=total_rounds / n if n else 0.0,
        avg_input_tokens=sum_input / n if n else 0.0,
        avg_output_tokens=sum_output / (2 * n) if n else 0.0,
        votes_per_day=dict(per_day),
        chats_per_model=dict(per_model),
    )
