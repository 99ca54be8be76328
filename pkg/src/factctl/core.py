"""Domain records, validation, and JSONL (de)serialization.

All records are immutable values; they can be shared freely across threads.
The wire formats are JSONL, one record per line, UTF-8 with LF line endings:

    entities.jsonl   {"id": ..., "entity": ...}
    responses.jsonl  {"question_id": ..., "level"?: ..., "text": ...}
    labels.jsonl     {"question_id": ..., "fact_index": ..., "label": ...}
    triples.jsonl    {"question_id": ..., "level": ..., "prompt": ...,
                      "completion": ..., "provenance"?: ..., "j"?: ...,
                      "f_achieved"?: ...}

Serialization is canonical (fixed key order, fixed separators), so
``serialize(parse(file))`` is byte-identical for files produced by this
module.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Optional

from .errors import RecordParseError, ValidationError

TASK_PROMPT = "Tell me a bio of {entity}."
CONTROL_DIRECTIVE = "Output information that you deem {percent}% confident."


def round_half_up(value: float, ndigits: int = 0) -> float:
    """Round ties away from zero on the decimal representation of ``value``."""
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


class FactLabel(enum.Enum):
    SUPPORTED = "Supported"
    UNSUPPORTED = "Unsupported"
    UNLABELED = "Unlabeled"


class ResponseOrigin(enum.Enum):
    MODEL_INITIAL = "ModelInitial"
    FILTERED = "Filtered"
    EXTERNAL = "External"


@dataclass(frozen=True)
class FactualityLevel:
    """The control value c: the minimum factuality an output must meet."""

    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValidationError(
                f"FactualityLevel must lie in [0, 1], got {self.value}"
            )

    @property
    def percent(self) -> int:
        """Integer percentage, for prompt rendering (rounds half up)."""
        return int(round_half_up(self.value * 100))

    def as_percent_text(self) -> str:
        return f"{self.percent}%"

    def key(self) -> str:
        """Stable string key for report dictionaries, e.g. ``"0.8"``."""
        return repr(self.value)


@dataclass(frozen=True)
class Question:
    """A task prompt built around one entity."""

    id: str
    entity_name: str
    prompt_text: str

    def __post_init__(self):
        if not self.entity_name:
            raise ValidationError("Question.entity_name must be non-empty")
        if not self.prompt_text:
            raise ValidationError("Question.prompt_text must be non-empty")

    @classmethod
    def for_entity(cls, entity_name: str, id: Optional[str] = None) -> "Question":
        return cls(
            id=id if id is not None else slugify(entity_name),
            entity_name=entity_name,
            prompt_text=TASK_PROMPT.format(entity=entity_name),
        )


@dataclass(frozen=True)
class AtomicFact:
    """One indivisible factual statement extracted from a response."""

    text: str
    source_position: int
    confidence: Optional[float] = None
    label: FactLabel = FactLabel.UNLABELED
    low_signal: bool = False

    def __post_init__(self):
        if not self.text:
            raise ValidationError("AtomicFact.text must be non-empty")
        if self.source_position < 0:
            raise ValidationError("AtomicFact.source_position must be >= 0")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"AtomicFact.confidence must lie in [0, 1], got {self.confidence}"
            )

    def with_confidence(self, confidence: float, low_signal: bool = False) -> "AtomicFact":
        return replace(self, confidence=confidence, low_signal=low_signal)

    def with_label(self, label: FactLabel) -> "AtomicFact":
        return replace(self, label=label)


@dataclass(frozen=True)
class ResponseRecord:
    """A full model response, optionally segmented into atomic facts."""

    question_id: str
    text: str
    facts: tuple = ()
    origin: ResponseOrigin = ResponseOrigin.EXTERNAL

    def __post_init__(self):
        object.__setattr__(self, "facts", tuple(self.facts))
        if self.origin is ResponseOrigin.FILTERED:
            for fact in self.facts:
                if fact.confidence is None or fact.label is FactLabel.UNLABELED:
                    raise ValidationError(
                        "Filtered responses require every fact to carry a "
                        "confidence and a label"
                    )


class Provenance(enum.Enum):
    DIRECT_PASS = "direct"
    FILTERED_AT_INDEX = "filtered"


@dataclass(frozen=True)
class TrainingTriple:
    """A (question, level, response) example destined for the emitted dataset."""

    question: Question
    level: FactualityLevel
    response: ResponseRecord
    provenance: Provenance
    j: Optional[int] = None
    f_achieved: Optional[float] = None

    def __post_init__(self):
        if self.provenance is Provenance.FILTERED_AT_INDEX:
            if self.j is None or self.j < 1:
                raise ValidationError(
                    "FilteredAtIndex provenance requires a removal index j >= 1"
                )
        elif self.j is not None:
            raise ValidationError("DirectPass triples must not carry a removal index")

    def to_wire(self) -> "TripleRecord":
        return TripleRecord(
            question_id=self.question.id,
            level=self.level,
            prompt=render_control_prompt(self.question, self.level),
            completion=self.response.text,
            provenance=self.provenance,
            j=self.j,
            f_achieved=self.f_achieved,
        )


@dataclass(frozen=True)
class EvaluationRecord:
    """A scored response: fact counts, factuality, and length."""

    question_id: str
    fact_count: int
    supported_count: int
    factuality: Optional[float]
    word_count: int
    level_requested: Optional[FactualityLevel] = None

    def __post_init__(self):
        if self.fact_count < 0:
            raise ValidationError("EvaluationRecord.fact_count must be >= 0")
        if self.supported_count > self.fact_count:
            raise ValidationError(
                "EvaluationRecord.supported_count cannot exceed fact_count"
            )
        if self.fact_count == 0:
            if self.factuality is not None:
                raise ValidationError("factuality must be unset for empty responses")
        else:
            expected = self.supported_count / self.fact_count
            if self.factuality is None or abs(self.factuality - expected) > 1e-12:
                raise ValidationError(
                    "factuality must equal supported_count / fact_count"
                )


# ---------------------------------------------------------------------------
# Wire-level records (one JSONL schema each)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResponseInput:
    """One line of responses.jsonl: a response to evaluate, with an optional
    requested level."""

    question_id: str
    text: str
    level: Optional[FactualityLevel] = None

    def to_response_record(self) -> ResponseRecord:
        return ResponseRecord(
            question_id=self.question_id, text=self.text, origin=ResponseOrigin.EXTERNAL
        )


@dataclass(frozen=True)
class LabelEntry:
    """One line of labels.jsonl: an oracle verdict for (question, fact index)."""

    question_id: str
    fact_index: int
    label: FactLabel

    def __post_init__(self):
        if self.fact_index < 0:
            raise ValidationError("LabelEntry.fact_index must be >= 0")
        if self.label is FactLabel.UNLABELED:
            raise ValidationError("LabelEntry.label must be Supported or Unsupported")


@dataclass(frozen=True)
class TripleRecord:
    """One line of triples.jsonl."""

    question_id: str
    level: FactualityLevel
    prompt: str
    completion: str
    provenance: Optional[Provenance] = None
    j: Optional[int] = None
    f_achieved: Optional[float] = None

    def __post_init__(self):
        if self.provenance is Provenance.FILTERED_AT_INDEX and (
            self.j is None or self.j < 1
        ):
            raise ValidationError("filtered triples require a removal index j >= 1")
        if self.provenance is Provenance.DIRECT_PASS and self.j is not None:
            raise ValidationError("direct triples must not carry a removal index")


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug or "q"


def render_control_prompt(question: Question, level: Optional[FactualityLevel]) -> str:
    """Task prompt plus the factuality directive; the base prompt alone when no
    level is given (no-control mode)."""
    if level is None:
        return question.prompt_text
    return f"{question.prompt_text} {CONTROL_DIRECTIVE.format(percent=level.percent)}"


# ---------------------------------------------------------------------------
# JSONL parsing and canonical serialization
# ---------------------------------------------------------------------------

SCHEMA_KINDS = ("entities", "responses", "labels", "triples")


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False) + "\n"


def _require(obj: dict, name: str, path, line_no) -> object:
    if name not in obj:
        raise RecordParseError(path, line_no, f"missing field {name!r}")
    return obj[name]


def _parse_level(raw, path, line_no) -> FactualityLevel:
    try:
        return FactualityLevel(float(raw))
    except (TypeError, ValueError, ValidationError) as exc:
        raise RecordParseError(path, line_no, f"field 'level': {exc}") from exc


def _parse_entity_line(obj, path, line_no, seen_ids) -> Question:
    entity = _require(obj, "entity", path, line_no)
    if not isinstance(entity, str) or not entity:
        raise RecordParseError(path, line_no, "field 'entity' must be a non-empty string")
    qid = obj.get("id")
    if qid is None:
        qid = slugify(entity)
        base, n = qid, 2
        while qid in seen_ids:
            qid = f"{base}-{n}"
            n += 1
    elif qid in seen_ids:
        raise RecordParseError(path, line_no, f"duplicate id {qid!r}")
    seen_ids.add(qid)
    return Question.for_entity(entity, id=qid)


def _parse_response_line(obj, path, line_no) -> ResponseInput:
    question_id = _require(obj, "question_id", path, line_no)
    text = _require(obj, "text", path, line_no)
    level = None
    if obj.get("level") is not None:
        level = _parse_level(obj["level"], path, line_no)
    return ResponseInput(question_id=str(question_id), text=str(text), level=level)


def _parse_label_line(obj, path, line_no) -> LabelEntry:
    question_id = _require(obj, "question_id", path, line_no)
    fact_index = _require(obj, "fact_index", path, line_no)
    raw_label = _require(obj, "label", path, line_no)
    try:
        label = FactLabel(raw_label)
    except ValueError as exc:
        raise RecordParseError(
            path, line_no, f"field 'label': unknown value {raw_label!r}"
        ) from exc
    try:
        return LabelEntry(question_id=str(question_id), fact_index=int(fact_index), label=label)
    except (TypeError, ValueError, ValidationError) as exc:
        raise RecordParseError(path, line_no, f"field 'fact_index': {exc}") from exc


def _parse_triple_line(obj, path, line_no) -> TripleRecord:
    question_id = _require(obj, "question_id", path, line_no)
    level = _parse_level(_require(obj, "level", path, line_no), path, line_no)
    prompt = _require(obj, "prompt", path, line_no)
    completion = _require(obj, "completion", path, line_no)
    provenance = None
    if obj.get("provenance") is not None:
        try:
            provenance = Provenance(obj["provenance"])
        except ValueError as exc:
            raise RecordParseError(
                path, line_no, f"field 'provenance': unknown value {obj['provenance']!r}"
            ) from exc
    try:
        return TripleRecord(
            question_id=str(question_id),
            level=level,
            prompt=str(prompt),
            completion=str(completion),
            provenance=provenance,
            j=obj.get("j"),
            f_achieved=obj.get("f_achieved"),
        )
    except ValidationError as exc:
        raise RecordParseError(path, line_no, str(exc)) from exc


def parse_records(path, schema_kind: str) -> list:
    """Parse a JSONL file into validated records.

    ``schema_kind`` is one of ``entities``, ``responses``, ``labels``,
    ``triples``. Malformed lines raise :class:`RecordParseError` naming the
    line and field.
    """
    if schema_kind not in SCHEMA_KINDS:
        raise ValueError(f"unknown schema kind {schema_kind!r}; expected one of {SCHEMA_KINDS}")
    path = Path(path)
    records = []
    seen_ids: set = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise RecordParseError(path, line_no, "expected a JSON object")
            if schema_kind == "entities":
                records.append(_parse_entity_line(obj, path, line_no, seen_ids))
            elif schema_kind == "responses":
                records.append(_parse_response_line(obj, path, line_no))
            elif schema_kind == "labels":
                records.append(_parse_label_line(obj, path, line_no))
            else:
                records.append(_parse_triple_line(obj, path, line_no))
    return records


def record_to_json_obj(record) -> dict:
    """Canonical JSON object for any wire-level record (fixed key order)."""
    if isinstance(record, Question):
        return {"id": record.id, "entity": record.entity_name}
    if isinstance(record, ResponseInput):
        obj = {"question_id": record.question_id}
        if record.level is not None:
            obj["level"] = record.level.value
        obj["text"] = record.text
        return obj
    if isinstance(record, LabelEntry):
        return {
            "question_id": record.question_id,
            "fact_index": record.fact_index,
            "label": record.label.value,
        }
    if isinstance(record, TripleRecord):
        obj = {
            "question_id": record.question_id,
            "level": record.level.value,
            "prompt": record.prompt,
            "completion": record.completion,
        }
        if record.provenance is not None:
            obj["provenance"] = record.provenance.value
        if record.j is not None:
            obj["j"] = record.j
        if record.f_achieved is not None:
            obj["f_achieved"] = record.f_achieved
        return obj
    if isinstance(record, EvaluationRecord):
        obj = {"question_id": record.question_id}
        if record.level_requested is not None:
            obj["level"] = record.level_requested.value
        obj.update(
            fact_count=record.fact_count,
            supported_count=record.supported_count,
            factuality=record.factuality,
            word_count=record.word_count,
        )
        return obj
    raise TypeError(f"no wire schema for {type(record).__name__}")


def serialize_records(records: Iterable) -> str:
    return "".join(_dump_line(record_to_json_obj(r)) for r in records)


def write_records(path, records: Iterable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(serialize_records(records))


def read_evaluation_records(path) -> list:
    """Load records.jsonl lines back into EvaluationRecord values."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            level = None
            if obj.get("level") is not None:
                level = _parse_level(obj["level"], path, line_no)
            try:
                records.append(
                    EvaluationRecord(
                        question_id=str(_require(obj, "question_id", path, line_no)),
                        fact_count=int(_require(obj, "fact_count", path, line_no)),
                        supported_count=int(_require(obj, "supported_count", path, line_no)),
                        factuality=obj.get("factuality"),
                        word_count=int(_require(obj, "word_count", path, line_no)),
                        level_requested=level,
                    )
                )
            except ValidationError as exc:
                raise RecordParseError(path, line_no, str(exc)) from exc
    return records


DEFAULT_LEVELS = tuple(FactualityLevel(round(i / 10, 1)) for i in range(1, 11))
