"""Fact verification: Supported/Unsupported labels and the factuality score.

Three verifier implementations cover the practical range: a lookup into an
oracle label file, an LLM judge over lexically retrieved reference passages,
and exact substring matching for tests and simulated worlds.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .backend import Backend, GenerationParams
from .core import AtomicFact, FactLabel, LabelEntry
from .errors import (
    MissingLabel,
    RecordParseError,
    ValidationError,
    VerdictUnparseable,
)
from .templates import load_prompt

logger = logging.getLogger(__name__)

JUDGE_TOP_K = 3

_WORD = re.compile(r"\w+")


def _tokens(text: str) -> set:
    return set(_WORD.findall(text.lower()))


@dataclass(frozen=True)
class FactualityScore:
    """Fraction of facts verified Supported; undefined for empty responses."""

    supported: int
    total: int

    def __post_init__(self):
        if self.total < 0 or self.supported < 0 or self.supported > self.total:
            raise ValidationError("FactualityScore requires 0 <= supported <= total")

    @property
    def value(self) -> Optional[float]:
        if self.total == 0:
            return None
        return self.supported / self.total

    @property
    def is_defined(self) -> bool:
        return self.total > 0


def factuality(facts: Sequence[AtomicFact]) -> FactualityScore:
    """Proportion of facts labeled Supported; Undefined for an empty list."""
    supported = 0
    for fact in facts:
        if fact.label is FactLabel.UNLABELED:
            raise ValidationError(
                f"fact at position {fact.source_position} is unlabeled"
            )
        if fact.label is FactLabel.SUPPORTED:
            supported += 1
    return FactualityScore(supported=supported, total=len(facts))


# ---------------------------------------------------------------------------
# Reference corpus with lexical retrieval
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    title: str
    text: str


class ReferenceCorpus:
    """Immutable document set with a token -> posting-list index."""

    def __init__(self, documents: Iterable[CorpusDocument]):
        self.documents = tuple(documents)
        seen = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise ValidationError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
        index: dict = {}
        for position, doc in enumerate(self.documents):
            for token in _tokens(doc.text):
                index.setdefault(token, []).append(position)
        self.index = index

    def __len__(self) -> int:
        return len(self.documents)

    @classmethod
    def from_jsonl(cls, path) -> "ReferenceCorpus":
        path = Path(path)
        documents = []
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise RecordParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
                for field in ("doc_id", "title", "text"):
                    if field not in obj:
                        raise RecordParseError(path, line_no, f"missing field {field!r}")
                documents.append(
                    CorpusDocument(
                        doc_id=str(obj["doc_id"]),
                        title=str(obj["title"]),
                        text=str(obj["text"]),
                    )
                )
        return cls(documents)

    @classmethod
    def from_directory(cls, path) -> "ReferenceCorpus":
        path = Path(path)
        documents = []
        for file in sorted(path.glob("*.txt")):
            documents.append(
                CorpusDocument(
                    doc_id=file.stem,
                    title=file.stem,
                    text=file.read_text(encoding="utf-8"),
                )
            )
        return cls(documents)

    @classmethod
    def load(cls, path) -> "ReferenceCorpus":
        path = Path(path)
        if path.is_dir():
            return cls.from_directory(path)
        return cls.from_jsonl(path)


def retrieve(corpus: ReferenceCorpus, query: str, k: int) -> list:
    """Top-k documents by shared lowercased-token count, ties broken by
    doc_id; deterministic for a given corpus and query."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(corpus) == 0:
        raise ValidationError("cannot retrieve from an empty corpus")
    scores = [0] * len(corpus.documents)
    for token in _tokens(query):
        for position in corpus.index.get(token, ()):
            scores[position] += 1
    ranked = sorted(
        range(len(corpus.documents)),
        key=lambda position: (-scores[position], corpus.documents[position].doc_id),
    )
    return [corpus.documents[position] for position in ranked[:k]]


# ---------------------------------------------------------------------------
# Verifiers
# ---------------------------------------------------------------------------

class OracleVerifier:
    """Labels come from a labels.jsonl table keyed by (question_id, fact_index)."""

    name = "oracle"

    def __init__(self, entries: Iterable[LabelEntry]):
        self.table = {
            (entry.question_id, entry.fact_index): entry.label for entry in entries
        }

    @classmethod
    def from_file(cls, path) -> "OracleVerifier":
        from .core import parse_records

        return cls(parse_records(path, "labels"))

    def label(self, fact: AtomicFact, entity_name=None, question_id=None) -> FactLabel:
        if question_id is None:
            raise MissingLabel("oracle verification requires a question_id")
        key = (question_id, fact.source_position)
        if key not in self.table:
            raise MissingLabel(f"no oracle label for question {question_id!r}, "
                               f"fact {fact.source_position}")
        return self.table[key]


class ExactMatchVerifier:
    """Supported iff the fact text appears verbatim inside any corpus document."""

    name = "exact"

    def __init__(self, corpus: ReferenceCorpus):
        self.corpus = corpus

    def label(self, fact: AtomicFact, entity_name=None, question_id=None) -> FactLabel:
        for doc in self.corpus.documents:
            if fact.text in doc.text:
                return FactLabel.SUPPORTED
        return FactLabel.UNSUPPORTED


class JudgeVerifier:
    """Asks a backend for a True/False verdict over retrieved passages."""

    name = "judge"

    def __init__(
        self,
        corpus: ReferenceCorpus,
        backend: Backend,
        top_k: int = JUDGE_TOP_K,
        prompts_dir: Optional[str] = None,
        params: Optional[GenerationParams] = None,
    ):
        self.corpus = corpus
        self.backend = backend
        self.top_k = top_k
        self.prompts_dir = prompts_dir
        self.params = params or GenerationParams(max_tokens=16)

    def label(self, fact: AtomicFact, entity_name=None, question_id=None) -> FactLabel:
        query = f"{entity_name} {fact.text}" if entity_name else fact.text
        passages = retrieve(self.corpus, query, self.top_k)
        passages_block = "\n\n".join(
            f"Title: {doc.title}\nText: {doc.text}" for doc in passages
        )
        prompt = load_prompt("judge", self.prompts_dir).format(
            entity=entity_name or "the subject",
            passages=passages_block,
            fact=fact.text,
        )
        reply = self.backend.complete(prompt, self.params)
        return parse_verdict(reply)


def parse_verdict(reply: str) -> FactLabel:
    """Map a judge reply to a label from its leading True/False verdict."""
    match = re.match(r"\s*\W*(true|false)\b", reply, flags=re.IGNORECASE)
    if not match:
        raise VerdictUnparseable(reply)
    return FactLabel.SUPPORTED if match.group(1).lower() == "true" else FactLabel.UNSUPPORTED


def verify_fact(
    fact: AtomicFact,
    entity_name: Optional[str],
    verifier,
    question_id: Optional[str] = None,
) -> FactLabel:
    return verifier.label(fact, entity_name=entity_name, question_id=question_id)


def label_facts(
    facts: Sequence[AtomicFact],
    verifier,
    entity_name: Optional[str] = None,
    question_id: Optional[str] = None,
) -> list:
    """Return copies of the facts with labels assigned, order unchanged."""
    return [
        fact.with_label(verify_fact(fact, entity_name, verifier, question_id))
        for fact in facts
    ]
