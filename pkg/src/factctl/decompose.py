"""Segment responses into atomic facts and merge fact subsets back into text.

Both operations come in two modes. ``llm`` sends the prompt templates from
the ``prompts/`` directory to a backend and parses the reply; ``rule`` is a
deterministic sentence-level fallback used by property tests and the
simulated closed loop, where one sentence is one fact.
"""

from __future__ import annotations

import re
from typing import Optional, Sequence

from .backend import Backend, GenerationParams
from .core import AtomicFact, ResponseOrigin, ResponseRecord
from .errors import EmptyMerge, SegmentationFailed, ValidationError
from .templates import load_prompt

MODES = ("llm", "rule")

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
_LIST_ITEM = re.compile(r"^\s*(?:[-*]|\d+[.)])\s+(.*\S)\s*$")


def _require_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def _rule_sentences(text: str) -> list:
    return [part.strip() for part in _SENTENCE_BOUNDARY.split(text.strip()) if part.strip()]


def parse_fact_list(reply: str) -> list:
    """Extract item texts from an enumerated/bulleted model reply.

    Accepts "-", "*" and "1."-style markers; raises SegmentationFailed with
    the raw reply when no items are found.
    """
    items = []
    for line in reply.splitlines():
        match = _LIST_ITEM.match(line)
        if match:
            items.append(match.group(1))
    if not items:
        raise SegmentationFailed(reply)
    return items


def segment(
    response: ResponseRecord,
    mode: str = "rule",
    backend: Optional[Backend] = None,
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
) -> list:
    """Split a response into an ordered list of atomic facts.

    Rule mode splits on sentence terminators (., !, ?) followed by
    whitespace; llm mode asks the backend and parses its list reply.
    ``source_position`` is the list index either way.
    """
    _require_mode(mode)
    if mode == "rule":
        texts = _rule_sentences(response.text)
    else:
        if not response.text:
            raise ValidationError("llm segmentation requires a non-empty response")
        if backend is None:
            raise ValueError("llm mode requires a backend")
        prompt = load_prompt("segment", prompts_dir).format(text=response.text)
        reply = backend.complete(prompt, params or GenerationParams())
        texts = parse_fact_list(reply)
    return [AtomicFact(text=text, source_position=i) for i, text in enumerate(texts)]


def merge(
    retained: Sequence[AtomicFact],
    original: ResponseRecord,
    mode: str = "rule",
    backend: Optional[Backend] = None,
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
) -> ResponseRecord:
    """Recombine a subset of the original's facts into a fluent response.

    Rule mode concatenates the retained fact texts in ascending
    source_position, joined by single spaces; llm mode sends the merger
    prompt with the fact list and the original text and stores the reply
    verbatim. The result has origin Filtered.
    """
    _require_mode(mode)
    if not retained:
        raise EmptyMerge("cannot merge an empty set of retained facts")
    if original.facts:
        # the subset precondition is checkable only against a recorded fact list
        original_positions = {fact.source_position for fact in original.facts}
        for fact in retained:
            if fact.source_position not in original_positions:
                raise ValidationError(
                    f"retained fact at position {fact.source_position} is not part "
                    "of the original response"
                )
    ordered = sorted(retained, key=lambda fact: fact.source_position)
    if mode == "rule":
        text = " ".join(fact.text for fact in ordered)
    else:
        if backend is None:
            raise ValueError("llm mode requires a backend")
        facts_block = "\n".join(f"- {fact.text}" for fact in ordered)
        prompt = load_prompt("merge", prompts_dir).format(
            facts=facts_block, text=original.text
        )
        text = backend.complete(prompt, params or GenerationParams())
    return ResponseRecord(
        question_id=original.question_id,
        text=text,
        facts=tuple(ordered),
        origin=ResponseOrigin.FILTERED,
    )
