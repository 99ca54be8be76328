"""The confidence-guided filter: build training triples that meet a target
factuality level by removing the minimal low-confidence prefix.

For one question the pipeline is: generate the initial response with no
control directive, segment it, label each fact, and check the level
directly. When the initial response falls short, score per-fact confidence,
rank ascending, and drop the fewest lowest-confidence facts whose removal
lifts the remaining suffix to the level; merge the survivors back into a
response. When no non-empty suffix qualifies, no example is created for
that (question, level).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import decompose
from .backend import Backend, GenerationParams
from .confidence import score_all
from .core import (
    AtomicFact,
    FactLabel,
    FactualityLevel,
    Provenance,
    Question,
    ResponseOrigin,
    ResponseRecord,
    TrainingTriple,
    write_records,
)
from .errors import FactctlError, ValidationError
from .verify import FactualityScore, factuality, label_facts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RemovalResult:
    """Outcome of the minimal-removal scan: the suffix after dropping the
    ``j`` lowest-confidence facts."""

    j: int
    retained: tuple
    achieved_factuality: FactualityScore


def rank_ascending(facts: Sequence[AtomicFact]) -> list:
    """Stable sort by (confidence ascending, source_position ascending)."""
    for fact in facts:
        if fact.confidence is None:
            raise ValidationError(
                f"fact at position {fact.source_position} has no confidence score"
            )
    return sorted(facts, key=lambda fact: (fact.confidence, fact.source_position))


def _check_ranked(ranked: Sequence[AtomicFact]) -> None:
    previous = None
    for fact in ranked:
        if fact.confidence is None:
            raise ValidationError("minimal_removal requires scored facts")
        if fact.label is FactLabel.UNLABELED:
            raise ValidationError("minimal_removal requires labeled facts")
        key = (fact.confidence, fact.source_position)
        if previous is not None and key < previous:
            raise ValidationError("facts must be ranked ascending by confidence")
        previous = key


def minimal_removal(
    ranked: Sequence[AtomicFact], level: FactualityLevel
) -> Optional[RemovalResult]:
    """Smallest j in 0..n-1 whose suffix meets the level; None when no
    non-empty suffix qualifies (the empty suffix never counts)."""
    _check_ranked(ranked)
    n = len(ranked)
    supported_from = [0] * (n + 1)
    for index in range(n - 1, -1, -1):
        supported_from[index] = supported_from[index + 1] + (
            1 if ranked[index].label is FactLabel.SUPPORTED else 0
        )
    for j in range(n):
        total = n - j
        if supported_from[j] / total >= level.value:
            return RemovalResult(
                j=j,
                retained=tuple(ranked[j:]),
                achieved_factuality=FactualityScore(
                    supported=supported_from[j], total=total
                ),
            )
    return None


@dataclass(frozen=True)
class PreparedQuestion:
    """Per-question work shared across levels: the initial response with
    labeled facts, and its factuality."""

    question: Question
    response: ResponseRecord
    initial_factuality: FactualityScore


def prepare_question(
    question: Question,
    backend: Backend,
    verifier,
    mode: str = "rule",
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
) -> PreparedQuestion:
    """Generate the initial response (no control directive), segment it, and
    label every fact."""
    params = params or GenerationParams()
    initial_text = backend.complete(question.prompt_text, params)
    raw = ResponseRecord(
        question_id=question.id, text=initial_text, origin=ResponseOrigin.MODEL_INITIAL
    )
    facts = decompose.segment(
        raw, mode=mode, backend=backend, params=params, prompts_dir=prompts_dir
    )
    labeled = label_facts(
        facts, verifier, entity_name=question.entity_name, question_id=question.id
    )
    response = ResponseRecord(
        question_id=question.id,
        text=initial_text,
        facts=tuple(labeled),
        origin=ResponseOrigin.MODEL_INITIAL,
    )
    return PreparedQuestion(
        question=question, response=response, initial_factuality=factuality(labeled)
    )


def _rank_scored(
    prepared: PreparedQuestion,
    backend: Backend,
    concurrency: int,
    prompts_dir: Optional[str],
) -> list:
    scored = score_all(
        prepared.response.facts, backend, concurrency=concurrency, prompts_dir=prompts_dir
    )
    return rank_ascending(scored)


def triple_for_level(
    prepared: PreparedQuestion,
    level: FactualityLevel,
    backend: Backend,
    mode: str = "rule",
    ranked: Optional[Sequence[AtomicFact]] = None,
    verifier=None,
    revalidate: bool = False,
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
    concurrency: int = 1,
) -> Optional[TrainingTriple]:
    """One (question, level) example from prepared per-question state.

    Pass ``ranked`` to reuse confidence scores across levels; it is computed
    on demand otherwise.
    """
    initial = prepared.initial_factuality
    if initial.is_defined and initial.value >= level.value:
        return TrainingTriple(
            question=prepared.question,
            level=level,
            response=prepared.response,
            provenance=Provenance.DIRECT_PASS,
            f_achieved=initial.value,
        )
    if not prepared.response.facts:
        return None
    if ranked is None:
        ranked = _rank_scored(prepared, backend, concurrency, prompts_dir)
    removal = minimal_removal(ranked, level)
    if removal is None:
        return None
    merged = decompose.merge(
        removal.retained,
        prepared.response,
        mode=mode,
        backend=backend,
        params=params,
        prompts_dir=prompts_dir,
    )
    achieved = removal.achieved_factuality.value
    if revalidate:
        if verifier is None:
            raise ValueError("revalidation requires a verifier")
        # Catches post-merge drift in llm mode: the merged text is segmented
        # and verified again, and the example is demoted if it falls short.
        refreshed = label_facts(
            decompose.segment(
                merged, mode=mode, backend=backend, params=params, prompts_dir=prompts_dir
            ),
            verifier,
            entity_name=prepared.question.entity_name,
            question_id=prepared.question.id,
        )
        revalidated = factuality(refreshed)
        if not revalidated.is_defined or revalidated.value < level.value:
            logger.warning(
                "question %s level %s: merged response re-verified at %s; demoting",
                prepared.question.id,
                level.key(),
                "undefined" if not revalidated.is_defined else f"{revalidated.value:.3f}",
            )
            return None
        achieved = revalidated.value
    return TrainingTriple(
        question=prepared.question,
        level=level,
        response=merged,
        provenance=Provenance.FILTERED_AT_INDEX,
        j=removal.j,
        f_achieved=achieved,
    )


def build_triple(
    question: Question,
    level: FactualityLevel,
    backend: Backend,
    verifier,
    mode: str = "rule",
    revalidate: bool = False,
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
    concurrency: int = 1,
) -> Optional[TrainingTriple]:
    prepared = prepare_question(
        question, backend, verifier, mode=mode, params=params, prompts_dir=prompts_dir
    )
    return triple_for_level(
        prepared,
        level,
        backend,
        mode=mode,
        verifier=verifier,
        revalidate=revalidate,
        params=params,
        prompts_dir=prompts_dir,
        concurrency=concurrency,
    )


OUTCOME_DIRECT = "direct"
OUTCOME_FILTERED = "filtered"
OUTCOME_SKIPPED = "skipped"


@dataclass
class BuildReport:
    per_level: dict = field(default_factory=dict)

    def record(self, level: FactualityLevel, outcome: str) -> None:
        counts = self.per_level.setdefault(
            level.key(), {OUTCOME_DIRECT: 0, OUTCOME_FILTERED: 0, OUTCOME_SKIPPED: 0}
        )
        counts[outcome] += 1

    def to_json_obj(self) -> dict:
        return {"per_level": self.per_level}


@dataclass
class BuildResult:
    triples: list
    report: BuildReport
    outcomes: dict  # (question_id, level key) -> outcome
    triples_path: Optional[Path] = None
    report_path: Optional[Path] = None


def _process_question(
    question: Question,
    levels: Sequence[FactualityLevel],
    backend: Backend,
    verifier,
    mode: str,
    revalidate: bool,
    params: Optional[GenerationParams],
    prompts_dir: Optional[str],
) -> list:
    """(level, outcome, triple-or-None) rows for one question; the initial
    response, labels, and confidence scores are computed once."""
    rows = []
    try:
        prepared = prepare_question(
            question, backend, verifier, mode=mode, params=params, prompts_dir=prompts_dir
        )
    except FactctlError as exc:
        logger.error("question %s: preparation failed, skipping: %s", question.id, exc)
        return [(level, OUTCOME_SKIPPED, None) for level in levels]
    ranked = None
    for level in levels:
        try:
            initial = prepared.initial_factuality
            needs_filter = not (initial.is_defined and initial.value >= level.value)
            if needs_filter and prepared.response.facts and ranked is None:
                ranked = _rank_scored(prepared, backend, 1, prompts_dir)
            triple = triple_for_level(
                prepared,
                level,
                backend,
                mode=mode,
                ranked=ranked,
                verifier=verifier,
                revalidate=revalidate,
                params=params,
                prompts_dir=prompts_dir,
            )
        except FactctlError as exc:
            logger.error(
                "question %s level %s failed, skipping: %s", question.id, level.key(), exc
            )
            rows.append((level, OUTCOME_SKIPPED, None))
            continue
        if triple is None:
            rows.append((level, OUTCOME_SKIPPED, None))
        elif triple.provenance is Provenance.DIRECT_PASS:
            rows.append((level, OUTCOME_DIRECT, triple))
        else:
            rows.append((level, OUTCOME_FILTERED, triple))
    return rows


def build_dataset(
    questions: Sequence[Question],
    levels: Sequence[FactualityLevel],
    backend: Backend,
    verifier,
    mode: str = "rule",
    out_dir=None,
    concurrency: int = 1,
    revalidate: bool = False,
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
) -> BuildResult:
    """Run the filter over every (question, level) pair and emit
    triples.jsonl plus a provenance report.

    The initial response is generated once per question and shared across
    levels. Questions may be processed concurrently; output order is always
    question-major, level-ascending, so runs are reproducible.
    """
    if not levels:
        raise ValidationError("levels must be non-empty")
    levels = sorted(set(levels), key=lambda level: level.value)
    report = BuildReport()
    outcomes = {}
    triples = []

    def run(question):
        return _process_question(
            question, levels, backend, verifier, mode, revalidate, params, prompts_dir
        )

    if concurrency > 1 and len(questions) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            all_rows = list(pool.map(run, questions))
    else:
        all_rows = [run(question) for question in questions]

    for question, rows in zip(questions, all_rows):
        for level, outcome, triple in rows:
            report.record(level, outcome)
            outcomes[(question.id, level.key())] = outcome
            if triple is not None:
                triples.append(triple)

    triples_path = report_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        triples_path = out_dir / "triples.jsonl"
        write_records(triples_path, [triple.to_wire() for triple in triples])
        report_path = out_dir / "gen_report.json"
        with open(report_path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(report.to_json_obj(), handle, ensure_ascii=False, indent=2)
            handle.write("\n")
    return BuildResult(
        triples=triples,
        report=report,
        outcomes=outcomes,
        triples_path=triples_path,
        report_path=report_path,
    )
