"""Model-confidence estimation for atomic facts.

A fact's confidence is the normalized probability the model puts on "True"
as the first token of its answer to the probe prompt, i.e.
``p_true / (p_true + p_false)``. The value is a relative ranking signal,
not a calibrated truth probability.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

from .backend import Backend
from .core import AtomicFact
from .errors import BackendError, ValidationError
from .templates import load_prompt

logger = logging.getLogger(__name__)

LOW_SIGNAL_THRESHOLD = 1e-6
TOKEN_TRUE = "True"
TOKEN_FALSE = "False"


def probe_prompt(fact_text: str, prompts_dir: Optional[str] = None) -> str:
    return load_prompt("confidence", prompts_dir).format(fact=fact_text)


def normalized_confidence(p_true: float, p_false: float) -> float:
    total = p_true + p_false
    if total < LOW_SIGNAL_THRESHOLD:
        raise ValueError("probe returned near-zero mass on both tokens")
    return p_true / total


def score_fact(
    fact: AtomicFact, backend: Backend, prompts_dir: Optional[str] = None
) -> AtomicFact:
    """Return a copy of the fact with its confidence set.

    A degenerate probe (near-zero mass on both candidate tokens) maps to
    confidence 0.5 with a low-signal tag instead of aborting, so such facts
    sort mid-pack.
    """
    if not fact.text:
        raise ValidationError("cannot score a fact with empty text")
    pair = backend.first_token_probs(
        probe_prompt(fact.text, prompts_dir), TOKEN_TRUE, TOKEN_FALSE
    )
    total = pair.p_true + pair.p_false
    if total < LOW_SIGNAL_THRESHOLD:
        logger.warning(
            "probe returned near-zero mass for fact at position %d; "
            "assigning confidence 0.5",
            fact.source_position,
        )
        return fact.with_confidence(0.5, low_signal=True)
    return fact.with_confidence(pair.p_true / total)


def score_all(
    facts: Sequence[AtomicFact],
    backend: Backend,
    concurrency: int = 1,
    prompts_dir: Optional[str] = None,
) -> list:
    """Score every fact, preserving order. Probes may run concurrently up to
    ``concurrency``; an unrecoverable backend error aborts the batch with a
    partial-progress report."""
    if not facts:
        raise ValidationError("score_all requires a non-empty fact list")
    if concurrency <= 1 or len(facts) == 1:
        scored = []
        for fact in facts:
            try:
                scored.append(score_fact(fact, backend, prompts_dir))
            except BackendError as exc:
                raise BackendError(
                    f"confidence batch aborted after {len(scored)}/{len(facts)} "
                    f"facts: {exc}"
                ) from exc
        return scored
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(score_fact, fact, backend, prompts_dir) for fact in facts]
        scored = []
        for future in futures:
            try:
                scored.append(future.result())
            except BackendError as exc:
                raise BackendError(
                    f"confidence batch aborted after {len(scored)}/{len(facts)} "
                    f"facts: {exc}"
                ) from exc
    return scored
