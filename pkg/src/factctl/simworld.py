"""A deterministic synthetic universe for closed-loop, desk-scale testing.

Entities carry template-sentence fact sets with ground-truth labels, and
every fact has a latent model confidence. The calibration knob spans the two
regimes the filter cares about: at high calibration, confidence separates
true from false facts almost perfectly; at calibration 0 the probe carries
no signal at all (every fact scores 0.5).

The simulated model states its reliable facts first and appends the
fabricated ones at the end of the response, so the uninformative regime
deterministically exercises the no-qualifying-subset path at strict levels.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .backend import Backend, GenerationParams, TokenProbPair
from .core import Question, LabelEntry, FactLabel
from .errors import SimWorldError, ValidationError
from .templates import load_prompt
from .verify import CorpusDocument, ReferenceCorpus

_TRUE_TEMPLATES = (
    "{name} was born in settlement {n}.",
    "{name} studied at institute {n}.",
    "{name} published {n} field reports.",
    "{name} served on council {n}.",
    "{name} restored archive {n}.",
    "{name} mapped river basin {n}.",
    "{name} taught seminar {n}.",
    "{name} curated exhibit {n}.",
)
_FALSE_TEMPLATES = (
    "{name} secretly piloted airship {n}.",
    "{name} reportedly discovered moon {n}.",
    "{name} allegedly won tournament {n}.",
    "{name} claimed to have built engine {n}.",
    "{name} supposedly trained dragon {n}.",
    "{name} is rumored to own island {n}.",
    "{name} invented perpetual device {n}.",
    "{name} once ruled kingdom {n}.",
)


@dataclass(frozen=True)
class SimFact:
    text: str
    is_true: bool
    latent_confidence: float

    def __post_init__(self):
        if not 0.0 <= self.latent_confidence <= 1.0:
            raise ValidationError("latent confidence must lie in [0, 1]")


@dataclass(frozen=True)
class SimEntity:
    entity_id: str
    name: str
    facts: tuple  # response order: reliable facts first, fabricated last

    @property
    def true_facts(self) -> tuple:
        return tuple(fact.text for fact in self.facts if fact.is_true)

    @property
    def false_facts(self) -> tuple:
        return tuple(fact.text for fact in self.facts if not fact.is_true)


@dataclass(frozen=True)
class SimWorld:
    seed: int
    calibration: float
    entities: tuple

    def __post_init__(self):
        if self.calibration < 0:
            raise ValidationError("calibration must be >= 0")
        seen = set()
        for entity in self.entities:
            if entity.entity_id in seen:
                raise ValidationError(f"duplicate entity_id {entity.entity_id!r}")
            seen.add(entity.entity_id)
            if set(entity.true_facts) & set(entity.false_facts):
                raise ValidationError(
                    f"entity {entity.entity_id!r} has overlapping true/false facts"
                )

    def fact_map(self) -> dict:
        return {
            fact.text: fact for entity in self.entities for fact in entity.facts
        }

    def fingerprint(self) -> str:
        canonical = json.dumps(world_to_json_obj(self), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _latent_confidence(rng: random.Random, is_true: bool, beta: float) -> float:
    # calibration 0 disables the signal entirely: a constant probe value.
    if beta == 0:
        return 0.5
    if is_true:
        return rng.betavariate(1 + beta, 1)
    return rng.betavariate(1, 1 + beta)


def generate_world(
    seed: int,
    n_entities: int,
    facts_per_entity: int,
    false_fraction: float,
    beta: float,
) -> SimWorld:
    """Build a reproducible world; ``false_fraction`` is the per-fact
    probability of a fact being fabricated."""
    if n_entities < 1:
        raise ValidationError("n_entities must be >= 1")
    if facts_per_entity < 1:
        raise ValidationError("facts_per_entity must be >= 1")
    if not 0.0 <= false_fraction <= 1.0:
        raise ValidationError("false_fraction must lie in [0, 1]")
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    rng = random.Random(seed)
    width = max(3, len(str(n_entities - 1)))
    entities = []
    for i in range(n_entities):
        name = f"Sim Entity {i:0{width}d}"
        entity_id = f"sim-{i:0{width}d}"
        true_facts, false_facts = [], []
        for slot in range(facts_per_entity):
            is_true = rng.random() >= false_fraction
            templates = _TRUE_TEMPLATES if is_true else _FALSE_TEMPLATES
            text = templates[slot % len(templates)].format(name=name, n=slot + 1)
            fact = SimFact(
                text=text,
                is_true=is_true,
                latent_confidence=_latent_confidence(rng, is_true, beta),
            )
            (true_facts if is_true else false_facts).append(fact)
        rng.shuffle(true_facts)
        rng.shuffle(false_facts)
        entities.append(
            SimEntity(entity_id=entity_id, name=name, facts=tuple(true_facts + false_facts))
        )
    return SimWorld(seed=seed, calibration=beta, entities=tuple(entities))


def sim_complete(world: SimWorld, prompt: str) -> str:
    """The simulated model's response: the entity's facts as sentences."""
    for entity in world.entities:
        if entity.name in prompt:
            return " ".join(fact.text for fact in entity.facts)
    raise SimWorldError(f"prompt names no known entity: {prompt[:120]!r}")


def sim_probe(world: SimWorld, fact_text: str) -> TokenProbPair:
    """(h, 1-h) for the fact's latent confidence h, so the normalized
    confidence recovers h exactly."""
    fact = world.fact_map().get(fact_text)
    if fact is None:
        raise SimWorldError(f"unknown fact: {fact_text[:120]!r}")
    h = fact.latent_confidence
    return TokenProbPair(p_true=h, p_false=1.0 - h)


class SimBackend(Backend):
    """Backend adapter over a world: pure function of (world, prompt).

    ``probe_overrides`` maps fact text to an explicit (p_true, p_false)
    pair, for exercising degenerate probes in tests.
    """

    def __init__(
        self,
        world: SimWorld,
        probe_overrides: Optional[dict] = None,
        probe_template: Optional[str] = None,
    ):
        self.world = world
        self.probe_overrides = dict(probe_overrides or {})
        template = probe_template or load_prompt("confidence")
        prefix, _, suffix = template.partition("{fact}")
        self._probe_prefix = prefix
        self._probe_suffix = suffix
        self._fact_map = world.fact_map()

    @property
    def backend_id(self) -> str:
        return f"sim:{self.world.fingerprint()}"

    def complete(self, prompt: str, params: GenerationParams) -> str:
        return sim_complete(self.world, prompt)

    def _extract_fact(self, prompt: str) -> str:
        if prompt.startswith(self._probe_prefix) and prompt.endswith(self._probe_suffix):
            end = len(prompt) - len(self._probe_suffix)
            return prompt[len(self._probe_prefix):end]
        raise SimWorldError(
            f"prompt does not match the probe template: {prompt[:120]!r}"
        )

    def first_token_probs(self, prompt: str, token_a: str, token_b: str) -> TokenProbPair:
        fact_text = self._extract_fact(prompt)
        if fact_text in self.probe_overrides:
            p_true, p_false = self.probe_overrides[fact_text]
            return TokenProbPair(p_true=p_true, p_false=p_false)
        return sim_probe(self.world, fact_text)


# ---------------------------------------------------------------------------
# Bridges into the rest of the pipeline
# ---------------------------------------------------------------------------

def world_questions(world: SimWorld) -> list:
    return [
        Question.for_entity(entity.name, id=entity.entity_id)
        for entity in world.entities
    ]


def world_oracle_labels(world: SimWorld) -> list:
    """Ground-truth labels for the initial responses, indexed by the fact's
    position in the simulated response."""
    entries = []
    for entity in world.entities:
        for index, fact in enumerate(entity.facts):
            entries.append(
                LabelEntry(
                    question_id=entity.entity_id,
                    fact_index=index,
                    label=FactLabel.SUPPORTED if fact.is_true else FactLabel.UNSUPPORTED,
                )
            )
    return entries


def world_corpus(world: SimWorld) -> ReferenceCorpus:
    """One reference document per entity, holding only its true facts."""
    return ReferenceCorpus(
        CorpusDocument(
            doc_id=entity.entity_id,
            title=entity.name,
            text=" ".join(entity.true_facts),
        )
        for entity in world.entities
    )


# ---------------------------------------------------------------------------
# world.json serialization
# ---------------------------------------------------------------------------

def world_to_json_obj(world: SimWorld) -> dict:
    return {
        "seed": world.seed,
        "calibration": world.calibration,
        "entities": [
            {
                "entity_id": entity.entity_id,
                "name": entity.name,
                "facts": [
                    {
                        "text": fact.text,
                        "true": fact.is_true,
                        "confidence": fact.latent_confidence,
                    }
                    for fact in entity.facts
                ],
            }
            for entity in world.entities
        ],
    }


def save_world(world: SimWorld, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(world_to_json_obj(world), handle, ensure_ascii=False, indent=2)
        handle.write("\n")


def load_world(path) -> SimWorld:
    with open(path, encoding="utf-8") as handle:
        obj = json.load(handle)
    entities = tuple(
        SimEntity(
            entity_id=entry["entity_id"],
            name=entry["name"],
            facts=tuple(
                SimFact(
                    text=fact["text"],
                    is_true=bool(fact["true"]),
                    latent_confidence=float(fact["confidence"]),
                )
                for fact in entry["facts"]
            ),
        )
        for entry in obj["entities"]
    )
    return SimWorld(
        seed=int(obj["seed"]),
        calibration=float(obj["calibration"]),
        entities=entities,
    )
