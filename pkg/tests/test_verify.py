import random

import pytest

from factctl.core import AtomicFact, FactLabel, LabelEntry
from factctl.errors import MissingLabel, ValidationError, VerdictUnparseable
from factctl.verify import (
    CorpusDocument,
    ExactMatchVerifier,
    FactualityScore,
    JudgeVerifier,
    OracleVerifier,
    ReferenceCorpus,
    factuality,
    parse_verdict,
    retrieve,
    verify_fact,
)

from conftest import StubBackend


def fact(text, position=0, label=FactLabel.UNLABELED):
    return AtomicFact(text=text, source_position=position, label=label)


def labeled(labels):
    return [
        fact(f"fact {i}.", i, FactLabel.SUPPORTED if flag else FactLabel.UNSUPPORTED)
        for i, flag in enumerate(labels)
    ]


# ---------------------------------------------------------------------------
# factuality
# ---------------------------------------------------------------------------

def test_factuality_three_of_four():
    score = factuality(labeled([True, True, False, True]))
    assert score.value == 0.75
    assert (score.supported, score.total) == (3, 4)


def test_factuality_all_supported():
    assert factuality(labeled([True] * 5)).value == 1.0


def test_factuality_empty_is_undefined():
    score = factuality([])
    assert score.value is None
    assert not score.is_defined


def test_factuality_rejects_unlabeled():
    with pytest.raises(ValidationError):
        factuality([fact("floating.")])


def test_factuality_permutation_invariant():
    facts = labeled([True, False, True, True, False, True, False])
    rng = random.Random(7)
    expected = factuality(facts).value
    for _ in range(20):
        shuffled = facts[:]
        rng.shuffle(shuffled)
        assert factuality(shuffled).value == expected


def test_factuality_monotonicity_under_removal():
    facts = labeled([True, False, True, True, False])
    base = factuality(facts).value
    for index, removed in enumerate(facts):
        rest = facts[:index] + facts[index + 1 :]
        value = factuality(rest).value
        if removed.label is FactLabel.UNSUPPORTED:
            assert value >= base
        else:
            assert value <= base


def test_factuality_score_invariants():
    with pytest.raises(ValidationError):
        FactualityScore(supported=3, total=2)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------

@pytest.fixture
def corpus():
    return ReferenceCorpus(
        [
            CorpusDocument(doc_id="d1", title="One", text="born in Paris 1970"),
            CorpusDocument(doc_id="d2", title="Two", text="a chemistry prize"),
        ]
    )


def test_retrieve_ranks_by_shared_tokens(corpus):
    # "born in Paris" shares 3 tokens with d1 and 0 with d2
    docs = retrieve(corpus, "born in Paris", k=2)
    assert [d.doc_id for d in docs] == ["d1", "d2"]


def test_retrieve_k_larger_than_corpus(corpus):
    docs = retrieve(corpus, "Paris", k=10)
    assert len(docs) == 2


def test_retrieve_zero_overlap_ties_break_by_doc_id(corpus):
    docs = retrieve(corpus, "zzz qqq", k=2)
    assert [d.doc_id for d in docs] == ["d1", "d2"]


def test_retrieve_deterministic(corpus):
    first = [d.doc_id for d in retrieve(corpus, "chemistry prize Paris", k=2)]
    for _ in range(5):
        assert [d.doc_id for d in retrieve(corpus, "chemistry prize Paris", k=2)] == first


def test_retrieve_empty_corpus_rejected():
    with pytest.raises(ValidationError):
        retrieve(ReferenceCorpus([]), "anything", k=1)


def test_corpus_duplicate_doc_ids_rejected():
    with pytest.raises(ValidationError):
        ReferenceCorpus(
            [
                CorpusDocument(doc_id="d1", title="a", text="x"),
                CorpusDocument(doc_id="d1", title="b", text="y"),
            ]
        )


def test_corpus_from_directory_and_jsonl(tmp_path):
    (tmp_path / "alpha.txt").write_text("alpha document text", encoding="utf-8")
    (tmp_path / "beta.txt").write_text("beta document text", encoding="utf-8")
    from_dir = ReferenceCorpus.from_directory(tmp_path)
    assert [d.doc_id for d in from_dir.documents] == ["alpha", "beta"]

    jsonl = tmp_path / "corpus.jsonl"
    jsonl.write_text(
        '{"doc_id": "d1", "title": "One", "text": "hello world"}\n', encoding="utf-8"
    )
    from_jsonl = ReferenceCorpus.load(jsonl)
    assert from_jsonl.documents[0].text == "hello world"


# ---------------------------------------------------------------------------
# verifiers
# ---------------------------------------------------------------------------

def test_oracle_lookup():
    oracle = OracleVerifier(
        [
            LabelEntry(question_id="q1", fact_index=2, label=FactLabel.UNSUPPORTED),
            LabelEntry(question_id="q1", fact_index=0, label=FactLabel.SUPPORTED),
        ]
    )
    assert (
        verify_fact(fact("anything.", 2), None, oracle, question_id="q1")
        is FactLabel.UNSUPPORTED
    )
    assert (
        verify_fact(fact("anything.", 0), None, oracle, question_id="q1")
        is FactLabel.SUPPORTED
    )


def test_oracle_missing_label():
    oracle = OracleVerifier([])
    with pytest.raises(MissingLabel):
        verify_fact(fact("anything."), None, oracle, question_id="q9")
    with pytest.raises(MissingLabel):
        verify_fact(fact("anything."), None, oracle)  # no question_id at all


def test_exact_match_substring(corpus):
    exact = ExactMatchVerifier(corpus)
    assert verify_fact(fact("born in Paris"), None, exact) is FactLabel.SUPPORTED
    assert verify_fact(fact("born in Berlin"), None, exact) is FactLabel.UNSUPPORTED


def test_judge_fixture_verdicts(corpus):
    judge = JudgeVerifier(corpus, StubBackend(default_reply="False"), top_k=2)
    assert verify_fact(fact("born in Berlin"), "Person", judge) is FactLabel.UNSUPPORTED

    judge = JudgeVerifier(corpus, StubBackend(default_reply="True, it checks out."), top_k=2)
    assert verify_fact(fact("born in Paris"), "Person", judge) is FactLabel.SUPPORTED


def test_judge_prompt_carries_passages_and_fact(corpus):
    backend = StubBackend(default_reply="True")
    judge = JudgeVerifier(corpus, backend, top_k=1)
    verify_fact(fact("born in Paris 1970"), "Person", judge)
    prompt = backend.prompts[0]
    assert "born in Paris 1970" in prompt
    assert "Title: One" in prompt
    assert "Title: Two" not in prompt  # top_k=1 keeps only the best passage


def test_judge_unparseable_verdict(corpus):
    judge = JudgeVerifier(corpus, StubBackend(default_reply="It is unclear."))
    with pytest.raises(VerdictUnparseable):
        verify_fact(fact("born in Paris"), "Person", judge)


@pytest.mark.parametrize(
    "reply,label",
    [
        ("True", FactLabel.SUPPORTED),
        ("  false.", FactLabel.UNSUPPORTED),
        ('"True" because the text says so', FactLabel.SUPPORTED),
        ("FALSE", FactLabel.UNSUPPORTED),
    ],
)
def test_parse_verdict_variants(reply, label):
    assert parse_verdict(reply) is label


def test_parse_verdict_rejects_prefix_words():
    with pytest.raises(VerdictUnparseable):
        parse_verdict("Truthfully, I cannot say.")
