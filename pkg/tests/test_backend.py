import json
import math
import os
import time

import pytest

from factctl.backend import (
    CachedBackend,
    GenerationParams,
    HTTPBackend,
    ResponseCache,
    TokenProbPair,
    cache_gc,
)
from factctl.errors import (
    CapabilityUnsupported,
    HTTPStatusError,
    TransportError,
    ValidationError,
)

from conftest import CountingBackend, StubBackend, load_fixture

PARAMS = GenerationParams(max_tokens=32)


def test_generation_params_validation():
    with pytest.raises(ValidationError):
        GenerationParams(max_tokens=0)
    with pytest.raises(ValidationError):
        GenerationParams(temperature=-0.5)


def test_token_prob_pair_bounds():
    TokenProbPair(p_true=0.6, p_false=0.2)  # need not sum to 1
    with pytest.raises(ValidationError):
        TokenProbPair(p_true=1.2, p_false=0.0)


# ---------------------------------------------------------------------------
# Disk cache
# ---------------------------------------------------------------------------

def test_cache_hit_skips_backend_and_is_byte_identical(tmp_path):
    counting = CountingBackend(StubBackend(default_reply="hello world"))
    cached = CachedBackend(counting, tmp_path)
    first = cached.complete("a prompt", PARAMS)
    second = cached.complete("a prompt", PARAMS)
    assert first == second == "hello world"
    assert counting.complete_calls == 1

    counting_probe = CountingBackend(StubBackend(default_probe=(0.6, 0.2)))
    cached = CachedBackend(counting_probe, tmp_path)
    p1 = cached.first_token_probs("probe", "True", "False")
    p2 = cached.first_token_probs("probe", "True", "False")
    assert p1 == p2 == TokenProbPair(0.6, 0.2)
    assert counting_probe.probe_calls == 1


def test_cache_layout_two_char_prefix(tmp_path):
    cached = CachedBackend(StubBackend(default_reply="x"), tmp_path)
    cached.complete("prompt", PARAMS)
    entries = list(tmp_path.glob("*/*.json"))
    assert len(entries) == 1
    digest = entries[0].stem
    assert entries[0].parent.name == digest[:2]
    assert len(digest) == 64


def test_cache_distinguishes_params_and_backend(tmp_path):
    counting = CountingBackend(StubBackend(default_reply="x"))
    cached = CachedBackend(counting, tmp_path)
    cached.complete("prompt", GenerationParams(max_tokens=8))
    cached.complete("prompt", GenerationParams(max_tokens=16))
    assert counting.complete_calls == 2


def test_cache_gc_empty_dir(tmp_path):
    assert cache_gc(tmp_path, 10_000) == 0


def test_cache_gc_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        cache_gc(tmp_path / "nope", 10)


def test_cache_gc_removes_oldest_until_under_budget(tmp_path):
    cache = ResponseCache(tmp_path)
    for i in range(3):
        cache.put({"op": "complete", "i": i}, "payload-" + "x" * 50)
    entries = sorted(tmp_path.glob("*/*.json"))
    assert len(entries) == 3
    # pin known recency: entries[0] oldest, entries[2] newest
    now = time.time()
    for age, path in enumerate(reversed(entries)):
        os.utime(path, (now - age * 100, now - age * 100))
    sizes = {path: path.stat().st_size for path in entries}
    budget = max(sizes.values()) + 1  # fits exactly one entry
    freed = cache_gc(tmp_path, budget)
    survivors = list(tmp_path.glob("*/*.json"))
    assert len(survivors) == 1
    assert survivors[0] == entries[2]  # newest kept
    assert freed == sizes[entries[0]] + sizes[entries[1]]


def test_cache_gc_budget_larger_than_cache(tmp_path):
    cache = ResponseCache(tmp_path)
    cache.put({"k": 1}, "v")
    assert cache_gc(tmp_path, 10**9) == 0
    assert len(list(tmp_path.glob("*/*.json"))) == 1


# ---------------------------------------------------------------------------
# HTTP backend against a scripted fixture server
# ---------------------------------------------------------------------------

def test_http_complete_matches_fixture(scripted_server):
    fixture = load_fixture("chat_completion.json")
    scripted_server.enqueue(200, fixture)
    backend = HTTPBackend(scripted_server.url, model="fixture-model")
    text = backend.complete("Tell me about Paris.", PARAMS)
    assert text == json.loads(fixture)["choices"][0]["message"]["content"]
    request = scripted_server.requests[0]
    assert request["model"] == "fixture-model"
    assert request["messages"] == [{"role": "user", "content": "Tell me about Paris."}]
    assert request["max_tokens"] == 32


def test_http_first_token_probs_from_fixture_logprobs(scripted_server):
    scripted_server.enqueue(200, load_fixture("chat_logprobs.json"))
    backend = HTTPBackend(scripted_server.url, model="fixture-model")
    pair = backend.first_token_probs("probe", "True", "False")
    assert pair.p_true == pytest.approx(math.exp(-0.51), abs=1e-12)
    assert pair.p_false == pytest.approx(math.exp(-1.61), abs=1e-12)
    # the fixture's log-probabilities exponentiate to (0.600, 0.200)
    assert pair.p_true == pytest.approx(0.600, abs=1e-3)
    assert pair.p_false == pytest.approx(0.200, abs=1e-3)
    request = scripted_server.requests[0]
    assert request["logprobs"] is True
    assert request["top_logprobs"] == 20


def test_http_probs_matching_is_case_sensitive(scripted_server):
    # fixture contains "true" at -4.0; only "True"/" False" may count
    scripted_server.enqueue(200, load_fixture("chat_logprobs.json"))
    backend = HTTPBackend(scripted_server.url, model="fixture-model")
    pair = backend.first_token_probs("probe", "True", "False")
    assert pair.p_true < math.exp(-0.51) + math.exp(-4.0) - 1e-6


def test_http_missing_logprobs_raises_capability_unsupported(scripted_server):
    scripted_server.enqueue(200, load_fixture("chat_no_logprobs.json"))
    backend = HTTPBackend(scripted_server.url, model="fixture-model")
    with pytest.raises(CapabilityUnsupported):
        backend.first_token_probs("probe", "True", "False")


def test_http_4xx_fails_immediately_with_status_and_body(scripted_server):
    scripted_server.enqueue(401, '{"error": "bad key"}')
    backend = HTTPBackend(scripted_server.url, model="m", sleep=lambda s: None)
    with pytest.raises(HTTPStatusError) as excinfo:
        backend.complete("prompt", PARAMS)
    assert excinfo.value.status == 401
    assert "bad key" in excinfo.value.body_excerpt
    assert len(scripted_server.requests) == 1


def test_http_retries_5xx_then_succeeds(scripted_server):
    scripted_server.enqueue(500, "boom")
    scripted_server.enqueue(503, "still boom")
    scripted_server.enqueue(200, load_fixture("chat_completion.json"))
    delays = []
    backend = HTTPBackend(scripted_server.url, model="m", sleep=delays.append)
    text = backend.complete("prompt", PARAMS)
    assert "Paris" in text
    assert len(scripted_server.requests) == 3
    assert delays == [1.0, 2.0]  # exponential backoff from 1s


def test_http_exhausted_retries_carry_attempt_count(scripted_server):
    for _ in range(3):
        scripted_server.enqueue(500, "boom")
    backend = HTTPBackend(scripted_server.url, model="m", sleep=lambda s: None)
    with pytest.raises(TransportError) as excinfo:
        backend.complete("prompt", PARAMS)
    assert excinfo.value.attempts == 3
    assert len(scripted_server.requests) == 3


def test_http_transport_error_is_retried():
    delays = []
    backend = HTTPBackend(
        "http://127.0.0.1:1/unreachable", model="m", sleep=delays.append
    )
    with pytest.raises(TransportError) as excinfo:
        backend.complete("prompt", PARAMS)
    assert excinfo.value.attempts == 3
    assert len(delays) == 2


def test_http_identical_tokens_rejected(scripted_server):
    backend = HTTPBackend(scripted_server.url, model="m")
    with pytest.raises(ValidationError):
        backend.first_token_probs("probe", "True", "True")
