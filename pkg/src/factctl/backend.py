"""Model backends: text completion and first-token probability access.

Two implementations share one interface: an HTTP client for OpenAI-style
chat-completion endpoints, and the deterministic simulated backend (which
lives in :mod:`factctl.simworld`). ``CachedBackend`` wraps either with a
content-addressed disk cache so pipelines are cheap to resume.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import requests

from .errors import (
    BackendError,
    CapabilityUnsupported,
    HTTPStatusError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_SECONDS = 1.0
DEFAULT_TIMEOUT_SECONDS = 60.0


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = 512
    temperature: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValidationError("GenerationParams.max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValidationError("GenerationParams.temperature must be >= 0")


@dataclass(frozen=True)
class TokenProbPair:
    """First-token probability mass of two candidate tokens. The remainder of
    the mass sits on other tokens, so the pair need not sum to 1."""

    p_true: float
    p_false: float

    def __post_init__(self):
        for name, p in (("p_true", self.p_true), ("p_false", self.p_false)):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"TokenProbPair.{name} must lie in [0, 1], got {p}")


class Backend(ABC):
    """Interface over the generating/judging model."""

    @property
    @abstractmethod
    def backend_id(self) -> str:
        """Stable identifier mixed into cache keys."""

    @abstractmethod
    def complete(self, prompt: str, params: GenerationParams) -> str:
        ...

    @abstractmethod
    def first_token_probs(self, prompt: str, token_a: str, token_b: str) -> TokenProbPair:
        ...


# ---------------------------------------------------------------------------
# Disk cache: content-addressed, atomic-rename commits
# ---------------------------------------------------------------------------

def _digest(key_obj: dict) -> str:
    canonical = json.dumps(key_obj, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Layout: ``<cache>/<2-char prefix>/<digest>.json``. Entries are written
    to a temp file and renamed into place, so concurrent writers are safe."""

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)

    def _path(self, digest: str) -> Path:
        return self.cache_dir / digest[:2] / f"{digest}.json"

    def get(self, key_obj: dict):
        path = self._path(_digest(key_obj))
        if not path.is_file():
            return None
        try:
            with open(path, encoding="utf-8") as handle:
                entry = json.load(handle)
        except (OSError, json.JSONDecodeError):
            logger.warning("dropping unreadable cache entry %s", path)
            return None
        os.utime(path)  # refresh LRU recency
        return entry.get("value")

    def put(self, key_obj: dict, value) -> None:
        digest = _digest(key_obj)
        path = self._path(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.parent / f".{digest}.{uuid.uuid4().hex}.tmp"
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump({"key": key_obj, "value": value}, handle, ensure_ascii=False)
        os.replace(tmp, path)


def cache_gc(cache_dir, max_bytes: int) -> int:
    """Drop least-recently-used cache entries until the cache fits the budget.
    Returns the number of bytes freed."""
    cache_dir = Path(cache_dir)
    if not cache_dir.is_dir():
        raise FileNotFoundError(f"cache directory does not exist: {cache_dir}")
    entries = []
    for path in cache_dir.glob("*/*.json"):
        try:
            stat = path.stat()
        except OSError:
            continue
        entries.append((stat.st_mtime, stat.st_size, path))
    total = sum(size for _, size, _ in entries)
    freed = 0
    for _, size, path in sorted(entries, key=lambda e: (e[0], str(e[2]))):
        if total <= max_bytes:
            break
        path.unlink()
        total -= size
        freed += size
    return freed


class CachedBackend(Backend):
    """Wraps any backend with the disk cache; a hit returns the payload
    byte-identically and performs no backend call."""

    def __init__(self, inner: Backend, cache_dir):
        self.inner = inner
        self.cache = ResponseCache(cache_dir)

    @property
    def backend_id(self) -> str:
        return self.inner.backend_id

    def complete(self, prompt: str, params: GenerationParams) -> str:
        key = {
            "backend": self.inner.backend_id,
            "op": "complete",
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "seed": params.seed,
        }
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        result = self.inner.complete(prompt, params)
        self.cache.put(key, result)
        return result

    def first_token_probs(self, prompt: str, token_a: str, token_b: str) -> TokenProbPair:
        key = {
            "backend": self.inner.backend_id,
            "op": "first_token_probs",
            "prompt": prompt,
            "tokens": [token_a, token_b],
        }
        cached = self.cache.get(key)
        if cached is not None:
            return TokenProbPair(p_true=cached[0], p_false=cached[1])
        pair = self.inner.first_token_probs(prompt, token_a, token_b)
        self.cache.put(key, [pair.p_true, pair.p_false])
        return pair


# ---------------------------------------------------------------------------
# HTTP chat-completion backend
# ---------------------------------------------------------------------------

class HTTPBackend(Backend):
    """OpenAI-style JSON chat-completion client.

    Retries transport failures and 5xx responses with exponential backoff
    (3 attempts, starting at 1s); other non-2xx responses fail immediately
    with the status and a body excerpt.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = DEFAULT_TIMEOUT_SECONDS,
        max_retries: int = DEFAULT_RETRIES,
        backoff_seconds: float = DEFAULT_BACKOFF_SECONDS,
        top_logprobs: int = 20,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_retries < 1:
            raise ValidationError("max_retries must be >= 1")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.top_logprobs = top_logprobs
        self._sleep = sleep

    @property
    def backend_id(self) -> str:
        return f"http:{self.endpoint}:{self.model}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, payload: dict) -> dict:
        last_error = None
        for attempt in range(1, self.max_retries + 1):
            try:
                response = requests.post(
                    self.endpoint,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
            else:
                if response.status_code >= 500:
                    last_error = f"server error HTTP {response.status_code}"
                elif response.status_code >= 300:
                    raise HTTPStatusError(response.status_code, response.text[:200])
                else:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise BackendError(f"endpoint returned non-JSON body: {exc}") from exc
            logger.warning("backend attempt %d/%d failed: %s", attempt, self.max_retries, last_error)
            if attempt < self.max_retries:
                self._sleep(self.backoff_seconds * (2 ** (attempt - 1)))
        raise TransportError(last_error or "request failed", attempts=self.max_retries)

    def _base_payload(self, prompt: str, params: GenerationParams) -> dict:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        return payload

    def complete(self, prompt: str, params: GenerationParams) -> str:
        if not prompt:
            raise ValidationError("prompt must be non-empty")
        data = self._post(self._base_payload(prompt, params))
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        if content is None:
            raise BackendError("completion response carried no message content")
        return content

    def first_token_probs(self, prompt: str, token_a: str, token_b: str) -> TokenProbPair:
        if token_a == token_b:
            raise ValidationError("candidate tokens must differ")
        payload = self._base_payload(prompt, GenerationParams(max_tokens=1))
        payload["logprobs"] = True
        payload["top_logprobs"] = self.top_logprobs
        data = self._post(payload)
        try:
            logprobs = data["choices"][0]["logprobs"]
        except (KeyError, IndexError, TypeError):
            logprobs = None
        if not logprobs:
            raise CapabilityUnsupported(
                "endpoint response carried no log-probability field; use a "
                "probability-capable endpoint or the simulated backend"
            )
        try:
            candidates = logprobs["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CapabilityUnsupported(f"malformed log-probability payload: {exc}") from exc
        # Case-sensitive match on the first emitted token, ignoring leading
        # whitespace; mass over tokenizer variants (" True", "True") adds up.
        mass = {token_a: 0.0, token_b: 0.0}
        for entry in candidates:
            token = str(entry.get("token", "")).lstrip()
            if token in mass:
                mass[token] += math.exp(float(entry["logprob"]))
        return TokenProbPair(p_true=min(mass[token_a], 1.0), p_false=min(mass[token_b], 1.0))
