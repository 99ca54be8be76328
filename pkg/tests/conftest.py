import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from factctl.backend import Backend, TokenProbPair
from factctl.simworld import generate_world

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name):
    return (FIXTURES / name).read_text(encoding="utf-8")


class StubBackend(Backend):
    """Canned backend for unit tests: replies chosen by prompt substring."""

    def __init__(self, replies=None, default_reply="", probes=None, default_probe=(0.5, 0.5)):
        self.replies = replies or {}
        self.default_reply = default_reply
        self.probes = probes or {}
        self.default_probe = default_probe
        self.prompts = []
        self.probe_prompts = []

    @property
    def backend_id(self):
        return "stub"

    def complete(self, prompt, params):
        self.prompts.append(prompt)
        for needle, reply in self.replies.items():
            if needle in prompt:
                return reply
        return self.default_reply

    def first_token_probs(self, prompt, token_a, token_b):
        self.probe_prompts.append(prompt)
        for needle, pair in self.probes.items():
            if needle in prompt:
                return TokenProbPair(p_true=pair[0], p_false=pair[1])
        return TokenProbPair(p_true=self.default_probe[0], p_false=self.default_probe[1])


class CountingBackend(Backend):
    """Wraps another backend and counts the calls that reach it."""

    def __init__(self, inner):
        self.inner = inner
        self.complete_calls = 0
        self.probe_calls = 0

    @property
    def backend_id(self):
        return self.inner.backend_id

    def complete(self, prompt, params):
        self.complete_calls += 1
        return self.inner.complete(prompt, params)

    def first_token_probs(self, prompt, token_a, token_b):
        self.probe_calls += 1
        return self.inner.first_token_probs(prompt, token_a, token_b)


class _ScriptedHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(payload)
        if self.server.script:
            status, body = self.server.script.pop(0)
        else:
            status, body = self.server.fallback
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class ScriptedServer:
    """Local HTTP server that replays a scripted list of (status, body)."""

    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
        self.server.script = []
        self.server.fallback = (200, "{}")
        self.server.requests = []
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    @property
    def requests(self):
        return self.server.requests

    def enqueue(self, status, body):
        self.server.script.append((status, body))

    def set_fallback(self, status, body):
        self.server.fallback = (status, body)

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def scripted_server():
    server = ScriptedServer()
    yield server
    server.close()


@pytest.fixture
def small_world():
    return generate_world(
        seed=0, n_entities=6, facts_per_entity=6, false_fraction=0.3, beta=100.0
    )


@pytest.fixture
def flat_world():
    """Uninformative-confidence regime: every probe returns 0.5."""
    return generate_world(
        seed=0, n_entities=6, facts_per_entity=6, false_fraction=0.3, beta=0.0
    )
