"""Shared test fixtures: problem factories, backend wrappers, a stub HTTP server."""
from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Sequence

import pytest

from stepverify.backends import SamplingParams, ScriptedBackend, VerifierBackend
from stepverify.core import Source, StepSolution, TokenUsage
from stepverify.prompts import RenderedPrompt


def make_problem(
    *,
    id: str = "p-1",
    source: Source = Source.GSM8K,
    n_steps: int = 6,
    label: int = 2,
    problem: str = "What is 2 + 2?",
) -> StepSolution:
    return StepSolution(
        id=id,
        source=source,
        problem=problem,
        steps=tuple(f"step {i}" for i in range(n_steps)),
        label=label,
    )


def boxed(location: int) -> str:
    return f"The earliest issue is \\boxed{{{location}}}."


def scripted(plan: Mapping[int, Sequence[int | str]]) -> ScriptedBackend:
    """Build a ScriptedBackend from per-agent lists of locations or raw texts."""
    scripts = {
        agent: [entry if isinstance(entry, str) else boxed(entry) for entry in entries]
        for agent, entries in plan.items()
    }
    return ScriptedBackend(scripts)


class CountingBackend(VerifierBackend):
    """Counts generate() calls, then delegates to the wrapped backend."""

    def __init__(self, inner: VerifierBackend) -> None:
        self._inner = inner
        self.model = inner.model
        self.calls = 0
        self._lock = threading.Lock()

    def generate(
        self, prompt: RenderedPrompt, params: SamplingParams, agent_id: int, round: int
    ) -> tuple[str, TokenUsage]:
        with self._lock:
            self.calls += 1
        return self._inner.generate(prompt, params, agent_id, round)


class RecordingBackend(VerifierBackend):
    """Keeps every prompt it sees, for content audits."""

    def __init__(self, inner: VerifierBackend) -> None:
        self._inner = inner
        self.model = inner.model
        self.seen: list[tuple[int, int, RenderedPrompt]] = []
        self._lock = threading.Lock()

    def generate(
        self, prompt: RenderedPrompt, params: SamplingParams, agent_id: int, round: int
    ) -> tuple[str, TokenUsage]:
        with self._lock:
            self.seen.append((agent_id, round, prompt))
        return self._inner.generate(prompt, params, agent_id, round)


# ---------------------------------------------------------------------------
# Stub chat-completions server
# ---------------------------------------------------------------------------

DEFAULT_STUB_TEXT = "All steps check out. \\boxed{-1}"
STUB_USAGE = {"prompt_tokens": 17, "completion_tokens": 9}


def completion_payload(text: str) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": dict(STUB_USAGE),
    }


class _StubState:
    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.requests = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.bodies: list[dict] = []
        self.auth_headers: list[str | None] = []
        # Each entry is ("status", code) | ("raw", text) | ("ok", text-or-None),
        # consumed one per request; an empty plan answers with the default text.
        self.plan: list[tuple[str, object]] = []
        self.default_text = DEFAULT_STUB_TEXT
        self.delay = 0.0


class StubServer:
    """Minimal OpenAI-compatible endpoint with scriptable failures.

    Tracks total requests and the peak number of concurrent in-flight
    requests, so tests can assert both zero-call replays and in-flight caps.
    """

    def __init__(self) -> None:
        self.state = _StubState()
        state = self.state

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with state.lock:
                    state.requests += 1
                    state.in_flight += 1
                    state.max_in_flight = max(state.max_in_flight, state.in_flight)
                    state.bodies.append(json.loads(raw))
                    state.auth_headers.append(self.headers.get("Authorization"))
                    directive = state.plan.pop(0) if state.plan else ("ok", None)
                try:
                    if state.delay:
                        time.sleep(state.delay)
                    kind, payload = directive
                    if kind == "status":
                        body = b"{}"
                        self.send_response(int(payload))  # type: ignore[arg-type]
                    elif kind == "raw":
                        body = str(payload).encode("utf-8")
                        self.send_response(200)
                    else:
                        text = state.default_text if payload is None else str(payload)
                        body = json.dumps(completion_payload(text)).encode("utf-8")
                        self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                finally:
                    with state.lock:
                        state.in_flight -= 1

            def log_message(self, fmt: str, *args: object) -> None:
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()
