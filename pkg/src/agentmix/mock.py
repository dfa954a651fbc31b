"""Deterministic offline backends for tests and demos.

Two interchangeable fakes speak the same scripting language:

* :class:`MockChatClient` replaces the HTTP client in-process and keeps an
  instrumented log of every call (order, concurrency, seeds, timings).
* :class:`MockHttpServer` serves the OpenAI-compatible wire protocol over
  loopback so the real HTTP client path can be exercised end to end.

A :class:`MockScript` decides what the fake model says:

* ``echo`` returns the last user message verbatim.
* ``template`` fills ``{model}``, ``{digest}`` and ``{seed}`` placeholders,
  where the digest is a stable hash of the (role, content) message list.
* ``table`` looks up ``"{model}:{digest}"`` in ``entries`` and fails loudly
  on a miss, so a test never silently runs with an unscripted reply.

The model half of a key is the name sent on the wire (``api_model_name``),
which keeps one script usable against both fakes.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .client import (
    RETRYABLE_STATUS,
    ChatClient,
    ChatMessage,
    ChatRequest,
    _Completion,
    message_digest,
    token_count,
)
from .config import EndpointSpec, ModelSpec
from .errors import (
    ApiError,
    ConfigInvariantError,
    ConfigParseError,
    ScriptedMissError,
    TransportError,
)


class MockScript(BaseModel):
    """Reply policy for the fake backends.

    ``latency_ms`` is simulated service time: the fake sleeps for it and
    reports exactly that figure, so recorded latencies stay deterministic
    while concurrency remains observable on the wall clock.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["echo", "template", "table"] = "template"
    template: str = "{model}:{digest}"
    entries: dict[str, str] = Field(default_factory=dict)
    latency_ms: float = Field(default=0.0, ge=0)


def load_mock_script(path: str | Path) -> MockScript:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"invalid YAML in mock script {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigParseError(f"mock script {path} must be a mapping")
    try:
        return MockScript(**data)
    except ValidationError as exc:
        raise ConfigInvariantError(f"invalid mock script {path}: {exc}") from exc


def render_mock_content(
    script: MockScript,
    model: str,
    messages: list[ChatMessage],
    seed: Optional[int] = None,
) -> str:
    if script.mode == "echo":
        return messages[-1].content
    digest = message_digest(messages)
    if script.mode == "table":
        key = f"{model}:{digest}"
        try:
            return script.entries[key]
        except KeyError:
            raise ScriptedMissError(
                f"mock table has no entry for {key!r} "
                f"(last user message starts: {messages[-1].content[:80]!r})"
            ) from None
    return (
        script.template.replace("{model}", model)
        .replace("{digest}", digest)
        .replace("{seed}", "none" if seed is None else str(seed))
    )


@dataclass(frozen=True)
class MockCall:
    """One successful fake completion, as observed inside the dispatcher."""

    index: int
    model: str
    wire_model: str
    endpoint: str
    messages: tuple[ChatMessage, ...]
    digest: str
    seed: Optional[int]
    temperature: float
    max_tokens: int
    started: float
    ended: float
    in_flight: int


class MockChatClient(ChatClient):
    """In-process fake that records every dispatch for later assertions.

    Failures are scripted per model with :meth:`fail_next`; scripted
    failures are counted in ``dispatch_count`` but never enter ``calls``,
    so the call log reflects completed work only.
    """

    def __init__(self, registry, script: MockScript | None = None, **kwargs):
        super().__init__(registry, **kwargs)
        self.script = script or MockScript()
        self._calls: list[MockCall] = []
        self._failures: dict[str, list[int]] = {}
        self._in_flight: dict[str, int] = {}
        self._max_in_flight: dict[str, int] = {}
        self._dispatches = 0
        self._log_lock = threading.Lock()

    @property
    def calls(self) -> list[MockCall]:
        with self._log_lock:
            return list(self._calls)

    @property
    def call_count(self) -> int:
        with self._log_lock:
            return len(self._calls)

    @property
    def dispatch_count(self) -> int:
        with self._log_lock:
            return self._dispatches

    def calls_for(self, model_id: str) -> list[MockCall]:
        return [call for call in self.calls if call.model == model_id]

    def max_in_flight(self, endpoint_id: str) -> int:
        with self._log_lock:
            return self._max_in_flight.get(endpoint_id, 0)

    def fail_next(self, model_id: str, times: int = 1, status: int = 500) -> None:
        """Make the next ``times`` dispatches for ``model_id`` fail with ``status``."""
        with self._log_lock:
            self._failures.setdefault(model_id, []).extend([status] * times)

    def _pop_failure(self, model_id: str) -> Optional[int]:
        queue = self._failures.get(model_id)
        if queue:
            return queue.pop(0)
        return None

    def _dispatch(
        self, model: ModelSpec, endpoint: EndpointSpec, request: ChatRequest
    ) -> _Completion:
        with self._log_lock:
            self._dispatches += 1
            status = self._pop_failure(model.id)
        if status is not None:
            message = f"scripted failure {status} for {model.id}"
            if status in RETRYABLE_STATUS:
                raise TransportError(message, status=status)
            raise ApiError(message, status=status)

        started = time.monotonic()
        with self._log_lock:
            self._in_flight[endpoint.id] = self._in_flight.get(endpoint.id, 0) + 1
            in_flight = self._in_flight[endpoint.id]
            if in_flight > self._max_in_flight.get(endpoint.id, 0):
                self._max_in_flight[endpoint.id] = in_flight
        try:
            if self.script.latency_ms > 0:
                time.sleep(self.script.latency_ms / 1000.0)
            content = render_mock_content(
                self.script, model.api_model_name, request.messages, request.params.seed
            )
        finally:
            with self._log_lock:
                self._in_flight[endpoint.id] -= 1
        ended = time.monotonic()

        with self._log_lock:
            self._calls.append(
                MockCall(
                    index=len(self._calls),
                    model=model.id,
                    wire_model=model.api_model_name,
                    endpoint=endpoint.id,
                    messages=tuple(request.messages),
                    digest=message_digest(request.messages),
                    seed=request.params.seed,
                    temperature=request.params.temperature,
                    max_tokens=request.params.max_tokens,
                    started=started,
                    ended=ended,
                    in_flight=in_flight,
                )
            )
        return _Completion(
            content=content,
            prompt_tokens=sum(token_count(m.content) for m in request.messages),
            completion_tokens=token_count(content),
            estimated_usage=False,
            latency_ms=self.script.latency_ms,
        )


class MockHttpServer:
    """Loopback OpenAI-compatible server driven by a :class:`MockScript`.

    Useful for exercising the real HTTP client (auth headers, retries,
    usage parsing) without network access. ``include_usage=False`` omits
    the usage block so clients must fall back to estimated token counts.
    """

    def __init__(
        self,
        script: MockScript | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        include_usage: bool = True,
    ):
        self.script = script or MockScript()
        self.include_usage = include_usage
        self._failures: list[int] = []
        self._lock = threading.Lock()
        self.request_count = 0
        self.auth_headers: list[Optional[str]] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def _reply(self, status: int, body: dict) -> None:
                payload = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_POST(self) -> None:
                outer._handle(self)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        host = self._server.server_address[0]
        return f"http://{host}:{self.port}/v1"

    def fail_next(self, times: int = 1, status: int = 500) -> None:
        with self._lock:
            self._failures.extend([status] * times)

    def _pop_failure(self) -> Optional[int]:
        with self._lock:
            if self._failures:
                return self._failures.pop(0)
            return None

    def _handle(self, handler) -> None:
        with self._lock:
            self.request_count += 1
            self.auth_headers.append(handler.headers.get("Authorization"))
        if not handler.path.endswith("/chat/completions"):
            handler._reply(404, {"error": {"message": f"no route {handler.path}"}})
            return
        status = self._pop_failure()
        if status is not None:
            handler._reply(status, {"error": {"message": f"scripted failure {status}"}})
            return
        try:
            length = int(handler.headers.get("Content-Length", "0"))
            payload = json.loads(handler.rfile.read(length))
            model = payload["model"]
            messages = [
                ChatMessage(role=m["role"], content=m["content"])
                for m in payload["messages"]
            ]
            seed = payload.get("seed")
        except (ValueError, LookupError, TypeError, ValidationError) as exc:
            handler._reply(400, {"error": {"message": f"bad request: {exc}"}})
            return
        try:
            content = render_mock_content(self.script, model, messages, seed)
        except ScriptedMissError as exc:
            handler._reply(400, {"error": {"message": str(exc)}})
            return
        if self.script.latency_ms > 0:
            time.sleep(self.script.latency_ms / 1000.0)
        body = {
            "id": "mock-completion",
            "object": "chat.completion",
            "model": model,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": content},
                    "finish_reason": "stop",
                }
            ],
        }
        if self.include_usage:
            prompt_tokens = sum(token_count(m.content) for m in messages)
            completion_tokens = token_count(content)
            body["usage"] = {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens,
            }
        handler._reply(200, body)

    def start(self) -> "MockHttpServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def serve_forever(self) -> None:
        """Run in the foreground until interrupted (used by the CLI)."""
        try:
            self._server.serve_forever()
        finally:
            self._server.server_close()

    def __enter__(self) -> "MockHttpServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()
