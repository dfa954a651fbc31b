"""Uniform chat-completion client with retries, rate limiting, usage capture.

The wire protocol is OpenAI-compatible chat completions:
``POST {base_url}/chat/completions`` with ``model``, ``messages``,
``temperature``, ``max_tokens`` and optional ``seed``; the reply is read
from ``choices[0].message.content`` and ``usage``.

Clients are shareable across threads: per-endpoint concurrency caps and
request-rate limits are enforced internally, so callers may fan out
``complete`` calls freely.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import random
import threading
import time
from collections import deque
from typing import Callable, Literal, Optional

import httpx
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import EndpointSpec, GenerationParams, ModelSpec, Registry
from .errors import (
    ApiError,
    MissingApiKeyError,
    RetriesExhaustedError,
    TransportError,
)

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def token_count(text: str) -> int:
    """Count tokens as maximal non-whitespace runs.

    Used only to estimate usage when a backend does not report it; real
    backends report their own (billed) token counts.
    """
    return len(text.split())


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Literal["system", "user", "assistant"]
    content: str

    @model_validator(mode="after")
    def _content_allowed_empty_only_for_assistant(self) -> "ChatMessage":
        if self.content == "" and self.role != "assistant":
            raise ValueError(f"{self.role} message content must be non-empty")
        return self


class ChatRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    messages: list[ChatMessage] = Field(min_length=1)
    params: GenerationParams = Field(default_factory=GenerationParams)

    @model_validator(mode="after")
    def _last_message_is_user(self) -> "ChatRequest":
        if self.messages[-1].role != "user":
            raise ValueError("last message must have role 'user'")
        return self


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    content: str
    prompt_tokens: int = Field(ge=0)
    completion_tokens: int = Field(ge=0)
    latency_ms: float = Field(ge=0)
    attempts: int = Field(ge=1)
    # True when the backend omitted usage and tokens were estimated with
    # token_count; billed figures should never rely on estimated usage.
    estimated_usage: bool = False


def message_digest(messages: list[ChatMessage]) -> str:
    """Stable 16-hex-char digest of a message list (role + content only).

    This is the key half used by table-mode mock scripts; generation
    parameters are deliberately excluded so scripts key on conversation
    content alone.
    """
    payload = json.dumps(
        [[m.role, m.content] for m in messages],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class RateLimiter:
    """Sliding-window limiter: at most ``limit`` dispatches per window.

    Over any window-sized interval, the number of acquisitions granted never
    exceeds ``limit``. Thread-safe; waiting threads re-check after sleeping.
    """

    def __init__(
        self,
        limit: int,
        window: float = 60.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._times: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._times and self._times[0] <= now - self.window:
                    self._times.popleft()
                if len(self._times) < self.limit:
                    self._times.append(now)
                    return
                wait = self._times[0] + self.window - now
            self._sleep(max(wait, 0.001))


class EndpointThrottle:
    """Per-endpoint concurrency cap plus optional request-rate limit."""

    def __init__(
        self,
        spec: EndpointSpec,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.spec = spec
        self._semaphore = threading.BoundedSemaphore(spec.max_concurrent)
        self._limiter = (
            RateLimiter(spec.requests_per_minute, clock=clock, sleep=sleep)
            if spec.requests_per_minute is not None
            else None
        )

    @contextlib.contextmanager
    def slot(self):
        with self._semaphore:
            if self._limiter is not None:
                self._limiter.acquire()
            yield


class BackoffPolicy(BaseModel):
    """Exponential backoff with full jitter: delay ~ U(0, min(cap, base*factor^k))."""

    model_config = ConfigDict(frozen=True)

    base: float = 0.5
    factor: float = 2.0
    cap: float = 30.0

    def delay(self, attempt: int, rng: random.Random) -> float:
        return rng.uniform(0.0, min(self.cap, self.base * self.factor**attempt))


class _Completion(BaseModel):
    """What a backend dispatch returns; the client shell fills in the rest."""

    content: str
    prompt_tokens: int
    completion_tokens: int
    estimated_usage: bool = False
    # Backends with deterministic (scripted) latency report it here; None
    # means "measure wall time", which the real HTTP backend uses.
    latency_ms: Optional[float] = None


class ChatClient:
    """Shared client shell: model resolution, throttling, retry loop.

    Subclasses implement ``_dispatch`` for one transport attempt and raise
    :class:`TransportError` for transient failures (retried with backoff up
    to the endpoint's ``max_retries``) or :class:`ApiError` for permanent
    ones (propagated immediately).
    """

    def __init__(
        self,
        registry: Registry,
        *,
        backoff: BackoffPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        rng: random.Random | None = None,
    ):
        self.registry = registry
        self._backoff = backoff or BackoffPolicy()
        self._sleep = sleep
        self._clock = clock
        self._rng = rng or random.Random()
        self._throttles: dict[str, EndpointThrottle] = {}
        self._lock = threading.Lock()

    def _throttle(self, endpoint: EndpointSpec) -> EndpointThrottle:
        with self._lock:
            throttle = self._throttles.get(endpoint.id)
            if throttle is None:
                throttle = EndpointThrottle(endpoint, sleep=self._sleep)
                self._throttles[endpoint.id] = throttle
        return throttle

    def complete(self, request: ChatRequest) -> ChatResponse:
        model = self.registry.model_for(request.model)
        endpoint = self.registry.endpoints[model.endpoint]
        attempts = 0
        started = self._clock()
        with self._throttle(endpoint).slot():
            while True:
                attempts += 1
                try:
                    result = self._dispatch(model, endpoint, request)
                    break
                except TransportError as exc:
                    if attempts > endpoint.max_retries:
                        raise RetriesExhaustedError(
                            f"model {model.id!r}: {attempts} attempts failed, "
                            f"last error: {exc}",
                            last_error=exc,
                        ) from exc
                    self._sleep(self._backoff.delay(attempts - 1, self._rng))
        latency = result.latency_ms
        if latency is None:
            latency = (self._clock() - started) * 1000.0
        return ChatResponse(
            content=result.content,
            prompt_tokens=result.prompt_tokens,
            completion_tokens=result.completion_tokens,
            latency_ms=latency,
            attempts=attempts,
            estimated_usage=result.estimated_usage,
        )

    def _dispatch(
        self, model: ModelSpec, endpoint: EndpointSpec, request: ChatRequest
    ) -> _Completion:
        raise NotImplementedError


class HttpChatClient(ChatClient):
    """Client for real OpenAI-compatible HTTP endpoints."""

    def __init__(self, registry: Registry, **kwargs):
        super().__init__(registry, **kwargs)
        self._http_clients: dict[str, httpx.Client] = {}

    def _http(self, endpoint: EndpointSpec) -> httpx.Client:
        with self._lock:
            client = self._http_clients.get(endpoint.id)
            if client is None:
                client = httpx.Client(
                    base_url=endpoint.base_url.rstrip("/"),
                    timeout=endpoint.timeout,
                )
                self._http_clients[endpoint.id] = client
        return client

    def _auth_headers(self, endpoint: EndpointSpec) -> dict[str, str]:
        if not endpoint.api_key_env:
            return {}
        key = os.environ.get(endpoint.api_key_env)
        if key is None:
            raise MissingApiKeyError(
                f"endpoint {endpoint.id!r}: environment variable "
                f"{endpoint.api_key_env!r} is not set"
            )
        return {"Authorization": f"Bearer {key}"}

    def _dispatch(
        self, model: ModelSpec, endpoint: EndpointSpec, request: ChatRequest
    ) -> _Completion:
        payload: dict = {
            "model": model.api_model_name,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        }
        if request.params.seed is not None:
            payload["seed"] = request.params.seed
        try:
            response = self._http(endpoint).post(
                "/chat/completions", json=payload, headers=self._auth_headers(endpoint)
            )
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout talking to {endpoint.id}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"transport failure to {endpoint.id}: {exc}") from exc

        if response.status_code in RETRYABLE_STATUS:
            raise TransportError(
                f"HTTP {response.status_code} from {endpoint.id}",
                status=response.status_code,
            )
        if response.status_code != 200:
            raise ApiError(
                f"HTTP {response.status_code} from {endpoint.id}: "
                f"{response.text[:200]}",
                status=response.status_code,
            )
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise ApiError(f"malformed response from {endpoint.id}: {exc}") from exc

        usage = body.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        completion_tokens = usage.get("completion_tokens")
        estimated = prompt_tokens is None or completion_tokens is None
        if prompt_tokens is None:
            prompt_tokens = sum(token_count(m.content) for m in request.messages)
        if completion_tokens is None:
            completion_tokens = token_count(content)
        return _Completion(
            content=content,
            prompt_tokens=int(prompt_tokens),
            completion_tokens=int(completion_tokens),
            estimated_usage=estimated,
        )
