"""Shared test utilities."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from agentmix.client import ChatClient, ChatRequest, _Completion, token_count
from agentmix.config import EndpointSpec, ModelSpec


class ScriptedClient(ChatClient):
    """Client whose replies come from a plain function, for surgical tests."""

    def __init__(self, registry, reply: Callable[[ModelSpec, ChatRequest], str], **kwargs):
        super().__init__(registry, **kwargs)
        self._reply = reply
        self.requests: list[ChatRequest] = []

    def _dispatch(
        self, model: ModelSpec, endpoint: EndpointSpec, request: ChatRequest
    ) -> _Completion:
        self.requests.append(request)
        content = self._reply(model, request)
        return _Completion(
            content=content,
            prompt_tokens=sum(token_count(m.content) for m in request.messages),
            completion_tokens=token_count(content),
            estimated_usage=False,
            latency_ms=0.0,
        )


def write_dataset(path: Path, instructions: list[str]) -> Path:
    rows = [{"instruction": text} for text in instructions]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path
