"""Structured exception types shared across the package.

Everything raised on purpose derives from :class:`AgentMixError`, so the CLI
can convert any domain failure into a nonzero exit with a single message.
Genuine caller mistakes (violated preconditions) raise plain ``ValueError``.
"""

from __future__ import annotations


class AgentMixError(Exception):
    """Base class for all structured errors raised by agentmix."""


# --- configuration -----------------------------------------------------------


class ConfigError(AgentMixError):
    """Base class for configuration document errors."""


class ConfigParseError(ConfigError):
    """The config document could not be read or parsed at all."""


class ConfigReferenceError(ConfigError):
    """A cross-reference (model id, endpoint id) does not resolve."""


class ConfigInvariantError(ConfigError):
    """A field value violates a declared invariant."""


# --- model client ------------------------------------------------------------


class ClientError(AgentMixError):
    """Base class for chat-completion client errors."""


class TransportError(ClientError):
    """Transient failure (HTTP 429/5xx, timeout, connection error); retryable."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ApiError(ClientError):
    """Non-retryable API rejection (4xx other than 429)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class RetriesExhaustedError(ClientError):
    """All retry attempts failed; carries the last transport error."""

    def __init__(self, message: str, last_error: Exception):
        super().__init__(message)
        self.last_error = last_error


class ScriptedMissError(ClientError):
    """Table-mode mock backend received a request it has no entry for."""


class MissingApiKeyError(ClientError):
    """The environment variable named by the endpoint is not set."""


# --- orchestrator ------------------------------------------------------------


class LayerExecutionError(AgentMixError):
    """An agent call inside a layer failed after retries."""

    def __init__(self, message: str, *, layer_index: int, model: str, agent_index: int):
        super().__init__(message)
        self.layer_index = layer_index
        self.model = model
        self.agent_index = agent_index


class UnparseableChoiceError(AgentMixError):
    """The ranker reply is not exactly one known identifier after trimming."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


# --- accounting --------------------------------------------------------------


class MissingPriceError(AgentMixError):
    """Asked for a cost, but the model has no configured prices."""


class MissingParamsError(AgentMixError):
    """Asked for a compute estimate, but the model has no active_params."""

    def __init__(self, message: str, model: str | None = None):
        super().__init__(message)
        self.model = model


# --- harness -----------------------------------------------------------------


class DatasetError(AgentMixError):
    """Dataset file is malformed or contains duplicate sample ids."""


class ExportError(AgentMixError):
    """Export requested but there is nothing exportable."""


class HarnessError(AgentMixError):
    """Run-level harness failure (bad run dir, mismatched digests, ...)."""
