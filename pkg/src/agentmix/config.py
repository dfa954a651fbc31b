"""Declarative configuration: endpoints, models, and pipeline topologies.

A config document is a single YAML file with top-level sections
``endpoints``, ``models``, ``pipelines`` and a required ``schema: 1``
version field. Specs are immutable after loading and safe to share across
concurrent pipeline executions.

Validation is total: :func:`load_config` either returns a fully resolved
:class:`Registry` or raises a :class:`~agentmix.errors.ConfigError`
subclass; it never partially succeeds.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigInvariantError, ConfigParseError, ConfigReferenceError
from .templates import AggregationTemplate

SCHEMA_VERSION = 1


class EndpointSpec(BaseModel):
    """An OpenAI-compatible chat-completions endpoint and its limits."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    base_url: str
    api_key_env: str = ""
    max_concurrent: int = Field(default=8, ge=1)
    # None means unlimited.
    requests_per_minute: Optional[int] = Field(default=None, gt=0)
    timeout: float = Field(default=120.0, gt=0)
    max_retries: int = Field(default=3, ge=0)


class ModelSpec(BaseModel):
    """A model reachable through an endpoint, plus optional accounting data.

    ``price_in``/``price_out`` are USD per 1e6 prompt/completion tokens.
    ``active_params`` is the number of parameters active per token; for
    MoE-style models supply the activated-expert size, not the total.
    Pipelines run fine without any of these; accounting operations error
    only when asked for a quantity whose inputs are missing.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    endpoint: str
    api_model_name: str
    active_params: Optional[float] = Field(default=None, gt=0)
    price_in: Optional[float] = Field(default=None, ge=0)
    price_out: Optional[float] = Field(default=None, ge=0)

    def has_prices(self) -> bool:
        return self.price_in is not None and self.price_out is not None


class GenerationParams(BaseModel):
    """Sampling parameters sent with each chat-completion request."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    temperature: float = Field(default=0.7, ge=0, allow_inf_nan=False)
    max_tokens: int = Field(default=2048, ge=1)
    seed: Optional[int] = None


class LayerSpec(BaseModel):
    """One pipeline stage: an ordered list of agent model ids.

    Duplicate ids are allowed; a layer listing the same model n times is the
    single-proposer setting (the model is sampled n times, so a nonzero
    temperature and per-agent seed derivation keep the outputs distinct).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    agents: list[str] = Field(min_length=1)
    params: GenerationParams = Field(default_factory=GenerationParams)


class PipelineSpec(BaseModel):
    """An ordered stack of layers ending in a single final aggregator.

    Layer 1 agents answer the instruction directly; every later layer's
    agents receive the previous layer's outputs wrapped in the aggregation
    prompt. The last layer must contain exactly one agent, whose output is
    the pipeline's final answer (enforced by :func:`validate_registry`, not
    at construction time, so invalid documents can be represented while
    being rejected).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    layers: list[LayerSpec] = Field(min_length=1)
    aggregate_template: AggregationTemplate = Field(default_factory=AggregationTemplate)
    # Where the aggregation block goes: as a system message with the original
    # instruction as the user message (default), or concatenated into a
    # single user message.
    aggregate_placement: Literal["system", "user"] = "system"

    def calls_per_input(self) -> int:
        """Total model calls issued for one input: sum of layer widths."""
        return sum(len(layer.agents) for layer in self.layers)


class Registry(BaseModel):
    """All specs from one config document, keyed by id, fully cross-resolved."""

    model_config = ConfigDict(frozen=True)

    endpoints: dict[str, EndpointSpec] = Field(default_factory=dict)
    models: dict[str, ModelSpec] = Field(default_factory=dict)
    pipelines: dict[str, PipelineSpec] = Field(default_factory=dict)

    def model_for(self, model_id: str) -> ModelSpec:
        try:
            return self.models[model_id]
        except KeyError:
            raise ConfigReferenceError(f"unknown model id: {model_id!r}") from None

    def endpoint_for(self, model_id: str) -> EndpointSpec:
        return self.endpoints[self.model_for(model_id).endpoint]

    def pipeline(self, pipeline_id: str) -> PipelineSpec:
        try:
            return self.pipelines[pipeline_id]
        except KeyError:
            known = ", ".join(sorted(self.pipelines))
            raise ConfigReferenceError(
                f"unknown pipeline id: {pipeline_id!r} (known: {known})"
            ) from None

    def digest(self) -> str:
        """Stable content digest of the whole registry (16 hex chars)."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _collect(section: object, cls: type[BaseModel], name: str) -> dict:
    """Build an id-keyed dict from a config section, checking uniqueness."""
    if section is None:
        return {}
    if not isinstance(section, list):
        raise ConfigParseError(f"section {name!r} must be a list")
    out: dict[str, BaseModel] = {}
    for i, raw in enumerate(section):
        if not isinstance(raw, dict):
            raise ConfigParseError(f"{name}[{i}] must be a mapping")
        try:
            spec = cls.model_validate(raw)
        except ValidationError as exc:
            fields = "; ".join(
                f"{name}[{i}].{'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
                for err in exc.errors()
            )
            raise ConfigInvariantError(fields) from None
        if spec.id in out:
            raise ConfigInvariantError(f"duplicate {name} id: {spec.id!r}")
        out[spec.id] = spec
    return out


def validate_registry(registry: Registry) -> None:
    """Check cross-references and structural invariants; raise on violation."""
    for model in registry.models.values():
        if model.endpoint not in registry.endpoints:
            raise ConfigReferenceError(
                f"model {model.id!r} references unknown endpoint {model.endpoint!r}"
            )
    for pipeline in registry.pipelines.values():
        if len(pipeline.layers[-1].agents) != 1:
            raise ConfigInvariantError(
                f"pipeline {pipeline.id!r}: final layer must contain exactly one "
                f"agent, got {len(pipeline.layers[-1].agents)}"
            )
        for li, layer in enumerate(pipeline.layers, start=1):
            for agent in layer.agents:
                if agent not in registry.models:
                    raise ConfigReferenceError(
                        f"pipeline {pipeline.id!r} layer {li} references "
                        f"unknown model {agent!r}"
                    )


def loads_config(text: str) -> Registry:
    """Parse and validate a config document from a string."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigParseError("config root must be a mapping")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigParseError(
            f"config must declare 'schema: {SCHEMA_VERSION}', got {doc.get('schema')!r}"
        )
    unknown = set(doc) - {"schema", "endpoints", "models", "pipelines"}
    if unknown:
        raise ConfigParseError(f"unknown top-level sections: {sorted(unknown)}")
    registry = Registry(
        endpoints=_collect(doc.get("endpoints"), EndpointSpec, "endpoints"),
        models=_collect(doc.get("models"), ModelSpec, "models"),
        pipelines=_collect(doc.get("pipelines"), PipelineSpec, "pipelines"),
    )
    validate_registry(registry)
    return registry


def load_config(path: str | Path) -> Registry:
    """Load and validate a config document from a file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from None
    return loads_config(text)


def dump_config(registry: Registry) -> str:
    """Serialize a registry back to config-document YAML (round-trips)."""
    doc = {
        "schema": SCHEMA_VERSION,
        "endpoints": [e.model_dump(mode="json") for e in registry.endpoints.values()],
        "models": [m.model_dump(mode="json") for m in registry.models.values()],
        "pipelines": [p.model_dump(mode="json") for p in registry.pipelines.values()],
    }
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)


# --- built-in roster ----------------------------------------------------------

# The six stock proposers: (model id, wire name, active params, USD per 1e6
# prompt tokens, USD per 1e6 completion tokens). MoE entries use the
# activated-expert parameter count; all sizes and prices for hosted models
# are provider-published figures or community estimates, recorded here only
# so the example configs can produce cost/compute reports out of the box.
_STOCK_MODELS: list[tuple[str, str, float, float, float]] = [
    ("qwen1.5-110b-chat", "Qwen/Qwen1.5-110B-Chat", 110e9, 1.8, 1.8),
    ("qwen1.5-72b-chat", "Qwen/Qwen1.5-72B-Chat", 72e9, 0.9, 0.9),
    ("wizardlm-2-8x22b", "microsoft/WizardLM-2-8x22B", 39e9, 1.2, 1.2),
    ("llama-3-70b-instruct", "meta-llama/Llama-3-70b-chat-hf", 70e9, 0.9, 0.9),
    ("mixtral-8x22b-instruct", "mistralai/Mixtral-8x22B-Instruct-v0.1", 39e9, 1.2, 1.2),
    ("dbrx-instruct", "databricks/dbrx-instruct", 36e9, 1.2, 1.2),
]

PROPOSER_IDS = [m[0] for m in _STOCK_MODELS]

_DEFAULT_PARAMS = GenerationParams(temperature=0.7, max_tokens=2048)


def builtin_registry() -> Registry:
    """The shipped default configuration: six proposers on one endpoint.

    Pipelines:
      * ``moa``: two proposer layers of all six models, final aggregator
        qwen1.5-110b-chat (3 layers, 13 calls per input).
      * ``moa-lite``: one proposer layer of the six, final aggregator
        qwen1.5-72b-chat (2 layers, 7 calls per input).
    """
    endpoint = EndpointSpec(
        id="together",
        base_url="https://api.together.xyz/v1",
        api_key_env="TOGETHER_API_KEY",
        max_concurrent=8,
        timeout=120.0,
        max_retries=3,
    )
    models = {
        mid: ModelSpec(
            id=mid,
            endpoint="together",
            api_model_name=wire,
            active_params=params,
            price_in=pin,
            price_out=pout,
        )
        for mid, wire, params, pin, pout in _STOCK_MODELS
    }
    proposer_layer = LayerSpec(agents=list(PROPOSER_IDS), params=_DEFAULT_PARAMS)
    pipelines = {
        "moa": PipelineSpec(
            id="moa",
            layers=[
                proposer_layer,
                proposer_layer,
                LayerSpec(agents=["qwen1.5-110b-chat"], params=_DEFAULT_PARAMS),
            ],
        ),
        "moa-lite": PipelineSpec(
            id="moa-lite",
            layers=[
                proposer_layer,
                LayerSpec(agents=["qwen1.5-72b-chat"], params=_DEFAULT_PARAMS),
            ],
        ),
    }
    registry = Registry(endpoints={"together": endpoint}, models=models, pipelines=pipelines)
    validate_registry(registry)
    return registry


def builtin_pipelines() -> dict[str, PipelineSpec]:
    """The shipped pipelines, keyed by id (at least ``moa`` and ``moa-lite``)."""
    return dict(builtin_registry().pipelines)
