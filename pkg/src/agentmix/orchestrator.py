"""Layered propose-and-fuse orchestration.

A pipeline runs its layers strictly in sequence. Within a layer every agent
receives the same messages and runs concurrently (one thread per agent);
outputs are kept in agent order regardless of completion order. From the
second layer on, the previous layer's outputs are folded into a fusion
prompt alongside the original instruction, and the final layer has exactly
one agent whose reply is the pipeline's answer.

Also here: the single-call ranker that asks a model to pick the best of
several candidate answers, with shuffled presentation order so position
bias cannot systematically favour one source.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .accounting import cost_micro_usd, micro_to_usd
from .client import ChatClient, ChatMessage, ChatRequest
from .config import GenerationParams, LayerSpec, PipelineSpec
from .errors import AgentMixError, LayerExecutionError, UnparseableChoiceError
from .templates import AggregationTemplate, RankerTemplate


class GenerationRecord(BaseModel):
    """One completed model call inside a pipeline run."""

    model_config = ConfigDict(frozen=True)

    model: str
    layer_index: int = Field(ge=1)
    agent_index: int = Field(ge=0)
    messages: list[ChatMessage]
    content: str
    prompt_tokens: int = Field(ge=0)
    completion_tokens: int = Field(ge=0)
    latency_ms: float = Field(ge=0)
    attempts: int = Field(default=1, ge=1)
    cost_micro_usd: Optional[int] = None
    estimated_usage: bool = False

    @property
    def cost(self) -> Optional[float]:
        return None if self.cost_micro_usd is None else micro_to_usd(self.cost_micro_usd)


class LayerOutput(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer_index: int = Field(ge=1)
    records: list[GenerationRecord] = Field(min_length=1)


class PipelineResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    instruction: str
    layers: list[LayerOutput] = Field(min_length=1)
    final: str
    # True when allow_partial dropped at least one failed agent on the way.
    degraded: bool = False

    @model_validator(mode="after")
    def _final_matches_last_layer(self) -> "PipelineResult":
        last = self.layers[-1].records
        if len(last) != 1:
            raise ValueError(f"final layer must hold exactly one record, got {len(last)}")
        if self.final != last[0].content:
            raise ValueError("final text does not match the last layer's output")
        return self


def assemble_aggregate_messages(
    template: AggregationTemplate,
    instruction: str,
    responses: Sequence[str],
    placement: Literal["system", "user"] = "system",
) -> list[ChatMessage]:
    """Messages for a fusion call: prior responses plus the instruction.

    ``system`` placement sends the fusion block as the system message with
    the instruction as the user turn; ``user`` placement concatenates both
    into a single user turn for models that ignore system prompts.
    """
    block = template.render_system(responses)
    if placement == "system":
        return [
            ChatMessage(role="system", content=block),
            ChatMessage(role="user", content=instruction),
        ]
    return [ChatMessage(role="user", content=block + "\n\n" + instruction)]


def _derived_params(params: GenerationParams, agent_index: int) -> GenerationParams:
    if params.seed is None:
        return params
    return params.model_copy(update={"seed": params.seed + agent_index})


def run_layer(
    client: ChatClient,
    layer: LayerSpec,
    messages: list[ChatMessage],
    layer_index: int,
    allow_partial: bool = False,
) -> LayerOutput:
    """Run every agent in ``layer`` concurrently against ``messages``.

    When a base seed is configured, agent ``i`` gets ``seed + i`` so equal
    models in one layer still make distinguishable calls. On failure the
    whole layer fails, unless ``allow_partial`` is set and at least one
    agent succeeded, in which case failed agents are dropped.
    """
    registry = client.registry

    def call(agent_index: int, model_id: str) -> GenerationRecord:
        request = ChatRequest(
            model=model_id,
            messages=messages,
            params=_derived_params(layer.params, agent_index),
        )
        response = client.complete(request)
        model = registry.model_for(model_id)
        cost = (
            cost_micro_usd(
                response.prompt_tokens,
                response.completion_tokens,
                model.price_in,
                model.price_out,
            )
            if model.has_prices()
            else None
        )
        return GenerationRecord(
            model=model_id,
            layer_index=layer_index,
            agent_index=agent_index,
            messages=messages,
            content=response.content,
            prompt_tokens=response.prompt_tokens,
            completion_tokens=response.completion_tokens,
            latency_ms=response.latency_ms,
            attempts=response.attempts,
            cost_micro_usd=cost,
            estimated_usage=response.estimated_usage,
        )

    with ThreadPoolExecutor(max_workers=len(layer.agents)) as pool:
        futures = [
            pool.submit(call, i, model_id) for i, model_id in enumerate(layer.agents)
        ]
        outcomes: list[GenerationRecord | Exception] = []
        for future in futures:
            try:
                outcomes.append(future.result())
            except AgentMixError as exc:
                outcomes.append(exc)

    records = [o for o in outcomes if isinstance(o, GenerationRecord)]
    failures = [
        (i, layer.agents[i], o)
        for i, o in enumerate(outcomes)
        if isinstance(o, Exception)
    ]
    if failures and (not allow_partial or not records):
        agent_index, model_id, cause = failures[0]
        raise LayerExecutionError(
            f"layer {layer_index} agent {agent_index} ({model_id}) failed: {cause}",
            layer_index=layer_index,
            model=model_id,
            agent_index=agent_index,
        ) from cause
    return LayerOutput(layer_index=layer_index, records=records)


def run_pipeline(
    client: ChatClient,
    pipeline: PipelineSpec,
    instruction: str,
    on_layer: Optional[Callable[[LayerOutput], None]] = None,
    allow_partial: bool = False,
) -> PipelineResult:
    """Run one instruction through all layers of ``pipeline``.

    ``on_layer`` fires after each layer completes, in order, for streaming
    persistence. The result's ``degraded`` flag records whether any layer
    ran with fewer agents than configured.
    """
    if not instruction:
        raise ValueError("instruction must be non-empty")
    layers: list[LayerOutput] = []
    degraded = False
    for layer_index, layer in enumerate(pipeline.layers, start=1):
        if layer_index == 1:
            messages = [ChatMessage(role="user", content=instruction)]
        else:
            responses = [record.content for record in layers[-1].records]
            messages = assemble_aggregate_messages(
                pipeline.aggregate_template,
                instruction,
                responses,
                pipeline.aggregate_placement,
            )
        output = run_layer(
            client, layer, messages, layer_index, allow_partial=allow_partial
        )
        if len(output.records) < len(layer.agents):
            degraded = True
        layers.append(output)
        if on_layer is not None:
            on_layer(output)
    return PipelineResult(
        instruction=instruction,
        layers=layers,
        final=layers[-1].records[0].content,
        degraded=degraded,
    )


def presentation_order(n: int, rng_seed: int) -> list[int]:
    """Seeded shuffle: slot ``s`` shows the candidate ``order[s]``."""
    return random.Random(rng_seed).sample(range(n), n)


def assemble_ranker_messages(
    template: RankerTemplate,
    instruction: str,
    outputs: Sequence[tuple[str, str]],
) -> list[ChatMessage]:
    """Single user message asking for the best of the labelled outputs."""
    if len(outputs) < 2:
        raise ValueError("ranking needs at least two candidate outputs")
    identifiers = [identifier for identifier, _ in outputs]
    if len(set(identifiers)) != len(identifiers):
        raise ValueError(f"duplicate model identifiers: {identifiers}")
    return [ChatMessage(role="user", content=template.render(instruction, outputs))]


class RankDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    # Index of the winner in the caller's candidate list.
    winner_index: int = Field(ge=0)
    # The model's reply, unprocessed (the parsed identifier is its strip()).
    raw_choice: str
    # order[s] = candidate shown in presentation slot s.
    order: list[int]


DEFAULT_RANKER_PARAMS = GenerationParams(temperature=0.0, max_tokens=100)


def rank_and_select(
    client: ChatClient,
    ranker_model: str,
    instruction: str,
    candidates: Sequence[str],
    rng_seed: int = 0,
    params: GenerationParams = DEFAULT_RANKER_PARAMS,
    template: RankerTemplate | None = None,
) -> RankDecision:
    """Ask ``ranker_model`` to pick the best candidate answer.

    Candidates are shown in a seed-shuffled order under anonymous labels
    m1..mn, so neither source identity nor original position leaks to the
    ranker. The reply must be exactly one of the labels after stripping
    whitespace; anything else raises :class:`UnparseableChoiceError`.
    """
    order = presentation_order(len(candidates), rng_seed)
    labelled = [
        (f"m{slot + 1}", candidates[original]) for slot, original in enumerate(order)
    ]
    messages = assemble_ranker_messages(
        template or RankerTemplate(), instruction, labelled
    )
    response = client.complete(
        ChatRequest(model=ranker_model, messages=messages, params=params)
    )
    choice = response.content.strip()
    identifiers = [identifier for identifier, _ in labelled]
    if choice not in identifiers:
        raise UnparseableChoiceError(
            f"ranker reply is not a model identifier: {response.content!r}",
            raw=response.content,
        )
    winner_slot = identifiers.index(choice)
    return RankDecision(
        winner_index=order[winner_slot], raw_choice=response.content, order=order
    )
