"""Cost and compute accounting.

Money is handled in integer micro-USD. Per-million-token prices are exactly
micro-USD per token, so a call's cost is an exact integer and sums over any
number of records are associative and reproducible; floats appear only at
the display edge.

Compute is measured in TFLOPs with the standard 2 * parameters * tokens
estimate for decoder inference. A pipeline's latency-weighted figure sums,
over layers, the most expensive call in that layer, since calls within a
layer run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .config import Registry
from .errors import MissingParamsError, MissingPriceError

_MICRO = Decimal("1")


def cost_micro_usd(
    prompt_tokens: int,
    completion_tokens: int,
    price_in: float,
    price_out: float,
) -> int:
    """Exact cost in micro-USD for one call.

    ``price_in`` and ``price_out`` are USD per million tokens. Prices go
    through ``Decimal(str(...))`` so 0.9 means ninety cents, not the
    nearest binary float; the final figure rounds half-even to an integer.
    """
    if prompt_tokens < 0 or completion_tokens < 0:
        raise ValueError("token counts must be non-negative")
    total = (
        Decimal(str(price_in)) * prompt_tokens
        + Decimal(str(price_out)) * completion_tokens
    )
    return int(total.quantize(_MICRO, rounding=ROUND_HALF_EVEN))


def micro_to_usd(micro: int) -> float:
    return micro / 1_000_000


def record_cost(
    prompt_tokens: int,
    completion_tokens: int,
    price_in: float,
    price_out: float,
) -> float:
    """Cost of one call in USD (display form of :func:`cost_micro_usd`)."""
    return micro_to_usd(
        cost_micro_usd(prompt_tokens, completion_tokens, price_in, price_out)
    )


def record_tflops(active_params: float, prompt_tokens: int, completion_tokens: int) -> float:
    """Inference compute estimate: 2 * active parameters * tokens, in TFLOPs."""
    if active_params <= 0:
        raise ValueError("active_params must be positive")
    return 2.0 * active_params * (prompt_tokens + completion_tokens) / 1e12


def pipeline_tflops(result, registry: Registry) -> float:
    """Latency-weighted compute for one pipeline run.

    ``result`` is a pipeline result with ``layers[*].records``; each layer
    contributes its single most expensive call. Raises
    :class:`MissingParamsError` naming the first model without a parameter
    count.
    """
    total = 0.0
    for layer in result.layers:
        worst = 0.0
        for record in layer.records:
            model = registry.model_for(record.model)
            if model.active_params is None:
                raise MissingParamsError(
                    f"model {model.id!r} has no active_params; "
                    "cannot compute tflops",
                    model=model.id,
                )
            worst = max(
                worst,
                record_tflops(
                    model.active_params, record.prompt_tokens, record.completion_tokens
                ),
            )
        total += worst
    return total


@dataclass
class TokenTally:
    """Mutable accumulator over generation records."""

    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost_micro_usd: int = 0
    unpriced_calls: int = 0

    def add(self, record) -> None:
        self.calls += 1
        self.prompt_tokens += record.prompt_tokens
        self.completion_tokens += record.completion_tokens
        if record.cost_micro_usd is None:
            self.unpriced_calls += 1
        else:
            self.cost_micro_usd += record.cost_micro_usd

    @property
    def cost_usd(self) -> float:
        return micro_to_usd(self.cost_micro_usd)


@dataclass
class UsageSummary:
    total: TokenTally = field(default_factory=TokenTally)
    per_layer: dict[int, TokenTally] = field(default_factory=dict)
    per_model: dict[str, TokenTally] = field(default_factory=dict)


def summarize_usage(records: Iterable) -> UsageSummary:
    """Aggregate records carrying model / layer_index / token / cost fields."""
    summary = UsageSummary()
    for record in records:
        summary.total.add(record)
        summary.per_layer.setdefault(record.layer_index, TokenTally()).add(record)
        summary.per_model.setdefault(record.model, TokenTally()).add(record)
    return summary


def require_prices(registry: Registry, model_id: str) -> tuple[float, float]:
    """Prices for a model, raising :class:`MissingPriceError` if absent."""
    model = registry.model_for(model_id)
    if not model.has_prices():
        raise MissingPriceError(f"model {model_id!r} has no prices configured")
    return model.price_in, model.price_out


class ParetoPoint(BaseModel):
    """One labelled (expense, quality) observation for frontier analysis."""

    model_config = ConfigDict(frozen=True)

    label: str = Field(min_length=1)
    expense: float = Field(ge=0, allow_inf_nan=False)
    quality: float = Field(allow_inf_nan=False)


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """True when ``a`` is at least as good on both axes and better on one."""
    return (
        a.expense <= b.expense
        and a.quality >= b.quality
        and (a.expense < b.expense or a.quality > b.quality)
    )


def pareto_mask(points: Sequence[ParetoPoint]) -> list[bool]:
    """Per-point frontier membership, in input order.

    A point is on the frontier iff no other point dominates it; exact
    duplicates are therefore all kept. Single left-to-right sweep over the
    points sorted by (expense asc, quality desc).
    """
    mask = [False] * len(points)
    order = sorted(
        range(len(points)), key=lambda i: (points[i].expense, -points[i].quality)
    )
    best_cheaper = float("-inf")
    i = 0
    while i < len(order):
        j = i
        expense = points[order[i]].expense
        while j < len(order) and points[order[j]].expense == expense:
            j += 1
        group = order[i:j]
        group_max = max(points[k].quality for k in group)
        if group_max > best_cheaper:
            for k in group:
                if points[k].quality == group_max:
                    mask[k] = True
            best_cheaper = group_max
        i = j
    return mask


def pareto_front(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """The non-dominated subset of ``points``, in input order."""
    return [p for p, keep in zip(points, pareto_mask(points)) if keep]
