"""Layered multi-model generation: several models draft, one fuses.

The orchestration core fans an instruction out to a layer of proposer
models, folds their drafts into a fusion prompt, and repeats for a fixed
number of layers; the last layer is a single model whose reply is the
answer. Around that core: exact cost/compute accounting, a ranked-selection
baseline, draft-similarity analysis, and a resumable benchmark harness with
deterministic offline backends for testing.
"""

from .accounting import (
    ParetoPoint,
    TokenTally,
    UsageSummary,
    cost_micro_usd,
    dominates,
    micro_to_usd,
    pareto_front,
    pareto_mask,
    pipeline_tflops,
    record_cost,
    record_tflops,
    summarize_usage,
)
from .analysis import (
    CorrelationReport,
    SampleStudy,
    bleu,
    correlation_study,
    levenshtein_distance,
    levenshtein_similarity,
    load_study,
    spearman,
    tfidf_cosine,
    tokenize,
)
from .client import (
    BackoffPolicy,
    ChatClient,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    HttpChatClient,
    RateLimiter,
    message_digest,
    token_count,
)
from .config import (
    EndpointSpec,
    GenerationParams,
    LayerSpec,
    ModelSpec,
    PipelineSpec,
    Registry,
    builtin_pipelines,
    builtin_registry,
    dump_config,
    load_config,
    loads_config,
)
from .errors import (
    AgentMixError,
    ApiError,
    ConfigError,
    DatasetError,
    ExportError,
    HarnessError,
    LayerExecutionError,
    MissingApiKeyError,
    MissingParamsError,
    MissingPriceError,
    RetriesExhaustedError,
    TransportError,
    UnparseableChoiceError,
)
from .harness import (
    DatasetItem,
    RunManifest,
    build_report,
    export_run,
    load_dataset,
    load_manifest,
    rank_run,
    run_benchmark,
)
from .mock import MockChatClient, MockHttpServer, MockScript, load_mock_script
from .orchestrator import (
    GenerationRecord,
    LayerOutput,
    PipelineResult,
    RankDecision,
    assemble_aggregate_messages,
    assemble_ranker_messages,
    presentation_order,
    rank_and_select,
    run_layer,
    run_pipeline,
)
from .templates import AggregationTemplate, RankerTemplate

__version__ = "0.1.0"

__all__ = [
    "AgentMixError",
    "AggregationTemplate",
    "ApiError",
    "BackoffPolicy",
    "ChatClient",
    "ChatMessage",
    "ChatRequest",
    "ChatResponse",
    "ConfigError",
    "CorrelationReport",
    "DatasetError",
    "DatasetItem",
    "EndpointSpec",
    "ExportError",
    "GenerationParams",
    "GenerationRecord",
    "HarnessError",
    "HttpChatClient",
    "LayerExecutionError",
    "LayerOutput",
    "LayerSpec",
    "MissingApiKeyError",
    "MissingParamsError",
    "MissingPriceError",
    "MockChatClient",
    "MockHttpServer",
    "MockScript",
    "ModelSpec",
    "ParetoPoint",
    "PipelineResult",
    "PipelineSpec",
    "RankDecision",
    "RankerTemplate",
    "RateLimiter",
    "Registry",
    "RetriesExhaustedError",
    "RunManifest",
    "SampleStudy",
    "TokenTally",
    "TransportError",
    "UnparseableChoiceError",
    "UsageSummary",
    "assemble_aggregate_messages",
    "assemble_ranker_messages",
    "bleu",
    "build_report",
    "builtin_pipelines",
    "builtin_registry",
    "correlation_study",
    "cost_micro_usd",
    "dominates",
    "dump_config",
    "export_run",
    "levenshtein_distance",
    "levenshtein_similarity",
    "load_config",
    "load_dataset",
    "load_manifest",
    "load_mock_script",
    "load_study",
    "loads_config",
    "message_digest",
    "micro_to_usd",
    "pareto_front",
    "pareto_mask",
    "pipeline_tflops",
    "presentation_order",
    "rank_and_select",
    "rank_run",
    "record_cost",
    "record_tflops",
    "run_benchmark",
    "run_layer",
    "run_pipeline",
    "spearman",
    "summarize_usage",
    "tfidf_cosine",
    "token_count",
    "tokenize",
]
