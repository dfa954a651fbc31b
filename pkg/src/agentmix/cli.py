"""Command-line entry points.

Every subcommand that talks to models accepts ``--config`` (YAML registry,
defaulting to the built-in roster) and ``--mock [SCRIPT]`` to swap the HTTP
client for the deterministic in-process fake, so whole workflows can be
exercised without credentials or network access.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional

from .analysis import METRICS, correlation_study, load_study, write_correlation_csv
from .client import ChatClient, HttpChatClient
from .config import PipelineSpec, Registry, builtin_registry, load_config
from .errors import AgentMixError
from .harness import (
    build_report,
    export_run,
    load_dataset,
    load_scores,
    rank_run,
    report_csv_rows,
    run_benchmark,
    write_report_csv,
)
from .mock import MockChatClient, MockHttpServer, MockScript, load_mock_script


def _registry(args: argparse.Namespace) -> Registry:
    if getattr(args, "config", None):
        return load_config(args.config)
    return builtin_registry()


def _client(args: argparse.Namespace, registry: Registry) -> ChatClient:
    mock = getattr(args, "mock", None)
    if mock is None:
        return HttpChatClient(registry)
    script = MockScript() if mock == "" else load_mock_script(mock)
    return MockChatClient(registry, script)


def _pipeline_with_seed(pipeline: PipelineSpec, seed: int) -> PipelineSpec:
    layers = [
        layer.model_copy(
            update={"params": layer.params.model_copy(update={"seed": seed})}
        )
        for layer in pipeline.layers
    ]
    return pipeline.model_copy(update={"layers": layers})


def cmd_run(args: argparse.Namespace) -> int:
    registry = _registry(args)
    client = _client(args, registry)
    pipeline = registry.pipeline(args.pipeline)
    if args.seed is not None:
        pipeline = _pipeline_with_seed(pipeline, args.seed)
    dataset = load_dataset(args.dataset)
    manifest = run_benchmark(
        client,
        pipeline,
        dataset,
        args.out,
        parallelism=args.parallelism,
        limit=args.limit,
        allow_partial=args.allow_partial,
        run_id=args.run_id,
    )
    totals = manifest.totals
    print(
        f"run {manifest.run_id}: {totals.samples_done} done, "
        f"{totals.samples_failed} failed, {totals.samples_pending} pending"
    )
    print(
        f"calls: {totals.calls}, tokens: {totals.prompt_tokens} in / "
        f"{totals.completion_tokens} out, cost: ${totals.cost_micro_usd / 1e6:.6f}"
    )
    if totals.unpriced_calls:
        print(f"note: {totals.unpriced_calls} calls had no configured price")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    registry = _registry(args)
    client = _client(args, registry)
    export_path, details_path = rank_run(
        args.run, args.ranker, client, rng_seed=args.seed
    )
    print(f"wrote {export_path}")
    print(f"wrote {details_path}")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    out = export_run(args.run, Path(args.out) if args.out else None)
    print(f"wrote {out}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    samples = load_study(args.study)
    report = correlation_study(samples, args.metric)
    if report.mean_rho is None:
        print(f"metric {report.metric}: mean rho undefined (0 valid samples)")
    else:
        print(
            f"metric {report.metric}: mean rho {report.mean_rho:.4f} "
            f"over {report.n_valid} of {len(report.per_sample_rho)} samples"
        )
    if args.out:
        write_correlation_csv(report, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    registry = _registry(args)
    scores, extra_points = load_scores(args.scores)
    rows = build_report(
        args.runs, registry, scores, extra_points=extra_points, axis=args.axis
    )
    if args.out:
        write_report_csv(rows, args.out)
        print(f"wrote {args.out}")
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(report_csv_rows(rows))
    return 0


def cmd_mock_serve(args: argparse.Namespace) -> int:
    script = load_mock_script(args.script) if args.script else MockScript()
    server = MockHttpServer(
        script, host=args.host, port=args.port, include_usage=not args.no_usage
    )
    print(f"mock server listening on {server.base_url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentmix",
        description="Layered multi-model generation with benchmarking tools.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="registry YAML (default: built-in roster)")
        p.add_argument(
            "--mock",
            nargs="?",
            const="",
            default=None,
            metavar="SCRIPT",
            help="use the offline fake backend, optionally with a script file",
        )

    run = sub.add_parser("run", help="run a pipeline over a dataset")
    common(run)
    run.add_argument("--pipeline", required=True, help="pipeline id from the registry")
    run.add_argument("--dataset", required=True, help="JSON/JSONL instruction file")
    run.add_argument("--out", required=True, help="run directory (resumed if present)")
    run.add_argument("--parallelism", type=int, default=4, help="samples in flight")
    run.add_argument("--limit", type=int, default=None, help="max samples this call")
    run.add_argument("--seed", type=int, default=None, help="base generation seed")
    run.add_argument(
        "--allow-partial",
        action="store_true",
        help="tolerate failed agents in a layer when at least one succeeds",
    )
    run.add_argument("--run-id", default=None, help="override the derived run id")
    run.set_defaults(func=cmd_run)

    rank = sub.add_parser("rank", help="pick best first-layer answers with a ranker model")
    common(rank)
    rank.add_argument("--run", required=True, help="existing run directory")
    rank.add_argument("--ranker", required=True, help="model id used as the ranker")
    rank.add_argument("--seed", type=int, default=0, help="presentation shuffle seed")
    rank.set_defaults(func=cmd_rank)

    export = sub.add_parser("export", help="export completed samples for evaluation")
    export.add_argument("--run", required=True, help="existing run directory")
    export.add_argument("--out", default=None, help="output path (default: exports/)")
    export.set_defaults(func=cmd_export)

    analyze = sub.add_parser(
        "analyze", help="correlate draft similarity with preference scores"
    )
    analyze.add_argument("--study", required=True, help="study samples JSON/JSONL")
    analyze.add_argument(
        "--metric", choices=sorted(METRICS), default="bleu-3", help="similarity metric"
    )
    analyze.add_argument("--out", default=None, help="per-sample CSV output")
    analyze.set_defaults(func=cmd_analyze)

    report = sub.add_parser("report", help="tabulate expense vs quality across runs")
    report.add_argument("--config", help="registry YAML (default: built-in roster)")
    report.add_argument("--runs", nargs="+", required=True, help="run directories")
    report.add_argument("--scores", required=True, help="scores JSON file")
    report.add_argument(
        "--axis", choices=["usd", "tflops"], default="usd", help="frontier expense axis"
    )
    report.add_argument("--out", default=None, help="CSV output (default: stdout)")
    report.set_defaults(func=cmd_report)

    serve = sub.add_parser("mock-serve", help="serve the fake backend over HTTP")
    serve.add_argument("--script", default=None, help="mock script YAML")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument(
        "--no-usage", action="store_true", help="omit usage blocks from replies"
    )
    serve.set_defaults(func=cmd_mock_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except AgentMixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
