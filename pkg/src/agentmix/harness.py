"""Resumable benchmark runs over instruction datasets.

A run lives in one directory:

* ``manifest.json``   - run identity, per-sample status, running totals;
  rewritten atomically (temp file + rename) after every sample so a crash
  never leaves a torn manifest.
* ``results.jsonl``   - one line per completed sample holding the full
  pipeline result. This file is the authority: on resume the manifest is
  reconciled against it, so a manifest lost or stale after a crash only
  costs a rescan, never repeated model calls.
* ``records.jsonl``   - raw per-call ledger, appended layer by layer while
  samples are still in flight. Diagnostic stream only; it may end
  mid-sample after a crash and is never read back for resuming.
* ``exports/``        - derived artifacts (evaluation exports, rank files).

Resume skips exactly the samples with a valid results line; failed or
pending samples run again. With a fixed clock and single-threaded sample
order the whole directory is byte-reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .accounting import ParetoPoint, pareto_mask, pipeline_tflops
from .client import ChatClient
from .config import PipelineSpec, Registry
from .errors import (
    AgentMixError,
    DatasetError,
    ExportError,
    HarnessError,
    MissingParamsError,
)
from .orchestrator import PipelineResult, rank_and_select, run_pipeline

MANIFEST_NAME = "manifest.json"
RESULTS_NAME = "results.jsonl"
RECORDS_NAME = "records.jsonl"
EXPORTS_DIR = "exports"


class DatasetItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_id: str = Field(min_length=1)
    instruction: str = Field(min_length=1)


def load_dataset(path: str | Path) -> list[DatasetItem]:
    """Load instructions from a JSON array or JSON-lines file.

    Rows may be plain strings or objects with ``instruction`` plus an
    optional ``sample_id`` (or ``id``); missing ids are filled positionally
    and duplicates are rejected.
    """
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    try:
        if stripped.startswith("["):
            rows = json.loads(text)
        else:
            rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"cannot parse dataset {path}: {exc}") from exc
    if not isinstance(rows, list) or not rows:
        raise DatasetError(f"dataset {path} holds no samples")
    items: list[DatasetItem] = []
    seen: set[str] = set()
    for i, row in enumerate(rows):
        if isinstance(row, str):
            row = {"instruction": row}
        if not isinstance(row, dict):
            raise DatasetError(f"dataset row {i} is neither a string nor an object")
        instruction = row.get("instruction")
        if not isinstance(instruction, str) or not instruction:
            raise DatasetError(f"dataset row {i} lacks a non-empty 'instruction'")
        sample_id = row.get("sample_id") or row.get("id") or f"sample-{i:05d}"
        if not isinstance(sample_id, str):
            raise DatasetError(f"dataset row {i} has a non-string id")
        if sample_id in seen:
            raise DatasetError(f"dataset row {i} repeats sample id {sample_id!r}")
        seen.add(sample_id)
        items.append(DatasetItem(sample_id=sample_id, instruction=instruction))
    return items


def dataset_digest(items: Sequence[DatasetItem]) -> str:
    payload = json.dumps(
        [[item.sample_id, item.instruction] for item in items],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class SampleState(BaseModel):
    status: Literal["pending", "done", "failed"] = "pending"
    output_digest: Optional[str] = None
    error: Optional[str] = None
    degraded: bool = False
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost_micro_usd: int = 0
    unpriced_calls: int = 0
    updated_at: float = 0.0


class Totals(BaseModel):
    samples_done: int = 0
    samples_failed: int = 0
    samples_pending: int = 0
    degraded_samples: int = 0
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost_micro_usd: int = 0
    unpriced_calls: int = 0


class RunManifest(BaseModel):
    run_id: str
    pipeline_id: str
    config_digest: str
    dataset_digest: str
    dataset_size: int
    calls_per_sample: int
    created_at: float
    updated_at: float
    sample_order: list[str]
    samples: dict[str, SampleState]
    totals: Totals = Field(default_factory=Totals)

    def recompute_totals(self) -> None:
        totals = Totals()
        for state in self.samples.values():
            if state.status == "done":
                totals.samples_done += 1
                totals.degraded_samples += 1 if state.degraded else 0
                totals.calls += state.calls
                totals.prompt_tokens += state.prompt_tokens
                totals.completion_tokens += state.completion_tokens
                totals.cost_micro_usd += state.cost_micro_usd
                totals.unpriced_calls += state.unpriced_calls
            elif state.status == "failed":
                totals.samples_failed += 1
            else:
                totals.samples_pending += 1
        self.totals = totals

    def to_json_bytes(self) -> bytes:
        text = json.dumps(
            self.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False
        )
        return (text + "\n").encode("utf-8")


def write_manifest(manifest: RunManifest, path: Path) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    tmp = path.with_suffix(".json.tmp")
    tmp.write_bytes(manifest.to_json_bytes())
    os.replace(tmp, path)


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        return RunManifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise HarnessError(f"no manifest at {path}") from None
    except (ValueError, ValidationError) as exc:
        raise HarnessError(f"corrupt manifest {path}: {exc}") from exc


def default_run_id(pipeline_id: str, config_digest: str, ds_digest: str) -> str:
    seed = f"{pipeline_id}:{config_digest}:{ds_digest}"
    return f"{pipeline_id}-{hashlib.sha256(seed.encode('utf-8')).hexdigest()[:12]}"


def _state_from_result(result: PipelineResult, now: float) -> SampleState:
    records = [record for layer in result.layers for record in layer.records]
    priced = [r.cost_micro_usd for r in records if r.cost_micro_usd is not None]
    return SampleState(
        status="done",
        output_digest=hashlib.sha256(result.final.encode("utf-8")).hexdigest()[:16],
        degraded=result.degraded,
        calls=len(records),
        prompt_tokens=sum(r.prompt_tokens for r in records),
        completion_tokens=sum(r.completion_tokens for r in records),
        cost_micro_usd=sum(priced),
        unpriced_calls=len(records) - len(priced),
        updated_at=now,
    )


def scan_results(path: str | Path, repair: bool = False) -> dict[str, PipelineResult]:
    """Read completed-sample rows; newest row wins per sample.

    A partial final line (crash mid-append) is tolerated and, with
    ``repair``, truncated away so later appends stay line-aligned.
    Corruption anywhere else raises, since that means lost results.
    """
    path = Path(path)
    if not path.exists():
        return {}
    raw = path.read_bytes()
    lines = raw.split(b"\n")
    results: dict[str, PipelineResult] = {}
    pos = 0
    for i, line in enumerate(lines):
        start = pos
        pos += len(line) + 1
        if not line.strip():
            continue
        try:
            row = json.loads(line.decode("utf-8"))
            sample_id = row["sample_id"]
            result = PipelineResult.model_validate(row["result"])
        except (ValueError, KeyError, TypeError, ValidationError) as exc:
            if any(l.strip() for l in lines[i + 1 :]):
                raise HarnessError(
                    f"corrupt results line {i + 1} in {path}: {exc}"
                ) from exc
            if repair:
                with open(path, "r+b") as handle:
                    handle.truncate(start)
            break
        results[sample_id] = result
    return results


def run_benchmark(
    client: ChatClient,
    pipeline: PipelineSpec,
    dataset: Sequence[DatasetItem],
    run_dir: str | Path,
    *,
    parallelism: int = 4,
    limit: Optional[int] = None,
    allow_partial: bool = False,
    clock: Callable[[], float] = time.time,
    run_id: Optional[str] = None,
) -> RunManifest:
    """Run ``pipeline`` over ``dataset``, resuming any work already in ``run_dir``.

    ``limit`` bounds how many not-yet-done samples this invocation runs,
    which also gives tests a clean interruption point. Sample failures are
    recorded in the manifest and do not stop other samples.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not dataset:
        raise DatasetError("dataset is empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / MANIFEST_NAME
    results_path = run_dir / RESULTS_NAME
    records_path = run_dir / RECORDS_NAME

    registry = client.registry
    ds_digest = dataset_digest(dataset)
    config_digest = registry.digest()

    done_results = scan_results(results_path, repair=True)
    if manifest_path.exists():
        manifest = load_manifest(manifest_path)
        for field_name, expected in (
            ("pipeline_id", pipeline.id),
            ("config_digest", config_digest),
            ("dataset_digest", ds_digest),
        ):
            found = getattr(manifest, field_name)
            if found != expected:
                raise HarnessError(
                    f"run dir {run_dir} belongs to a different run: "
                    f"{field_name} is {found!r}, expected {expected!r}"
                )
        if run_id is not None and manifest.run_id != run_id:
            raise HarnessError(
                f"run dir {run_dir} already has run_id {manifest.run_id!r}"
            )
    else:
        now = clock()
        manifest = RunManifest(
            run_id=run_id or default_run_id(pipeline.id, config_digest, ds_digest),
            pipeline_id=pipeline.id,
            config_digest=config_digest,
            dataset_digest=ds_digest,
            dataset_size=len(dataset),
            calls_per_sample=pipeline.calls_per_input(),
            created_at=now,
            updated_at=now,
            sample_order=[item.sample_id for item in dataset],
            samples={
                item.sample_id: SampleState(updated_at=now) for item in dataset
            },
        )

    # The results file is the authority on which samples are done.
    for sample_id, state in manifest.samples.items():
        if sample_id in done_results:
            if state.status != "done":
                manifest.samples[sample_id] = _state_from_result(
                    done_results[sample_id], clock()
                )
        elif state.status == "done":
            manifest.samples[sample_id] = SampleState(updated_at=clock())
    manifest.recompute_totals()
    write_manifest(manifest, manifest_path)

    todo = [
        item for item in dataset if manifest.samples[item.sample_id].status != "done"
    ]
    if limit is not None:
        if limit < 0:
            raise ValueError("limit must be >= 0")
        todo = todo[:limit]
    if not todo:
        return manifest

    io_lock = threading.Lock()

    def persist(sample_id: str, state: SampleState, result_line: Optional[str]) -> None:
        with io_lock:
            if result_line is not None:
                with open(results_path, "a", encoding="utf-8") as handle:
                    handle.write(result_line + "\n")
            manifest.samples[sample_id] = state
            manifest.recompute_totals()
            manifest.updated_at = clock()
            write_manifest(manifest, manifest_path)

    def process(item: DatasetItem) -> None:
        def on_layer(output) -> None:
            lines = []
            for record in output.records:
                row = {"sample_id": item.sample_id, **record.model_dump(mode="json")}
                lines.append(json.dumps(row, sort_keys=True, ensure_ascii=False))
            with io_lock:
                with open(records_path, "a", encoding="utf-8") as handle:
                    handle.write("\n".join(lines) + "\n")

        try:
            result = run_pipeline(
                client,
                pipeline,
                item.instruction,
                on_layer=on_layer,
                allow_partial=allow_partial,
            )
        except AgentMixError as exc:
            persist(
                item.sample_id,
                SampleState(status="failed", error=str(exc), updated_at=clock()),
                None,
            )
            return
        line = json.dumps(
            {"sample_id": item.sample_id, "result": result.model_dump(mode="json")},
            sort_keys=True,
            ensure_ascii=False,
        )
        persist(item.sample_id, _state_from_result(result, clock()), line)

    if parallelism == 1:
        for item in todo:
            process(item)
    else:
        with ThreadPoolExecutor(max_workers=min(parallelism, len(todo))) as pool:
            for future in [pool.submit(process, item) for item in todo]:
                future.result()
    return manifest


def _load_done(run_dir: Path) -> tuple[RunManifest, list[tuple[str, PipelineResult]]]:
    manifest = load_manifest(run_dir / MANIFEST_NAME)
    results = scan_results(run_dir / RESULTS_NAME)
    done: list[tuple[str, PipelineResult]] = []
    for sample_id in manifest.sample_order:
        state = manifest.samples.get(sample_id)
        if state is None or state.status != "done":
            continue
        if sample_id not in results:
            raise HarnessError(
                f"manifest marks {sample_id!r} done but {RESULTS_NAME} has no row"
            )
        done.append((sample_id, results[sample_id]))
    return manifest, done


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def export_run(run_dir: str | Path, out_path: Optional[Path] = None) -> Path:
    """Export completed samples as instruction/output/generator records.

    The format matches what instruction-following evaluators consume: a
    JSON array of objects with the generating system named per record.
    """
    run_dir = Path(run_dir)
    manifest, done = _load_done(run_dir)
    if not done:
        raise ExportError(f"run {manifest.run_id} has no completed samples to export")
    rows = [
        {
            "instruction": result.instruction,
            "output": result.final,
            "generator": manifest.pipeline_id,
        }
        for _, result in done
    ]
    out = out_path or run_dir / EXPORTS_DIR / f"{manifest.pipeline_id}.alpacaeval.json"
    _write_json(out, rows)
    return out


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", name)


def rank_run(
    run_dir: str | Path,
    ranker_model: str,
    client: ChatClient,
    rng_seed: int = 0,
) -> tuple[Path, Path]:
    """Pick a best first-layer answer per sample with a single-call ranker.

    This is the selection baseline: same proposer calls as the pipeline,
    but one answer is chosen instead of fused. Seeds vary per sample
    (``rng_seed`` + position) so presentation order is reshuffled each
    time. Returns the export path and a details path recording each pick.
    """
    run_dir = Path(run_dir)
    manifest, done = _load_done(run_dir)
    if not done:
        raise ExportError(f"run {manifest.run_id} has no completed samples to rank")
    positions = {sample_id: i for i, sample_id in enumerate(manifest.sample_order)}
    export_rows = []
    detail_lines = []
    for sample_id, result in done:
        proposals = [record.content for record in result.layers[0].records]
        if len(proposals) < 2:
            raise HarnessError(
                f"sample {sample_id!r} has {len(proposals)} first-layer outputs; "
                "ranking needs at least two"
            )
        decision = rank_and_select(
            client,
            ranker_model,
            result.instruction,
            proposals,
            rng_seed=rng_seed + positions[sample_id],
        )
        export_rows.append(
            {
                "instruction": result.instruction,
                "output": proposals[decision.winner_index],
                "generator": f"ranker:{ranker_model}",
            }
        )
        detail_lines.append(
            json.dumps(
                {
                    "sample_id": sample_id,
                    "winner_index": decision.winner_index,
                    "winner_model": result.layers[0].records[decision.winner_index].model,
                    "raw_choice": decision.raw_choice,
                    "order": decision.order,
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    safe = _safe_name(ranker_model)
    export_path = run_dir / EXPORTS_DIR / f"ranker-{safe}.alpacaeval.json"
    _write_json(export_path, export_rows)
    details_path = run_dir / EXPORTS_DIR / f"ranker-{safe}.details.jsonl"
    details_path.parent.mkdir(parents=True, exist_ok=True)
    details_path.write_text("\n".join(detail_lines) + "\n", encoding="utf-8")
    return export_path, details_path


class ReportRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    expense_usd: Optional[float] = None
    expense_tflops: Optional[float] = None
    quality: float
    on_front: bool = False


def load_scores(path: str | Path) -> tuple[dict[str, float], list[dict]]:
    """Read a scores file: ``{"scores": {label: quality}, "extra_points": [...]}``.

    Extra points let externally measured systems join the frontier plot;
    each needs a label, a quality, and whichever expense axes are known.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise HarnessError(f"cannot read scores file {path}: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("scores"), dict):
        raise HarnessError(f"scores file {path} must hold a 'scores' mapping")
    scores = {str(k): float(v) for k, v in data["scores"].items()}
    extra = data.get("extra_points", [])
    if not isinstance(extra, list):
        raise HarnessError(f"'extra_points' in {path} must be a list")
    points = []
    for i, raw in enumerate(extra):
        if not isinstance(raw, dict) or "label" not in raw or "quality" not in raw:
            raise HarnessError(f"extra point {i} in {path} needs 'label' and 'quality'")
        points.append(raw)
    return scores, points


def build_report(
    run_dirs: Sequence[str | Path],
    registry: Registry,
    scores: dict[str, float],
    extra_points: Sequence[dict] = (),
    axis: Literal["usd", "tflops"] = "usd",
) -> list[ReportRow]:
    """Combine runs and external points into one expense/quality table.

    Each run contributes mean expense per instance (money and compute) under
    its pipeline label; qualities come from ``scores``. Frontier membership
    is computed on the chosen expense axis.
    """
    rows: list[ReportRow] = []
    for run_dir in run_dirs:
        manifest, done = _load_done(Path(run_dir))
        if not done:
            raise HarnessError(f"run {manifest.run_id} has no completed samples")
        label = manifest.pipeline_id
        if label not in scores:
            raise HarnessError(f"scores file has no entry for {label!r}")
        n = manifest.totals.samples_done
        expense_usd = (
            None
            if manifest.totals.unpriced_calls > 0
            else manifest.totals.cost_micro_usd / 1_000_000 / n
        )
        try:
            expense_tflops = (
                sum(pipeline_tflops(result, registry) for _, result in done) / n
            )
        except MissingParamsError:
            expense_tflops = None
        rows.append(
            ReportRow(
                label=label,
                expense_usd=expense_usd,
                expense_tflops=expense_tflops,
                quality=scores[label],
            )
        )
    for raw in extra_points:
        rows.append(
            ReportRow(
                label=str(raw["label"]),
                expense_usd=raw.get("expense_usd"),
                expense_tflops=raw.get("expense_tflops"),
                quality=float(raw["quality"]),
            )
        )

    points = []
    for row in rows:
        expense = row.expense_usd if axis == "usd" else row.expense_tflops
        if expense is None:
            raise HarnessError(
                f"point {row.label!r} has no expense on the {axis!r} axis"
            )
        points.append(ParetoPoint(label=row.label, expense=expense, quality=row.quality))
    mask = pareto_mask(points)
    return [
        row.model_copy(update={"on_front": keep}) for row, keep in zip(rows, mask)
    ]


def report_csv_rows(rows: Sequence[ReportRow]) -> list[list[str]]:
    table = [["label", "expense_usd", "expense_tflops", "quality", "on_front"]]
    for row in rows:
        table.append(
            [
                row.label,
                "" if row.expense_usd is None else repr(row.expense_usd),
                "" if row.expense_tflops is None else repr(row.expense_tflops),
                repr(row.quality),
                "true" if row.on_front else "false",
            ]
        )
    return table


def write_report_csv(rows: Sequence[ReportRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        csv.writer(handle).writerows(report_csv_rows(rows))
