"""Text-similarity metrics and the similarity/preference correlation study.

The study question: when several drafts are fused into one answer, does the
fused answer resemble the *better* drafts more? For each sample we score
every draft's similarity to the fused text, then rank-correlate those
similarities with the drafts' preference scores.

All metrics are deliberately simple, dependency-free implementations with
frozen behaviour (the tokenizer is versioned) so scores are comparable
across runs and machines.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from pathlib import Path
from typing import Callable, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import DatasetError

TOKENIZER_VERSION = "1"
# Unicode word characters minus underscore; lowercased. Digits count as
# word characters, so "3.5" splits into "3", "5".
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

BLEU_EPSILON = 1e-9


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 3) -> float:
    """Cumulative sentence BLEU with uniform weights over orders 1..max_n.

    Zero modified precisions are floored at ``BLEU_EPSILON`` instead of
    zeroing the whole score; brevity penalty is exp(min(0, 1 - ref/cand)).
    Either side empty after tokenization scores 0.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand, n)
        total = sum(cand_counts.values())
        if total == 0:
            precision = BLEU_EPSILON
        else:
            ref_counts = _ngram_counts(ref, n)
            clipped = sum(
                min(count, ref_counts[gram]) for gram, count in cand_counts.items()
            )
            precision = clipped / total if clipped > 0 else BLEU_EPSILON
        log_sum += math.log(precision)
    brevity = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return brevity * math.exp(log_sum / max_n)


def levenshtein_distance(a: str, b: str) -> int:
    """Character-level edit distance, two-row dynamic programming."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ch_a in enumerate(a, start=1):
        current = [i]
        for j, ch_b in enumerate(b, start=1):
            cost = 0 if ch_a == ch_b else 1
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            )
        previous = current
    return previous[-1]


def levenshtein_similarity(a: str, b: str) -> float:
    """1 - distance/max(len); two empty strings count as identical (1.0)."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(a, b) / longest


def tfidf_cosine(a: str, b: str, corpus: Sequence[str]) -> float:
    """Cosine similarity of TF-IDF vectors, with IDF fit on ``corpus``.

    tf is the raw count, idf is ln((1+N)/(1+df)) + 1 (terms absent from the
    corpus still get a finite weight). Either side without tokens scores 0.
    The result is clamped to [0, 1] to absorb last-bit float noise.
    """
    docs = [set(tokenize(doc)) for doc in corpus]
    n_docs = len(docs)
    df = Counter()
    for doc in docs:
        df.update(doc)

    def vector(text: str) -> dict[str, float]:
        counts = Counter(tokenize(text))
        return {
            term: count * (math.log((1 + n_docs) / (1 + df[term])) + 1.0)
            for term, count in counts.items()
        }

    va, vb = vector(a), vector(b)
    norm_a = math.sqrt(sum(w * w for w in va.values()))
    norm_b = math.sqrt(sum(w * w for w in vb.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    dot = sum(weight * vb.get(term, 0.0) for term, weight in va.items())
    return min(1.0, max(0.0, dot / (norm_a * norm_b)))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties sharing the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and values[order[j]] == values[order[i]]:
            j += 1
        shared = (i + j + 1) / 2  # average of positions i+1 .. j
        for k in order[i:j]:
            ranks[k] = shared
        i = j
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation; ``None`` when undefined (constant input).

    Constant inputs have no ranking to correlate, so the coefficient is
    undefined rather than zero; callers must not coerce ``None`` to a
    number when averaging.
    """
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    if all(v == x[0] for v in x) or all(v == y[0] for v in y):
        return None
    rx = average_ranks(x)
    ry = average_ranks(y)
    n = len(rx)
    mean_x = sum(rx) / n
    mean_y = sum(ry) / n
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(rx, ry))
    var_x = sum((a - mean_x) ** 2 for a in rx)
    var_y = sum((b - mean_y) ** 2 for b in ry)
    if var_x == 0.0 or var_y == 0.0:
        return None
    return cov / math.sqrt(var_x * var_y)


class SampleStudy(BaseModel):
    """One study sample: drafts, the fused text, and per-draft scores."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    instruction: str = Field(min_length=1)
    aggregate_text: str = Field(alias="aggregate")
    proposals: list[str] = Field(min_length=2)
    preference_scores: list[float]

    @model_validator(mode="after")
    def _aligned(self) -> "SampleStudy":
        if len(self.preference_scores) != len(self.proposals):
            raise ValueError(
                f"{len(self.proposals)} proposals but "
                f"{len(self.preference_scores)} preference scores"
            )
        return self


MetricFn = Callable[[str, str, Sequence[str]], float]

METRICS: dict[str, MetricFn] = {
    "bleu-3": lambda prop, agg, corpus: bleu(prop, agg, max_n=3),
    "bleu-4": lambda prop, agg, corpus: bleu(prop, agg, max_n=4),
    "bleu-5": lambda prop, agg, corpus: bleu(prop, agg, max_n=5),
    "tfidf": lambda prop, agg, corpus: tfidf_cosine(prop, agg, corpus),
    "levenshtein": lambda prop, agg, corpus: levenshtein_similarity(prop, agg),
}


class CorrelationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric: str
    per_sample_rho: list[Optional[float]]
    n_valid: int
    mean_rho: Optional[float]


def correlation_study(samples: Sequence[SampleStudy], metric: str) -> CorrelationReport:
    """Rank-correlate draft-to-fusion similarity with preference scores.

    Samples where the correlation is undefined (constant similarities or
    constant scores) are excluded from the mean but kept, as ``None``, in
    the per-sample list.
    """
    try:
        fn = METRICS[metric]
    except KeyError:
        raise ValueError(
            f"unknown metric {metric!r}; choose from {sorted(METRICS)}"
        ) from None
    per_sample: list[Optional[float]] = []
    for sample in samples:
        corpus = list(sample.proposals) + [sample.aggregate_text]
        similarities = [
            fn(proposal, sample.aggregate_text, corpus)
            for proposal in sample.proposals
        ]
        per_sample.append(spearman(similarities, sample.preference_scores))
    valid = [rho for rho in per_sample if rho is not None]
    return CorrelationReport(
        metric=metric,
        per_sample_rho=per_sample,
        n_valid=len(valid),
        mean_rho=sum(valid) / len(valid) if valid else None,
    )


def load_study(path: str | Path) -> list[SampleStudy]:
    """Load study samples from a JSON array or JSON-lines file."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    try:
        if stripped.startswith("["):
            rows = json.loads(text)
        else:
            rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"cannot parse study file {path}: {exc}") from exc
    if not isinstance(rows, list) or not rows:
        raise DatasetError(f"study file {path} holds no samples")
    samples = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise DatasetError(f"study sample {i} is not an object")
        try:
            samples.append(SampleStudy(**row))
        except ValidationError as exc:
            raise DatasetError(f"study sample {i} is invalid: {exc}") from exc
    return samples


def write_correlation_csv(report: CorrelationReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample", "rho"])
        for i, rho in enumerate(report.per_sample_rho):
            writer.writerow([i, "" if rho is None else repr(rho)])
        writer.writerow(["mean", "" if report.mean_rho is None else repr(report.mean_rho)])
        writer.writerow(["n_valid", report.n_valid])
