"""End-to-end acceptance gate.

One test per shipped guarantee, each printed as its own PASS/FAIL line in
the terminal summary (see conftest). Everything runs offline against the
deterministic fake backend; expected values come from golden files, from
independent brute-force oracles in ``oracles.py``, or from scipy.
"""

import json
import random
import string
import time
from pathlib import Path

import pytest
import scipy.stats

from agentmix.accounting import ParetoPoint, cost_micro_usd, pareto_front, pipeline_tflops
from agentmix.analysis import (
    SampleStudy,
    average_ranks,
    bleu,
    correlation_study,
    levenshtein_distance,
    levenshtein_similarity,
    spearman,
    tfidf_cosine,
    tokenize,
)
from agentmix.client import ChatMessage
from agentmix.config import builtin_registry, load_config
from agentmix.errors import UnparseableChoiceError
from agentmix.harness import load_dataset, run_benchmark
from agentmix.mock import MockChatClient, MockScript
from agentmix.orchestrator import (
    presentation_order,
    rank_and_select,
    run_layer,
    run_pipeline,
)
from agentmix.templates import AggregationTemplate, RankerTemplate
from helpers import ScriptedClient, write_dataset
from oracles import (
    oracle_bleu,
    oracle_cost_micro,
    oracle_levenshtein,
    oracle_pareto,
    oracle_pipeline_tflops,
    oracle_ranks,
    oracle_spearman,
    oracle_tfidf_cosine,
)

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = Path(__file__).parent.parent / "configs"
PROPOSERS = [
    "qwen1.5-110b-chat",
    "qwen1.5-72b-chat",
    "wizardlm-2-8x22b",
    "llama-3-70b-instruct",
    "mixtral-8x22b-instruct",
    "dbrx-instruct",
]


@pytest.mark.acceptance(criterion="prompt templates byte-identical to golden files")
def test_prompt_templates_match_goldens():
    aggregate = AggregationTemplate().render_system(
        [
            "Paris is the capital of France.",
            "The capital of France is Paris, a major European city.",
            "France's capital city is Paris.",
        ]
    )
    assert aggregate.encode("utf-8") == (GOLDEN / "aggregate_system.txt").read_bytes()

    ranker = RankerTemplate().render(
        "Write a haiku about autumn leaves.",
        [
            ("m1", "Crimson leaves drift down"),
            ("m2", "Autumn paints the trees"),
            ("m3", "Golden leaves falling"),
            ("m4", "Red maples letting go"),
            ("m5", "Leaves spiral earthward"),
            ("m6", "Amber foliage sighs"),
        ],
    )
    assert ranker.encode("utf-8") == (GOLDEN / "ranker_user.txt").read_bytes()


def _waves(calls):
    """Group a call log into layers by message shape, in issue order.

    First-layer calls carry a single user message; every later layer's
    calls embed the previous layer's replies, so group membership is
    decided by which earlier wave's content the call quotes.
    """
    waves = [[c for c in calls if len(c.messages) == 1]]
    rest = [c for c in calls if len(c.messages) > 1]
    while rest:
        prev_contents = {
            reply for call in waves[-1] for reply in _replies_of(call, calls)
        }
        current = [
            c for c in rest if any(text in c.messages[0].content for text in prev_contents)
        ]
        assert current, "call quotes no previous wave"
        waves.append(current)
        rest = [c for c in rest if c not in current]
    return waves


def _replies_of(call, calls):
    # the fake replies "{wire model}:{digest}", reconstructable from the log
    return [f"{call.wire_model}:{call.digest}"]


@pytest.mark.acceptance(criterion="builtin pipelines issue 13 calls in waves 6/6/1 and 7 in 6/1")
def test_pipeline_topology_on_fake_backend():
    registry = builtin_registry()

    client = MockChatClient(registry)
    run_pipeline(client, registry.pipeline("moa"), "What causes tides?")
    calls = client.calls
    assert len(calls) == 13
    waves = _waves(calls)
    assert [len(w) for w in waves] == [6, 6, 1]
    assert sorted(c.model for c in waves[0]) == sorted(PROPOSERS)
    assert sorted(c.model for c in waves[1]) == sorted(PROPOSERS)
    assert waves[2][0].model == "qwen1.5-110b-chat"
    # waves are strictly sequential: every call of a layer finishes before
    # any call of the next starts
    for earlier, later in zip(waves, waves[1:]):
        assert max(c.index for c in earlier) < min(c.index for c in later)
    # later layers aggregate: system message plus the bare instruction
    for call in waves[1] + waves[2]:
        assert [m.role for m in call.messages] == ["system", "user"]
        assert call.messages[1].content == "What causes tides?"

    client = MockChatClient(registry)
    run_pipeline(client, registry.pipeline("moa-lite"), "What causes tides?")
    waves = _waves(client.calls)
    assert len(client.calls) == 7
    assert [len(w) for w in waves] == [6, 1]
    assert waves[1][0].model == "qwen1.5-72b-chat"


@pytest.mark.acceptance(criterion="agents in a layer run concurrently, not sequentially")
def test_layer_and_pipeline_concurrency():
    registry = builtin_registry()
    client = MockChatClient(registry, MockScript(latency_ms=100))

    start = time.monotonic()
    output = run_layer(
        client,
        registry.pipeline("moa").layers[0],
        [ChatMessage(role="user", content="q")],
        layer_index=1,
    )
    layer_wall = time.monotonic() - start
    assert len(output.records) == 6
    assert 0.1 <= layer_wall < 0.3  # six 100 ms calls overlap

    start = time.monotonic()
    run_pipeline(client, registry.pipeline("moa"), "q")
    pipeline_wall = time.monotonic() - start
    # 13 sequential calls would take 1.3 s; layers must parallelize
    assert pipeline_wall < 0.65


@pytest.mark.acceptance(criterion="runs are byte-reproducible and resume adds only missing work")
def test_determinism_and_resume(tmp_path):
    registry = builtin_registry()
    pipeline = registry.pipeline("moa-lite")
    dataset = load_dataset(
        write_dataset(tmp_path / "data.jsonl", [f"question {i}" for i in range(5)])
    )
    run_files = ["manifest.json", "results.jsonl", "records.jsonl"]

    def run(run_dir, **kwargs):
        return run_benchmark(
            MockChatClient(registry),
            pipeline,
            dataset,
            run_dir,
            parallelism=1,
            clock=lambda: 0.0,
            **kwargs,
        )

    run(tmp_path / "a")
    run(tmp_path / "b")
    for name in run_files:
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes(), name

    # interrupt after 2 of 5 samples, then resume with a fresh client
    interrupted = run(tmp_path / "c", limit=2)
    assert interrupted.totals.samples_done == 2
    resume_client = MockChatClient(registry)
    run_benchmark(
        resume_client,
        pipeline,
        dataset,
        tmp_path / "c",
        parallelism=1,
        clock=lambda: 0.0,
    )
    assert resume_client.call_count == (5 - 2) * 7  # only missing samples ran
    for name in run_files:
        assert (tmp_path / "c" / name).read_bytes() == (
            tmp_path / "a" / name
        ).read_bytes(), name


def _random_text(rng, vocabulary, max_words=12):
    return " ".join(
        rng.choice(vocabulary) for _ in range(rng.randint(0, max_words))
    )


@pytest.mark.acceptance(criterion="similarity metrics match brute-force oracles and scipy")
def test_metrics_against_oracles():
    rng = random.Random(20240607)
    vocabulary = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]

    for _ in range(250):
        a = _random_text(rng, vocabulary)
        b = _random_text(rng, vocabulary)
        corpus = [_random_text(rng, vocabulary) for _ in range(rng.randint(2, 5))]
        max_n = rng.randint(1, 5)

        score = bleu(a, b, max_n=max_n)
        assert abs(score - oracle_bleu(a, b, max_n)) <= 1e-6
        assert 0.0 <= score <= 1.0
        if len(tokenize(a)) >= max_n:
            assert bleu(a, a, max_n=max_n) == 1.0

        raw = "".join(rng.choice(string.ascii_lowercase + " '") for _ in range(rng.randint(0, 10)))
        raw_b = "".join(rng.choice(string.ascii_lowercase + " '") for _ in range(rng.randint(0, 10)))
        distance = levenshtein_distance(raw, raw_b)
        assert distance == oracle_levenshtein(raw, raw_b)
        similarity = levenshtein_similarity(raw, raw_b)
        assert abs(similarity - levenshtein_similarity(raw_b, raw)) <= 1e-12
        assert 0.0 <= similarity <= 1.0

        cosine = tfidf_cosine(a, b, corpus)
        assert abs(cosine - oracle_tfidf_cosine(a, b, corpus)) <= 1e-9
        assert 0.0 <= cosine <= 1.0

        n = rng.randint(2, 12)
        x = [rng.choice(range(6)) * 1.0 for _ in range(n)]
        y = [rng.choice(range(6)) * 1.0 for _ in range(n)]
        ours = spearman(x, y)
        oracle = oracle_spearman(x, y)
        assert average_ranks(x) == oracle_ranks(x)
        assert list(scipy.stats.rankdata(x)) == pytest.approx(average_ranks(x))
        if ours is None:
            assert oracle is None
        else:
            assert abs(ours - oracle) <= 1e-9
            reference = scipy.stats.spearmanr(x, y).statistic
            assert abs(ours - reference) <= 1e-9
            # invariant under strictly increasing transforms of either side
            transformed = spearman([v**3 for v in x], [2 * v + 1 for v in y])
            assert abs(ours - transformed) <= 1e-9


@pytest.mark.acceptance(criterion="cost, compute, and frontier results equal exact oracles")
def test_accounting_against_oracles(tmp_path):
    rng = random.Random(99)

    for _ in range(300):
        pt, ct = rng.randint(0, 5000), rng.randint(0, 5000)
        price_in = round(rng.uniform(0, 20), rng.randint(0, 4))
        price_out = round(rng.uniform(0, 20), rng.randint(0, 4))
        assert cost_micro_usd(pt, ct, price_in, price_out) == oracle_cost_micro(
            pt, ct, price_in, price_out
        )

    # compute proxy over a real run equals a hand summation from the records
    registry = builtin_registry()
    client = MockChatClient(registry)
    result = run_pipeline(client, registry.pipeline("moa"), "Why is the sky blue?")
    layer_calls = [
        [
            (
                registry.model_for(record.model).active_params,
                record.prompt_tokens + record.completion_tokens,
            )
            for record in layer.records
        ]
        for layer in result.layers
    ]
    ours = pipeline_tflops(result, registry)
    oracle = oracle_pipeline_tflops(layer_calls)
    assert abs(ours - oracle) <= 1e-9 * max(1.0, abs(oracle))

    points = [
        ParetoPoint(
            label=f"p{i}",
            expense=float(rng.randint(0, 30)),
            quality=float(rng.randint(0, 30)),
        )
        for i in range(1000)
    ]
    assert pareto_front(points) == oracle_pareto(points)


@pytest.mark.acceptance(criterion="correlation study: planted agreement ≥0.9, inversion ≤−0.9, constants undefined")
def test_correlation_study_sanity():
    words = "one two three four five six seven eight nine ten".split()
    samples = []
    for i in range(10):
        aggregate = " ".join(f"s{i}{w}" for w in words)
        proposals = [
            " ".join(aggregate.split()[: 2 + 2 * k]) for k in range(4)
        ]
        samples.append(
            SampleStudy(
                instruction=f"q{i}",
                aggregate=aggregate,
                proposals=proposals,
                preference_scores=[1.0, 2.0, 3.0, 4.0],
            )
        )

    for metric in ("bleu-3", "tfidf", "levenshtein"):
        agree = correlation_study(samples, metric)
        assert agree.mean_rho is not None and agree.mean_rho >= 0.9, metric

        inverted = correlation_study(
            [s.model_copy(update={"preference_scores": [4.0, 3.0, 2.0, 1.0]}) for s in samples],
            metric,
        )
        assert inverted.mean_rho is not None and inverted.mean_rho <= -0.9, metric

        constant = correlation_study(
            [s.model_copy(update={"preference_scores": [2.0, 2.0, 2.0, 2.0]}) for s in samples],
            metric,
        )
        assert constant.per_sample_rho == [None] * 10, metric
        assert constant.n_valid == 0, metric
        assert constant.mean_rho is None, metric  # undefined, never zero


@pytest.mark.acceptance(criterion="proposer/aggregator sweeps and solo-vs-fused pairs express as configs and run")
def test_shipped_configs_express_ablations():
    assert load_config(CONFIGS / "moa.yaml").digest() == builtin_registry().digest()

    def run_once(registry, pipeline):
        client = MockChatClient(registry)
        run_pipeline(client, pipeline, "sample instruction")
        assert client.call_count == pipeline.calls_per_input()
        return client

    proposers = load_config(CONFIGS / "ablation-proposers.yaml")
    for n in (1, 2, 3, 6):
        multi = proposers.pipeline(f"multi-{n}")
        assert len(multi.layers) == 2
        assert len(multi.layers[0].agents) == n
        assert len(set(multi.layers[0].agents)) == n  # n distinct models
        run_once(proposers, multi)

        single = proposers.pipeline(f"single-{n}")
        assert len(single.layers) == 2
        assert single.layers[0].agents == ["qwen1.5-110b-chat"] * n
        assert single.layers[0].params.temperature == 0.7
        client = run_once(proposers, single)
        seeds = [c.seed for c in client.calls[:n]]
        assert len(set(seeds)) == n  # repeated model still samples distinctly

    aggregators = load_config(CONFIGS / "ablation-aggregators.yaml")
    assert len(aggregators.pipelines) == 6
    finals = []
    for pipeline in aggregators.pipelines.values():
        assert len(pipeline.layers) == 2
        assert sorted(pipeline.layers[0].agents) == sorted(PROPOSERS)
        finals.extend(pipeline.layers[1].agents)
        run_once(aggregators, pipeline)
    assert sorted(finals) == sorted(PROPOSERS)  # every model takes the fuser role

    pairs = load_config(CONFIGS / "solo-vs-with-refs.yaml")
    assert len(pairs.pipelines) == 12
    for model in PROPOSERS:
        solo = pairs.pipeline(f"solo-{model}")
        assert [layer.agents for layer in solo.layers] == [[model]]
        run_once(pairs, solo)

        fused = pairs.pipeline(f"with-refs-{model}")
        assert sorted(fused.layers[0].agents) == sorted(PROPOSERS)
        assert fused.layers[1].agents == [model]
        run_once(pairs, fused)


@pytest.mark.acceptance(criterion="ranker recovers the original index under every 6-candidate shuffle")
def test_ranker_contract_all_permutations():
    registry = builtin_registry()
    candidates = [f"candidate text {i}" for i in range(6)]

    # find a seed for every permutation of 6 slots
    seed_for = {}
    seed = 0
    while len(seed_for) < 720:
        order = tuple(presentation_order(6, seed))
        seed_for.setdefault(order, seed)
        seed += 1
        assert seed < 100_000, "seed scan failed to cover all permutations"

    reply = {"value": ""}
    client = ScriptedClient(registry, lambda model, request: reply["value"])

    for order, seed in seed_for.items():
        for target in range(6):
            # the target candidate sits in slot order.index(target)
            reply["value"] = f"m{order.index(target) + 1}"
            decision = rank_and_select(
                client, "qwen1.5-110b-chat", "pick one", candidates, rng_seed=seed
            )
            assert decision.winner_index == target
            assert decision.order == list(order)

    for bad in ("m0", "m7", "M1", "m1 is best", "", "the answer is m2"):
        reply["value"] = bad
        with pytest.raises(UnparseableChoiceError) as excinfo:
            rank_and_select(client, "qwen1.5-110b-chat", "pick one", candidates, rng_seed=0)
        assert excinfo.value.raw == bad
