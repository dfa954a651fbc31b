import pytest

from agentmix.config import (
    PROPOSER_IDS,
    GenerationParams,
    Registry,
    builtin_pipelines,
    builtin_registry,
    dump_config,
    load_config,
    loads_config,
)
from agentmix.errors import (
    ConfigInvariantError,
    ConfigParseError,
    ConfigReferenceError,
)

MINIMAL = """
schema: 1
endpoints:
  - id: local
    base_url: http://127.0.0.1:9999/v1
    api_key_env: ""
models:
  - id: m-a
    endpoint: local
    api_model_name: vendor/model-a
    active_params: 7.0e9
    price_in: 0.2
    price_out: 0.2
  - id: m-b
    endpoint: local
    api_model_name: vendor/model-b
pipelines:
  - id: duo
    layers:
      - agents: [m-a, m-b]
      - agents: [m-a]
"""


def test_minimal_config_loads():
    registry = loads_config(MINIMAL)
    assert set(registry.models) == {"m-a", "m-b"}
    assert registry.pipeline("duo").calls_per_input() == 3
    assert registry.models["m-a"].has_prices()
    assert not registry.models["m-b"].has_prices()


def test_defaults():
    registry = loads_config(MINIMAL)
    endpoint = registry.endpoints["local"]
    assert endpoint.max_concurrent == 8
    assert endpoint.requests_per_minute is None
    assert endpoint.timeout == 120
    assert endpoint.max_retries == 3
    params = registry.pipeline("duo").layers[0].params
    assert params.temperature == 0.7
    assert params.max_tokens == 2048
    assert params.seed is None


def test_yaml_parse_error():
    with pytest.raises(ConfigParseError):
        loads_config("schema: 1\nendpoints: [unclosed")


def test_root_must_be_mapping():
    with pytest.raises(ConfigParseError):
        loads_config("- just\n- a list\n")


def test_schema_field_required_and_checked():
    with pytest.raises(ConfigParseError, match="schema"):
        loads_config("endpoints: []\nmodels: []\npipelines: []\n")
    with pytest.raises(ConfigParseError, match="schema"):
        loads_config(MINIMAL.replace("schema: 1", "schema: 2"))


def test_unknown_top_level_section_rejected():
    with pytest.raises(ConfigParseError, match="surprise"):
        loads_config(MINIMAL + "\nsurprise: true\n")


def test_duplicate_ids_rejected():
    doubled = MINIMAL.replace(
        "  - id: m-b",
        "  - id: m-a\n    endpoint: local\n    api_model_name: dup\n  - id: m-b",
    )
    with pytest.raises(ConfigInvariantError, match="m-a"):
        loads_config(doubled)


def test_validation_error_names_field():
    bad = MINIMAL.replace("price_in: 0.2", "price_in: -1")
    with pytest.raises(ConfigInvariantError, match=r"models\[0\]"):
        loads_config(bad)


def test_unknown_model_field_rejected():
    bad = MINIMAL.replace("price_in: 0.2", "price_in: 0.2\n    colour: blue")
    with pytest.raises(ConfigInvariantError):
        loads_config(bad)


def test_model_endpoint_reference_checked():
    bad = MINIMAL.replace("endpoint: local\n    api_model_name: vendor/model-b", "endpoint: nowhere\n    api_model_name: vendor/model-b")
    with pytest.raises(ConfigReferenceError, match="nowhere"):
        loads_config(bad)


def test_pipeline_agent_reference_checked():
    bad = MINIMAL.replace("agents: [m-a, m-b]", "agents: [m-a, ghost]")
    with pytest.raises(ConfigReferenceError, match="ghost"):
        loads_config(bad)


def test_final_layer_must_have_one_agent():
    bad = MINIMAL.replace("      - agents: [m-a]\n", "")
    with pytest.raises(ConfigInvariantError, match="duo"):
        loads_config(bad)


def test_registry_lookup_errors_name_the_id():
    registry = loads_config(MINIMAL)
    with pytest.raises(ConfigReferenceError, match="missing-model"):
        registry.model_for("missing-model")
    with pytest.raises(ConfigReferenceError, match="missing-pipe"):
        registry.pipeline("missing-pipe")


def test_dump_load_round_trip_preserves_digest():
    registry = builtin_registry()
    clone = loads_config(dump_config(registry))
    assert clone.digest() == registry.digest()
    assert clone == registry


def test_digest_changes_with_content():
    registry = loads_config(MINIMAL)
    changed = loads_config(MINIMAL.replace("price_in: 0.2", "price_in: 0.3"))
    assert registry.digest() != changed.digest()
    assert len(registry.digest()) == 16


def test_load_config_from_file(tmp_path):
    path = tmp_path / "conf.yaml"
    path.write_text(MINIMAL, encoding="utf-8")
    registry = load_config(path)
    assert registry == loads_config(MINIMAL)


def test_builtin_registry_shape():
    registry = builtin_registry()
    assert len(registry.models) == 6
    assert set(PROPOSER_IDS) == set(registry.models)
    for model in registry.models.values():
        assert model.active_params is not None
        assert model.has_prices()
    moa = registry.pipeline("moa")
    assert [len(layer.agents) for layer in moa.layers] == [6, 6, 1]
    assert moa.calls_per_input() == 13
    lite = registry.pipeline("moa-lite")
    assert [len(layer.agents) for layer in lite.layers] == [6, 1]
    assert lite.calls_per_input() == 7
    assert lite.layers[1].agents == ["qwen1.5-72b-chat"]
    assert builtin_pipelines().keys() == {"moa", "moa-lite"}


def test_generation_params_bounds():
    with pytest.raises(ValueError):
        GenerationParams(temperature=-0.1)
    with pytest.raises(ValueError):
        GenerationParams(max_tokens=0)
    assert GenerationParams(seed=7).seed == 7


def test_aggregate_placement_field():
    registry = loads_config(
        MINIMAL.replace("  - id: duo", "  - id: duo\n    aggregate_placement: user")
    )
    assert registry.pipeline("duo").aggregate_placement == "user"
    with pytest.raises(ConfigInvariantError):
        loads_config(
            MINIMAL.replace("  - id: duo", "  - id: duo\n    aggregate_placement: tool")
        )
