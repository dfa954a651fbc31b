import json

import pytest

from agentmix import cli
from helpers import write_dataset

MINIMAL_SCRIPT = """\
mode: template
template: "scripted {model} {seed}"
"""


@pytest.fixture
def dataset_path(tmp_path):
    return write_dataset(tmp_path / "data.jsonl", ["first question", "second question"])


def _run(tmp_path, dataset_path, *extra):
    run_dir = tmp_path / "run"
    code = cli.main(
        [
            "run",
            "--mock",
            "--pipeline",
            "moa-lite",
            "--dataset",
            str(dataset_path),
            "--out",
            str(run_dir),
            *extra,
        ]
    )
    return code, run_dir


def test_run_creates_run_dir(tmp_path, dataset_path, capsys):
    code, run_dir = _run(tmp_path, dataset_path)
    assert code == 0
    assert (run_dir / "manifest.json").exists()
    assert (run_dir / "results.jsonl").exists()
    out = capsys.readouterr().out
    assert "2 done, 0 failed, 0 pending" in out
    assert "calls: 14" in out


def test_run_with_script_and_seed(tmp_path, dataset_path):
    script = tmp_path / "script.yaml"
    script.write_text(MINIMAL_SCRIPT, encoding="utf-8")
    run_dir = tmp_path / "run"
    code = cli.main(
        [
            "run",
            "--mock",
            str(script),
            "--seed",
            "7",
            "--pipeline",
            "moa-lite",
            "--dataset",
            str(dataset_path),
            "--out",
            str(run_dir),
        ]
    )
    assert code == 0
    rows = [
        json.loads(line)
        for line in (run_dir / "results.jsonl").read_text().splitlines()
    ]
    final = rows[0]["result"]["layers"][-1]["records"][0]
    # the scripted template surfaces the derived per-agent seed
    assert final["content"] == "scripted Qwen/Qwen1.5-72B-Chat 7"


def test_export_command(tmp_path, dataset_path, capsys):
    _, run_dir = _run(tmp_path, dataset_path)
    out = tmp_path / "export.json"
    assert cli.main(["export", "--run", str(run_dir), "--out", str(out)]) == 0
    rows = json.loads(out.read_text(encoding="utf-8"))
    assert [row["instruction"] for row in rows] == ["first question", "second question"]
    assert f"wrote {out}" in capsys.readouterr().out


def test_rank_command(tmp_path, dataset_path, capsys):
    _, run_dir = _run(tmp_path, dataset_path)
    code = cli.main(
        ["rank", "--mock", "--run", str(run_dir), "--ranker", "qwen1.5-110b-chat"]
    )
    # the default mock template replies "model:digest", never a valid identifier
    assert code == 1

    script = tmp_path / "ranker.yaml"
    script.write_text("mode: template\ntemplate: m3\n", encoding="utf-8")
    code = cli.main(
        [
            "rank",
            "--mock",
            str(script),
            "--run",
            str(run_dir),
            "--ranker",
            "qwen1.5-110b-chat",
            "--seed",
            "5",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    details = run_dir / "exports" / "ranker-qwen1.5-110b-chat.details.jsonl"
    assert str(details) in out
    assert details.exists()


def test_analyze_command(tmp_path, capsys):
    study = tmp_path / "study.jsonl"
    rows = [
        {
            "instruction": f"q{i}",
            "aggregate": "shared words one two three four",
            "proposals": ["shared words one", "totally different text here"],
            "preference_scores": [2.0, 1.0],
        }
        for i in range(3)
    ]
    study.write_text(
        "\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8"
    )
    out_csv = tmp_path / "rho.csv"
    code = cli.main(
        ["analyze", "--study", str(study), "--metric", "tfidf", "--out", str(out_csv)]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "metric tfidf: mean rho 1.0000 over 3 of 3 samples" in printed
    assert out_csv.read_text().startswith("sample,rho")


def test_report_command_stdout(tmp_path, dataset_path, capsys):
    _, run_dir = _run(tmp_path, dataset_path)
    capsys.readouterr()  # discard the run command's output
    scores = tmp_path / "scores.json"
    scores.write_text(json.dumps({"scores": {"moa-lite": 59.1}}), encoding="utf-8")
    code = cli.main(["report", "--runs", str(run_dir), "--scores", str(scores)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("label,expense_usd,expense_tflops,quality,on_front")
    assert "moa-lite" in out
    assert "true" in out


def test_error_paths_exit_1(tmp_path, capsys):
    assert cli.main(["export", "--run", str(tmp_path / "absent")]) == 1
    assert capsys.readouterr().err.startswith("error:")

    bad_dataset = tmp_path / "bad.jsonl"
    bad_dataset.write_text("{broken\n", encoding="utf-8")
    code = cli.main(
        [
            "run",
            "--mock",
            "--pipeline",
            "moa-lite",
            "--dataset",
            str(bad_dataset),
            "--out",
            str(tmp_path / "r"),
        ]
    )
    assert code == 1

    code = cli.main(
        [
            "run",
            "--mock",
            "--pipeline",
            "no-such-pipeline",
            "--dataset",
            str(bad_dataset),
            "--out",
            str(tmp_path / "r"),
        ]
    )
    assert code == 1


def test_no_subcommand_prints_help(capsys):
    assert cli.main([]) == 2
    assert "COMMAND" in capsys.readouterr().out


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--bogus"])
    assert exc.value.code == 2


def test_custom_config_flag(tmp_path, dataset_path):
    config = tmp_path / "registry.yaml"
    config.write_text(
        """\
schema: 1
endpoints:
  - id: local
    base_url: http://localhost:9
    api_key_env: ""
models:
  - id: tiny
    endpoint: local
    api_model_name: tiny-wire
pipelines:
  - id: solo
    layers:
      - agents: [tiny]
""",
        encoding="utf-8",
    )
    run_dir = tmp_path / "run"
    code = cli.main(
        [
            "run",
            "--config",
            str(config),
            "--mock",
            "--pipeline",
            "solo",
            "--dataset",
            str(dataset_path),
            "--out",
            str(run_dir),
        ]
    )
    assert code == 0
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["calls_per_sample"] == 1
    assert manifest["totals"]["unpriced_calls"] == 2
