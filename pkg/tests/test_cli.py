import json

import pandas as pd
import pytest

from conftest import INSTANCES, seed_documents
from src.dyace.config import SuiteSpec
from src.dyace.main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from src.dyace.services import reporting

RUN_TOML = """
[instance]
path = "{instance}"
format = "taillard"

[run]
variant = "dyace"
seed = 7
population_size = {population}
algorithm_population_size = 3
horizon = 2
meta_generations = 4
probe_generations = 3
rollouts = 2
budget = 40

[controller]
backend = "scripted"
retries = 2
"""


def write_config(tmp_path, instance=None, population=10):
    path = tmp_path / "run.toml"
    instance = instance or INSTANCES / "tiny3x3.txt"
    path.write_text(RUN_TOML.format(instance=instance.as_posix(), population=population), encoding="utf-8")
    return path


def test_run_writes_artifacts(tmp_path):
    output = tmp_path / "out"
    assert main(["run", "--config", str(write_config(tmp_path)), "--output", str(output)]) == EXIT_OK
    summary = json.loads((output / "summary.json").read_text(encoding="utf-8"))
    assert {"instance", "variant", "seed", "final_gap", "generations", "ledger_total", "applied_specs"} <= set(summary)
    assert summary["instance"] == "tiny3x3" and summary["generations"] == 8
    assert summary["final_gap"] >= 0.0
    raw = (output / "convergence.csv").read_bytes()
    assert raw.startswith(b"generation,gap,best_cost\r\n")
    assert len(pd.read_csv(output / "convergence.csv")) == 8


def test_static_run_applies_one_spec(tmp_path):
    output = tmp_path / "out"
    argv = ["run", "--config", str(write_config(tmp_path)), "--variant", "static", "--output", str(output)]
    assert main(argv) == EXIT_OK
    summary = json.loads((output / "summary.json").read_text(encoding="utf-8"))
    assert summary["variant"] == "static"
    assert len(summary["applied_specs"]) == 1


def test_overrides_reach_the_run(tmp_path):
    output = tmp_path / "out"
    argv = ["run", "--config", str(write_config(tmp_path)), "--seed", "11", "--budget", "8", "--output", str(output)]
    assert main(argv) == EXIT_OK
    summary = json.loads((output / "summary.json").read_text(encoding="utf-8"))
    assert summary["seed"] == 11
    assert summary["ledger_total"] <= 8


def test_inspect_views(tmp_path, capsys):
    output = tmp_path / "out"
    main(["run", "--config", str(write_config(tmp_path)), "--output", str(output)])
    capsys.readouterr()

    assert main(["inspect", str(output / "trace.jsonl"), "gaps"]) == EXIT_OK
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "generation,gap,best_cost" and len(rows) == 9

    assert main(["inspect", str(output / "trace.jsonl"), "ledger"]) == EXIT_OK
    ledger = json.loads(capsys.readouterr().out)
    assert ledger["total"] <= ledger["budget"] == 40

    assert main(["inspect", str(output / "trace.jsonl"), "specs"]) == EXIT_OK
    assert "step   0" in capsys.readouterr().out

    assert main(["inspect", str(output / "trace.jsonl"), "prompts"]) == EXIT_OK
    assert "--- request ---" in capsys.readouterr().out


def test_invalid_config_exits_with_config_code(tmp_path):
    assert main(["run", "--config", str(write_config(tmp_path, population=1))]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "nowhere.toml")]) == EXIT_CONFIG


def test_missing_instance_exits_with_config_code(tmp_path):
    config = write_config(tmp_path, instance=tmp_path / "missing.txt")
    assert main(["run", "--config", str(config), "--output", str(tmp_path / "out")]) == EXIT_CONFIG


def test_inspect_rejects_foreign_traces(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text('{"event": "hello"}\n', encoding="utf-8")
    assert main(["inspect", str(path), "summary"]) == EXIT_RUNTIME


def test_suite_keeps_going_past_a_failed_cell(tmp_path):
    config = write_config(tmp_path)
    suite = tmp_path / "suite.toml"
    suite.write_text(
        f"""
config = "{config.as_posix()}"
output = "{(tmp_path / 'suite').as_posix()}"

[overrides]
"run.meta_generations" = 2

[[cells]]
instance = "{(INSTANCES / 'tiny3x3.txt').as_posix()}"
format = "taillard"
variant = "dyace"
seeds = [1]

[[cells]]
instance = "{(tmp_path / 'missing.txt').as_posix()}"
format = "taillard"
variant = "dyace"
seeds = [1]
""",
        encoding="utf-8",
    )
    assert main(["suite", str(suite)]) == EXIT_RUNTIME
    cells = json.loads((tmp_path / "suite" / "cells.json").read_text(encoding="utf-8"))
    assert [c["status"] for c in cells] == ["ok", "failed"]
    matrix = pd.read_csv(tmp_path / "suite" / "matrix.csv")
    assert list(matrix["instance"]) == ["tiny3x3"]
    assert matrix["dyace"][0] == pytest.approx(cells[0]["final_gap"])
    summary = json.loads((tmp_path / "suite" / "tiny3x3" / "dyace" / "seed1" / "summary.json").read_text(encoding="utf-8"))
    assert summary["generations"] == 4


def test_validate_spec(tmp_path, capsys):
    document = {
        "domain": "tsp",
        "description": "Plain GA",
        "parameters": {"size": 3, "cx": 0.9, "mut": 0.2},
        "graph": {
            "op": "sequence",
            "children": [
                {"op": "tournament", "params": {"size": "size"}},
                {"op": "order", "params": {"rate": "cx"}},
                {"op": "swap", "params": {"rate": "mut"}},
            ],
        },
    }
    good = tmp_path / "good.json"
    good.write_text(json.dumps(document), encoding="utf-8")
    assert main(["validate-spec", str(good)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["graph"]["children"][0]["op"] == "tournament"

    document["parameters"]["mut"] = 1.7
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(document), encoding="utf-8")
    assert main(["validate-spec", str(bad)]) == EXIT_RUNTIME
    assert "out of bounds" in capsys.readouterr().err
    assert main(["validate-spec", str(good), "--domain", "jssp"]) == EXIT_RUNTIME


def test_validate_spec_dry_run(tmp_path, capsys):
    spec = tmp_path / "seed.json"
    spec.write_text(json.dumps(seed_documents("jssp")[0]), encoding="utf-8")
    argv = ["validate-spec", str(spec), "--instance", str(INSTANCES / "tiny3x3.txt"), "--generations", "3"]
    assert main(argv) == EXIT_OK
    err = capsys.readouterr().err
    assert "dry run on tiny3x3" in err
    assert "exact optimum 9" in err


def test_list_catalog(capsys):
    assert main(["list-catalog", "--domain", "jssp"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("[jssp]")
    assert "swap_hill_climb (local_search)" in out


def test_suite_records_unexpected_crashes(tmp_path, monkeypatch):
    real_run = reporting.run_variant

    async def crash_on_seed_two(config):
        if config.run.seed == 2:
            raise RuntimeError("worker died")
        return await real_run(config)

    monkeypatch.setattr(reporting, "run_variant", crash_on_seed_two)
    suite = SuiteSpec(
        config=write_config(tmp_path),
        output=tmp_path / "suite",
        overrides={"run.meta_generations": 2},
        cells=[{"instance": INSTANCES / "tiny3x3.txt", "format": "taillard", "variant": "dyace", "seeds": [1, 2, 3]}],
    )
    report = reporting.run_suite(suite)
    assert [(c.seed, c.failed) for c in report.cells] == [(1, False), (2, True), (3, False)]
    assert report.failed[0].error == "RuntimeError: worker died"
    cells = json.loads((tmp_path / "suite" / "cells.json").read_text(encoding="utf-8"))
    assert [c["status"] for c in cells] == ["ok", "failed", "ok"]
