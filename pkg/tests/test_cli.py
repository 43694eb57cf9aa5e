import json

import pytest

from crsim import cli

from conftest import FIXTURES

BASIC = str(FIXTURES / "scenario-basic.json")
DIAMOND = str(FIXTURES / "graphs" / "diamond.json")


def run_json(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    code = cli.main(argv + ["--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["run", BASIC, "--clock=simulated", "--seed=7", "--out", str(a)]) == 0
    assert cli.main(["run", BASIC, "--clock=simulated", "--seed=7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_run_with_figures(tmp_path):
    figs = tmp_path / "figs"
    assert cli.main(["run", BASIC, "--seed", "7", "--out", str(tmp_path / "r.json"), "--figures", str(figs)]) == 0
    assert sorted(p.name for p in figs.iterdir()) == ["score.png", "timeline.csv", "timeline.png"]


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CRSIM_SEED", "11")
    code, report = run_json(["run", BASIC], tmp_path)
    assert code == 0 and report["scenario"]["seed"] == 11
    code, report = run_json(["run", BASIC, "--seed", "4"], tmp_path, "b.json")
    assert report["scenario"]["seed"] == 4  # the flag wins


def test_run_input_errors(tmp_path, monkeypatch):
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert cli.main(["run", str(bad)]) == cli.EXIT_INPUT
    monkeypatch.delenv("CRSIM_PROVIDER_CONFIG", raising=False)
    assert cli.main(["run", BASIC, "--providers", "live"]) == cli.EXIT_INPUT
    assert cli.main(["run", BASIC, "--clock", "lunar"]) == cli.EXIT_INPUT


def test_run_with_unmet_expectations_exits_one(tmp_path):
    # an empty provider script leaves the expected POV unfound
    providers = tmp_path / "p.json"
    providers.write_text(json.dumps({"priority": ["claude-3.7"], "scripts": {"claude-3.7": []}}))
    assert cli.main(["run", BASIC, "--providers", str(providers), "--out", str(tmp_path / "r.json")]) == 1


def test_score_report_and_ledger(tmp_path):
    report = tmp_path / "r.json"
    cli.main(["run", BASIC, "--seed", "7", "--out", str(report)])
    code, score = run_json(["score", str(report)], tmp_path, "s.json")
    assert code == 0 and score["total"] == pytest.approx(9.935694444444445, abs=1e-12)
    ledger = tmp_path / "ledger.json"
    ledger.write_text(json.dumps(json.loads(report.read_text())["ledger"]))
    assert run_json(["score", str(ledger)], tmp_path, "s2.json")[1] == score
    assert cli.main(["score", str(tmp_path / "none.json")]) == cli.EXIT_INPUT


def test_callgraph_queries(tmp_path):
    code, doc = run_json(["callgraph", "paths", "--graph", DIAMOND, "--harness", "h", "--target", "t"], tmp_path)
    assert code == 0 and sorted(doc["paths"]) == [["h_entry", "a", "t"], ["h_entry", "b", "t"]]
    code, doc = run_json(["callgraph", "reachable", "--graph", DIAMOND, "--harness", "h"], tmp_path, "r.json")
    assert [f["name"] for f in doc["functions"]] == ["h_entry", "a", "b", "t"]
    code, doc = run_json(["callgraph", "metadata", "--graph", DIAMOND, "--name", "a"], tmp_path, "m.json")
    assert doc["functions"][0]["start_line"] == 11


def test_callgraph_unknown_names_soft_fail(tmp_path):
    code, doc = run_json(["callgraph", "reachable", "--graph", DIAMOND, "--harness", "nope"], tmp_path)
    assert code == 0 and doc["functions"] == [] and "warning" in doc
    code, doc = run_json(["callgraph", "paths", "--graph", DIAMOND, "--harness", "h", "--target", "zz"],
                         tmp_path, "p.json")
    assert code == 0 and doc["paths"] == []


def test_callgraph_usage_errors(tmp_path):
    assert cli.main(["callgraph", "paths", "--graph", DIAMOND, "--harness", "h"]) == cli.EXIT_INPUT
    bad = tmp_path / "g.json"
    bad.write_text('{"functions": [], "edges": [[0, 1]]}')
    assert cli.main(["callgraph", "reachable", "--graph", str(bad), "--harness", "h"]) == cli.EXIT_INPUT


def test_parser_errors():
    assert cli.main([]) == cli.EXIT_INPUT
    assert cli.main(["frobnicate"]) == cli.EXIT_INPUT
    assert cli.main(["--version"]) == cli.EXIT_OK
