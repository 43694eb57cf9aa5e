import json
import shutil
from pathlib import Path

import pytest

from crsim.clock import SimulatedClock
from crsim.domain import InvariantError, Sanitizer, Status
from crsim.harness import CleanRun, Crash, CrashFound, NoCrash
from crsim.lab.bytegen import BytegenError, BytegenExecutor, run_bytegen
from crsim.lab.runner import build_handle, run_functionality_tests, run_harness, scripted_fuzz_run, trace_coverage
from crsim.lab.scenario import ManifestError, Scenario, run_scenario
from crsim.lab.target import LabTarget
from crsim.signature import parse_crash_report

from conftest import FIXTURES

HTTP = LabTarget.load(FIXTURES / "targets" / "labhttp.json")
CRASH = b"POST /a\n" + b"A" * 100


# ---------------------------------------------------------------- target

@pytest.mark.parametrize("name", ["labhttp", "labcfg", "labjava", "labmulti"])
def test_fixture_targets_load_and_build(name, tmp_path):
    lab = LabTarget.load(FIXTURES / "targets" / f"{name}.json")
    repo = lab.materialize(tmp_path / "repo")
    assert build_handle(lab, repo).ok
    assert all(r.passed for r in run_functionality_tests(lab, repo))


def test_crash_needs_every_clause():
    assert isinstance(run_harness(HTTP, "fuzz_http", Sanitizer.ADDRESS, CRASH), Crash)
    for miss in (b"GET /a\n" + b"A" * 100, b"POST /a" + b"A" * 100, b"POST /a\n" + b"A" * 10):
        assert isinstance(run_harness(HTTP, "fuzz_http", Sanitizer.ADDRESS, miss), NoCrash)
    # the bug is declared for Address and Memory only
    assert isinstance(run_harness(HTTP, "fuzz_http", Sanitizer.UNDEFINED, CRASH), NoCrash)


def test_report_round_trips_to_crash_site():
    out = run_harness(HTTP, "fuzz_http", Sanitizer.ADDRESS, CRASH)
    sig = parse_crash_report(out.report, Sanitizer.ADDRESS, (HTTP.root_marker,))
    assert (sig.file, sig.line) == ("src/http.c", 16)
    assert "stack-buffer-overflow" in out.report


def test_guard_in_workspace_removes_bug(tmp_path):
    repo = HTTP.materialize(tmp_path / "repo")
    src = repo / "src" / "http.c"
    src.write_text(src.read_text().replace("method == METHOD_GET && rest > HEADER_MAX", "rest >= HEADER_MAX"))
    assert isinstance(run_harness(HTTP, "fuzz_http", Sanitizer.ADDRESS, CRASH, repo), NoCrash)
    assert isinstance(run_harness(HTTP, "fuzz_http", Sanitizer.ADDRESS, CRASH), Crash)


def test_build_diagnostics(tmp_path):
    repo = HTTP.materialize(tmp_path / "repo")
    src = repo / "src" / "http.c"
    src.write_text(src.read_text().replace('#include "http.h"', "") + "{")
    res = build_handle(HTTP, repo)
    assert not res.ok
    assert "required line missing" in res.diagnostics and "src/http.c" in res.diagnostics


def test_functionality_check_catches_dropped_behavior(tmp_path):
    repo = HTTP.materialize(tmp_path / "repo")
    src = repo / "src" / "http.c"
    src.write_text(src.read_text().replace("return METHOD_POST;", "return METHOD_UNKNOWN;"))
    failed = [r.name for r in run_functionality_tests(HTTP, repo) if not r.passed]
    assert failed == ["post_request"]


def test_coverage_context():
    cov = trace_coverage(HTTP, "fuzz_http", Sanitizer.ADDRESS, b"POST /a\nshort")
    assert "handle_request" in cov.executed_functions
    untaken = [b for b in cov.branch_points if not b.taken]
    assert [(b.file, b.line) for b in untaken] == [("src/http.c", 31)]
    assert [n for n, _ in untaken[0].context] == list(range(28, 35))


def test_invalid_target_rejected():
    doc = json.loads((FIXTURES / "targets" / "labhttp.json").read_text())
    doc["source_dir"] = str(FIXTURES / "targets" / "labhttp")
    doc["bugs"][0]["crash_site"]["line"] = 17
    with pytest.raises(InvariantError):
        LabTarget.from_doc(doc)


# --------------------------------------------------------------- fuzzing

def test_scripted_fuzz_run_is_seeded():
    a = scripted_fuzz_run(HTTP, "fuzz_http", Sanitizer.ADDRESS, seconds=30, seed=5)
    b = scripted_fuzz_run(HTTP, "fuzz_http", Sanitizer.ADDRESS, seconds=30, seed=5)
    assert a == b


def test_fuzz_run_charges_clock_and_finds_with_corpus():
    clock = SimulatedClock()
    res = scripted_fuzz_run(HTTP, "fuzz_http", Sanitizer.ADDRESS, seconds=60, seed=1,
                            corpus=[b"POST /a\n" + b"A" * 79], clock=clock)
    assert clock.now() == 60_000
    assert isinstance(res.outcome, CrashFound)
    assert isinstance(run_harness(HTTP, "fuzz_http", Sanitizer.ADDRESS, res.outcome.input_blob), Crash)


def test_zero_second_fuzz_run():
    assert scripted_fuzz_run(HTTP, "fuzz_http", Sanitizer.ADDRESS, seconds=0).outcome == CleanRun(0)


# --------------------------------------------------------------- bytegen

def test_bytegen_commands(tmp_path):
    src = 'literal b"ab"\nrepeat b"-" 3\nwrite x1.bin\nrange 0 2\nconcat x1.bin\nwrite x2.bin\n'
    assert run_bytegen(src, tmp_path) == ["x1.bin", "x2.bin"]
    assert (tmp_path / "x1.bin").read_bytes() == b"ab---"
    assert (tmp_path / "x2.bin").read_bytes() == b"\x00\x01\x02ab---"


@pytest.mark.parametrize("src", ["explode", "write ../escape.bin", 'repeat b"a" x', "concat missing.bin"])
def test_bytegen_errors(tmp_path, src):
    with pytest.raises(BytegenError):
        run_bytegen(src, tmp_path)


def test_bytegen_executor_reports_failure(tmp_path):
    clock = SimulatedClock()
    res = BytegenExecutor(clock, cost_ms=500).execute("explode", tmp_path)
    assert res.returncode != 0 and res.stderr
    assert clock.now() == 500


# ------------------------------------------------------------- scenarios

def test_basic_scenario():
    report, problems = run_scenario(FIXTURES.parent / "fixtures" / "scenario-basic.json", seed=7)
    assert problems == []
    assert [p["strategy"] for p in report["povs"]] == ["xs0_delta"]
    assert [p["status"] for p in report["patches"]] == ["Passed"]
    assert len(report["bundles"]) == 1 and report["bundles"][0]["sarif_id"]
    assert report["score"]["total"] == pytest.approx(9.935694444444445, abs=1e-12)


def test_xpatch_scenario_fires_at_half_time():
    report, problems = run_scenario(FIXTURES / "scenario-xpatch.json", seed=7)
    assert problems == []
    events = {e["event"]: e["t"] for e in report["timeline"]}
    assert events["xpatch_armed"] == 30 * 60_000
    assert report["patches"][0]["is_xpatch"] and report["povs"] == []


def test_sarif_scenario_verdicts():
    report, problems = run_scenario(FIXTURES / "scenario-sarif.json", seed=0)
    assert problems == []
    assert [s["consensus"] for s in report["sarif"]] == ["TruePositive", "FalsePositive"]
    assert report["score"]["sas"] == 2.0


def fuzzer_scenario(tmp_path):
    """labmulti with a dictionary token that reaches its byte check; only the fuzzer runs."""
    target = json.loads((FIXTURES / "targets" / "labmulti.json").read_text())
    target["source_dir"] = str(FIXTURES / "targets" / "labmulti")
    target["dictionary"], target["seeds"] = [{"hex": "ff"}], ["ab"]
    (tmp_path / "target.json").write_text(json.dumps(target))
    doc = {
        "name": "fuzzer-only",
        "task": {"task_id": "task-multi", "mode": "FullScan", "time_window_minutes": 30,
                 "harness_names": ["fuzz_codec_01"]},
        "target": "target.json",
        "providers": {"priority": ["m"], "scripts": {"m": []}},
        "policy": {"enabled_sanitizers": ["Address"]},
        "run": {"workers": 1, "pov_strategies": [], "patch_strategies": [], "xpatch_strategies": []},
        "expect": {"povs": 1, "pov_strategy": "libfuzzer"},
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return path


def test_fuzzer_pov_scenario(tmp_path):
    path = fuzzer_scenario(tmp_path)
    assert Scenario.load(path).task.harness_names == ("fuzz_codec_01",)
    report, problems = run_scenario(path, seed=3)
    assert problems == []
    passed = [p for p in report["povs"] if p["status"] == "Passed"]
    assert [p["strategy"] for p in passed] == ["libfuzzer"]
    assert {p["status"] for p in report["povs"][1:]} <= {"Duplicate"}


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        Scenario.from_doc({"task": {}}, tmp_path / "x.json")
    doc = json.loads((FIXTURES / "scenario-basic.json").read_text())
    doc["run"] = {"bogus": 1}
    with pytest.raises(ManifestError):
        Scenario.from_doc(doc, FIXTURES / "scenario-basic.json")
    doc = json.loads((FIXTURES / "scenario-basic.json").read_text())
    doc["task"]["harness_names"] = ["nope"]
    with pytest.raises(ManifestError):
        Scenario.from_doc(doc, FIXTURES / "scenario-basic.json")
