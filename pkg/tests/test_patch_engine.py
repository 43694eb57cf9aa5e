import json
import random
import shutil
from pathlib import Path

import pytest

from crsim.callgraph import load_graph
from crsim.diffs import apply_diff, make_diff
from crsim.domain import Check, FuzzerTarget, InvariantError, Language, Mode, Sanitizer, Status
from crsim.harness import CrashFound, FuzzResult
from crsim.patch.catalog import SamplePatchCatalog, crash_class
from crsim.patch.engine import (Identification, PatchStrategyConfig, StaleRecord, XPatchConfig, check_patch,
                                identify_targets, patch_strategy_config, rewrite_function,
                                run_patch_strategy, run_patch_strategy_detailed, select_xpatch_functions,
                                xpatch_gate, xpatch_run)
from crsim.pov.engine import run_pov_strategy, strategy_config
from crsim.router import ScriptedProvider

from conftest import CRASH_HTTP, FIXTURES, MISS_HTTP, http_task, lab_services, make_task
from test_submission import patch as ledger_patch

HTTP = FuzzerTarget("fuzz_http", Sanitizer.ADDRESS, "task-http")
RESPONSES = FIXTURES / "scenarios" / "basic" / "responses"
BROKEN_BRACE = (RESPONSES / "patch-1.md").read_text()
GOOD_PATCH = (RESPONSES / "patch-2.md").read_text()
# LlmOnly identification asks the router first
IDENTIFY = '{"functions": [{"name": "handle_request", "file": "src/http.c"}]}'
GOOD_DIFF = """--- a/src/http.c
+++ b/src/http.c
@@ -28,7 +28,7 @@
         return 0;
     char out[HEADER_MAX];
     size_t rest = len - (size_t)(hdr + 1 - buf);
-    if (method == METHOD_GET && rest > HEADER_MAX)
+    if (rest > HEADER_MAX)
         rest = HEADER_MAX;
     return copy_header(out, hdr + 1, rest);
 }
"""


def with_pov(tmp_path, patch_script, **kw):
    """Services whose single model first finds the crash, then answers patch prompts."""
    services, lab = lab_services(tmp_path, {"m": [CRASH_HTTP] + list(patch_script)}, **kw)
    task = http_task()
    services.submission.register_task(task)
    pov = run_pov_strategy(task, HTTP, strategy_config("xs0_delta"), services)
    assert pov is not None
    return services, task, pov


# ------------------------------------------------------------ validation

def test_good_diff_passes_all_four(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    rep = check_patch(GOOD_DIFF, task, [pov], services)
    assert rep.record.valid and rep.feedback == ""


def test_short_circuit_on_apply(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    rep = check_patch(GOOD_DIFF.replace("size_t rest", "size_t other"), task, [pov], services)
    assert (rep.record.applies, rep.record.compiles) == (Check.FAIL, Check.UNKNOWN)


def test_short_circuit_on_build(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    rep = check_patch(GOOD_DIFF.replace("+    if (rest > HEADER_MAX)", "+    if (rest > HEADER_MAX) {"),
                      task, [pov], services)
    rec = rep.record
    assert (rec.applies, rec.compiles, rec.povs_blocked, rec.tests_pass) == (
        Check.PASS, Check.FAIL, Check.UNKNOWN, Check.UNKNOWN)
    assert "does not build" in rep.feedback


def test_short_circuit_on_pov(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    harmless = GOOD_DIFF.replace("+    if (rest > HEADER_MAX)", "+    if (method == METHOD_GET && rest > HEADER_MAX + 0)")
    rec = check_patch(harmless, task, [pov], services).record
    assert (rec.povs_blocked, rec.tests_pass) == (Check.FAIL, Check.UNKNOWN)


def test_functionality_failure(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    # blocks the crash by refusing POST, which the functionality checks catch
    diff = GOOD_DIFF.replace("+    if (rest > HEADER_MAX)", "+    if (method == METHOD_POST) return -1;\n+    if (rest > HEADER_MAX)")
    diff = diff.replace("@@ -28,7 +28,7 @@", "@@ -28,7 +28,8 @@")
    rep = check_patch(diff, task, [pov], services)
    assert rep.record.povs_blocked is Check.PASS and rep.record.tests_pass is Check.FAIL
    assert "post_request" in rep.feedback


class FlakyRunner:
    """Delegates to a real runner but fails one stage with an infrastructure error."""

    def __init__(self, inner, broken):
        self.inner, self.broken = inner, broken

    def __getattr__(self, name):
        if name == self.broken:
            def boom(*a, **k):
                raise RuntimeError("sandbox died")
            return boom
        return getattr(self.inner, name)


@pytest.mark.parametrize("stage,field", [("build", "compiles"), ("run", "povs_blocked"),
                                         ("functionality_tests", "tests_pass")])
def test_unknown_step_is_not_valid(tmp_path, stage, field):
    services, task, pov = with_pov(tmp_path, [])
    services.runner = FlakyRunner(services.runner, stage)
    rep = check_patch(GOOD_DIFF, task, [pov], services)
    assert rep.aborted and not rep.record.valid
    assert getattr(rep.record, field) is Check.UNKNOWN


def test_unknown_step_blocks_submission(tmp_path):
    services, task, pov = with_pov(tmp_path, [IDENTIFY] + [GOOD_PATCH] * 5)
    services.runner = FlakyRunner(services.runner, "functionality_tests")
    res = run_patch_strategy_detailed(task, [pov], patch_strategy_config("patch_delta"), services)
    assert res.patch is None
    doc = services.submission.ledger_document(task.task_id)
    assert not [e for e in doc["events"] if e["kind"] == "Patch"]


# --------------------------------------------------------- diff round trip

def random_tree(rng):
    files = {}
    for i in range(rng.randint(0, 5)):
        lines = [rng.choice(["", "x", "int a;", "  b\r", "\t}", "é", f"l{j}"]) for j in range(rng.randint(0, 30))]
        text = "\n".join(lines)
        if rng.random() < 0.7:
            text += "\n"
        files[f"d{i % 2}/f{i}.c"] = text
    return files


def mutate_tree(rng, files):
    out = dict(files)
    for path in list(out):
        r = rng.random()
        if r < 0.15:
            del out[path]
        elif r < 0.8:
            lines = out[path].split("\n")
            for _ in range(rng.randint(1, 4)):
                op = rng.randrange(3)
                pos = rng.randrange(len(lines) + 1)
                if op == 0:
                    lines.insert(pos, rng.choice(["new", "", "z\r"]))
                elif op == 1 and lines:
                    del lines[min(pos, len(lines) - 1)]
                elif lines:
                    lines[min(pos, len(lines) - 1)] += "!"
            out[path] = "\n".join(lines)
    if rng.random() < 0.3:
        out["added/new.h"] = "#pragma once" + ("\n" if rng.random() < 0.5 else "")
    return out


def write_tree(root, files):
    root.mkdir(parents=True)
    for rel, text in files.items():
        p = root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(text.encode())


def read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes().decode() for p in root.rglob("*") if p.is_file()}


def diff_round_trip_failures(trees=500, seed=2024, workdir=None):
    """Trees where applying make_diff(orig, mod) to orig does not give mod."""
    import tempfile

    rng = random.Random(seed)
    bad = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for n in range(trees):
            base = Path(tmp) / str(n)
            orig, mod = random_tree(rng), None
            mod = mutate_tree(rng, orig)
            write_tree(base / "orig", orig)
            write_tree(base / "mod", mod)
            shutil.copytree(base / "orig", base / "work")
            diff = make_diff(base / "orig", base / "mod")
            apply_diff(diff, base / "work")
            if read_tree(base / "work") != mod:
                bad.append(n)
            shutil.rmtree(base)
    return bad


def test_diff_round_trip_random_trees(tmp_path):
    assert diff_round_trip_failures(workdir=tmp_path) == []


def test_rewrite_function_detects_stale_records(tmp_path):
    services, _ = lab_services(tmp_path, {"m": ["x"]})
    ws = tmp_path / "ws"
    shutil.copytree(services.repo_root, ws)
    fn = services.graph.functions[1]
    stale = type(fn)(fn.name, fn.file, fn.start_line, 400)
    with pytest.raises(StaleRecord):
        rewrite_function(ws, stale, "int x;")
    rewrite_function(ws, fn, "int handle_request(void) { return 0; }")
    lines = (ws / "src/http.c").read_text().split("\n")
    assert lines[20] == "int handle_request(void) { return 0; }" and len(lines) == 35 - 13


# ------------------------------------------------------------ refinement

def test_build_failure_feedback_then_valid_patch(tmp_path):
    services, task, pov = with_pov(tmp_path, [IDENTIFY, BROKEN_BRACE, GOOD_PATCH])
    res = run_patch_strategy_detailed(task, [pov], patch_strategy_config("patch_delta"), services)
    assert res.patch is not None and res.patch.status is Status.PASSED
    assert res.patch.pov_signature == pov.signature and res.iterations == 2
    second = services.router.registry["m"].calls[-1]
    assert "does not build" in second.turns[-1].content
    # the conversation that found the POV is reused as the prefix
    assert second.turns[0].content == services.router.registry["m"].calls[0].turns[0].content


def test_context_request_round(tmp_path):
    ask = '{"functions": [{"name": "copy_header", "file": "src/http.c"}]}'
    services, task, pov = with_pov(tmp_path, [IDENTIFY, ask, GOOD_PATCH])
    assert run_patch_strategy(task, [pov], patch_strategy_config("patch_delta"), services) is not None
    assert "memcpy(tmp, src, n);" in services.router.registry["m"].calls[-1].turns[-1].content


def test_iterations_per_model(tmp_path):
    services, task, pov = with_pov(tmp_path, [IDENTIFY] + ["no json here"] * 5)
    res = run_patch_strategy_detailed(task, [pov], patch_strategy_config("patch_delta", max_iterations=5), services)
    assert res.patch is None and res.iterations == 5


def test_patch_strategy_preconditions(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    with pytest.raises(InvariantError):
        run_patch_strategy(task, [], patch_strategy_config("patch_delta"), services)
    with pytest.raises(InvariantError):
        run_patch_strategy(http_task(Mode.FULL_SCAN), [pov], patch_strategy_config("patch_delta"), services)
    with pytest.raises(InvariantError):
        PatchStrategyConfig(identification=Identification.DIFF_ONLY, delta=False)
    assert patch_strategy_config("patch1_full").identification is Identification.LLM_ONLY


def test_identification_variants(tmp_path):
    services, task, pov = with_pov(tmp_path, [])
    diff_only = identify_targets(task, pov.crash_report, patch_strategy_config("patch0_delta"), services)
    assert [f.name for f in diff_only] == ["handle_request"]
    services.evaluator = ScriptedProvider("ev", ['{"functions": [{"name": "copy_header"}, {"name": "ghost"}]}'])
    hybrid = identify_targets(task, pov.crash_report, patch_strategy_config("patch1_delta"), services)
    assert [f.name for f in hybrid] == ["handle_request", "copy_header"]


def test_sample_catalog():
    assert crash_class("ERROR: AddressSanitizer: stack-buffer-overflow on address") == "stack-buffer-overflow"
    assert SamplePatchCatalog().lookup("stack-buffer-overflow")
    assert SamplePatchCatalog().lookup("no-such-class") is None


# ----------------------------------------------------------------- XPatch

def test_xpatch_gate():
    task = make_task(window=100, received_at=0)
    assert not xpatch_gate(task, 49, False)
    assert xpatch_gate(task, 50, False)
    assert not xpatch_gate(task, 99, True)


SCORES = {"A": 9, "B": 7, "C": 6, "D": 8, "E": 7, "F": 10, "G": 8}


def letter_graph():
    fns = [{"name": "entry", "file": "fuzz/f.c", "start_line": 1, "end_line": 2}]
    fns += [{"name": n, "file": "src/x.c", "start_line": 3 + 2 * i, "end_line": 4 + 2 * i} for i, n in enumerate(SCORES)]
    return load_graph({"functions": fns, "edges": [[0, i] for i in range(1, len(fns))],
                       "entrypoints": {"fuzz_http": 0}})


def test_xpatch_full_scan_keeps_top_five_at_seven_or_more(tmp_path):
    reply = json.dumps([{"function": k, "score": v} for k, v in SCORES.items()])
    services, _ = lab_services(tmp_path, {"m": ["x"]}, evaluator=ScriptedProvider("ev", [reply] * 10))
    services.graph = letter_graph()
    picked = select_xpatch_functions(http_task(Mode.FULL_SCAN), services, XPatchConfig())
    assert [f.name for f in picked] == ["F", "A", "D", "G", "B"]


def test_xpatch_delta_uses_modified_functions(tmp_path):
    services, _ = lab_services(tmp_path, {"m": ["x"]})
    assert [f.name for f in select_xpatch_functions(http_task(), services, XPatchConfig())] == ["handle_request"]


def xpatch_services(tmp_path, script, runner_fuzz=None):
    services, lab = lab_services(tmp_path, {"m": script})
    task = http_task(window=60 * 60_000)
    services.submission.register_task(task)
    services.clock.advance(30 * 60_000)
    if runner_fuzz is not None:
        services.runner.fuzz = runner_fuzz
    return services, task


def test_xpatch_accepted_after_clean_fuzz_run(tmp_path):
    services, task = xpatch_services(tmp_path, [GOOD_PATCH])
    start = services.clock.now()
    patch = xpatch_run(task, XPatchConfig(), services, [HTTP])
    assert patch is not None and patch.is_xpatch and patch.pov_signature is None
    assert services.clock.now() - start >= 60_000
    assert services.submission.entry_snapshot(task.task_id, lambda e: e.xpatch_count) == 1


def test_xpatch_rejected_when_fuzzing_crashes(tmp_path):
    seen = []

    def fuzz(target, ws, seconds, seed, corpus=None):
        seen.append(seconds)
        return FuzzResult(CrashFound("==1==ERROR: AddressSanitizer: heap-buffer-overflow", b"boom", 7))

    services, task = xpatch_services(tmp_path, [GOOD_PATCH, "stop"], fuzz)
    assert xpatch_run(task, XPatchConfig(max_iterations=2), services, [HTTP]) is None
    assert seen == [60]
    assert "found a crash" in services.router.registry["m"].calls[1].turns[-1].content


def test_xpatch_waits_for_gate_and_pov(tmp_path):
    services, _ = lab_services(tmp_path, {"m": [GOOD_PATCH]})
    task = http_task(window=60 * 60_000)
    services.submission.register_task(task)
    assert xpatch_run(task, XPatchConfig(), services, [HTTP]) is None  # too early
    assert services.router.requests == 0


def test_xpatch_cap_of_three(tmp_path):
    services, task = xpatch_services(tmp_path, [GOOD_PATCH])
    for i in range(3):
        services.submission.submit_patch(ledger_patch(f"x{i}", i, xpatch=True, task_id=task.task_id))
    assert xpatch_run(task, XPatchConfig(), services, [HTTP]) is None
    assert services.router.requests == 0
    assert services.submission.submit_patch(ledger_patch("x3", 3, xpatch=True, task_id=task.task_id)).status \
        is Status.DUPLICATE


def test_xpatch_config_invariants():
    with pytest.raises(InvariantError):
        XPatchConfig(top_k=0)
