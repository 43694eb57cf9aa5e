import os
from pathlib import Path

import pytest
from hypothesis import settings

from crsim.domain import ChallengeTask, CrashSignature, FuzzerTarget, Language, Mode, Sanitizer, SignatureKind

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SIMPLE_DIFF = "--- a/src/a.c\n+++ b/src/a.c\n@@ -1 +1 @@\n-x\n+y\n"


def make_task(task_id="t1", mode=Mode.DELTA_SCAN, language=Language.C_CPP, window=240 * 60_000,
              harnesses=("fuzz_a",), received_at=0, diff=SIMPLE_DIFF):
    return ChallengeTask(
        task_id=task_id, mode=mode, project_name="proj", repo_root="lab://proj", language=language,
        time_window=window, received_at=received_at, harness_names=tuple(harnesses),
        commit_diff=diff if mode is Mode.DELTA_SCAN else None,
    )


def loc_sig(file="src/a.c", line=10, sanitizer=Sanitizer.ADDRESS):
    return CrashSignature(SignatureKind.LOCATION, sanitizer, file=file, line=line)


def target(task_id="t1", harness="fuzz_a", sanitizer=Sanitizer.ADDRESS):
    return FuzzerTarget(harness, sanitizer, task_id)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


CRASH_HTTP = 'Aim at copy_header.\n\n```bytegen\nliteral b"POST /a\\n"\nrepeat b"A" 100\nwrite x.bin\n```\n'
MISS_HTTP = 'Try a short header.\n\n```bytegen\nliteral b"POST /a\\nHost: x"\nwrite x.bin\n```\n'


def lab_services(tmp_path, scripts, target_name="labhttp", evaluator=None, clock=None, graph=True,
                 client=None, priority=None):
    """Services wired to a lab target with scripted providers (one script per model name)."""
    from crsim.callgraph import load_graph
    from crsim.clock import SimulatedClock
    from crsim.lab.bytegen import BytegenExecutor
    from crsim.lab.client import LabCompetitionClient
    from crsim.lab.runner import LabHarnessRunner
    from crsim.lab.target import LabTarget
    from crsim.router import ModelPriorityList, ModelRouter, ScriptedProvider
    from crsim.services import Services
    from crsim.submission import SubmissionService

    clock = clock or SimulatedClock()
    lab = LabTarget.load(FIXTURES / "targets" / f"{target_name}.json")
    registry = {n: ScriptedProvider(n, s) for n, s in scripts.items()}
    router = ModelRouter(registry, ModelPriorityList(tuple(priority or scripts)), deadline_s=None)
    gpath = FIXTURES / "graphs" / f"{target_name}.json"
    return Services(
        router=router,
        runner=LabHarnessRunner(lab, clock),
        executor=BytegenExecutor(clock),
        submission=SubmissionService(client or LabCompetitionClient(lab), clock=clock,
                                     project_root_markers=(lab.root_marker,)),
        clock=clock,
        workroot=tmp_path / "work",
        repo_root=lab.materialize(tmp_path / "repo"),
        graph=load_graph(gpath.read_text()) if graph and gpath.exists() else None,
        evaluator=evaluator,
        harness_sources={h: "// harness " + h for h in lab.harnesses},
        project_root_markers=(lab.root_marker,),
        script_language="bytegen",
    ), lab


def http_task(mode=Mode.DELTA_SCAN, window=240 * 60_000):
    diff = (FIXTURES / "scenarios" / "basic" / "commit.diff").read_text()
    return ChallengeTask(task_id="task-http", mode=mode, project_name="labhttp", repo_root="lab://labhttp",
                         language=Language.C_CPP, time_window=window, harness_names=("fuzz_http",),
                         commit_diff=diff if mode is Mode.DELTA_SCAN else None)
