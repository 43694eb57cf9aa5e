"""Scenario manifests: everything one deterministic end-to-end run needs.

A scenario names a lab target, an optional call graph, SARIF inputs, scripted
model providers and evaluators, run settings and expected outcomes.  Paths
inside a manifest are relative to the manifest's directory.  See
``fixtures/README.md`` for the schema.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..callgraph import load_graph
from ..clock import MINUTE
from ..coordinator import BudgetPolicy, RunConfig, SarifInput
from ..domain import ChallengeTask, InvariantError, Language, Mode, Verdict
from ..patch.engine import XPatchConfig
from ..pov.executors import make_executor
from ..router import ModelPriorityList, ModelRouter, ScriptedProvider, parse_script_entry
from ..sarif import parse_sarif_results
from ..services import Services
from ..submission import SubmissionService
from .client import LabCompetitionClient
from .runner import LabHarnessRunner
from .target import LabTarget

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    """The manifest or one of the files it names is missing or malformed."""


_RUN_KEYS = {
    "workers", "pov_strategies", "patch_strategies", "xpatch_strategies", "patch_processes",
    "fuzzer_enabled", "fuzz_slice_seconds", "xpatch", "pov_overrides", "patch_overrides",
}


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None


def _script(entries: list, base: Path) -> list:
    out = []
    for e in entries:
        if isinstance(e, dict) and "file" in e:
            p = base / e["file"]
            if not p.is_file():
                raise ManifestError(f"{p}: script file missing")
            out.append(p.read_text())
        else:
            try:
                out.append(parse_script_entry(e))
            except ValueError as exc:
                raise ManifestError(str(exc)) from None
    return out


@dataclass
class Scenario:
    path: Path
    doc: dict
    task: ChallengeTask
    target: LabTarget
    graph_doc: Optional[dict] = None
    sarif_docs: list[tuple[dict, Optional[Verdict]]] = field(default_factory=list)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        return cls.from_doc(_read_json(path), path)

    @classmethod
    def from_doc(cls, doc: dict, path: str | Path) -> "Scenario":
        """``path`` is where the manifest lives (or would live); relative paths resolve against its folder."""
        path = Path(path)
        if not isinstance(doc, dict):
            raise ManifestError(f"{path}: manifest must be a JSON object")
        base = path.parent
        for key in ("task", "target"):
            if key not in doc:
                raise ManifestError(f"{path}: missing '{key}'")
        try:
            target = LabTarget.load(base / doc["target"])
        except (KeyError, ValueError, InvariantError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"{base / doc['target']}: {exc}") from None
        except FileNotFoundError:
            raise ManifestError(f"{base / doc['target']}: no such file") from None
        t = dict(doc["task"])
        if "commit_diff_file" in t:
            p = base / t.pop("commit_diff_file")
            if not p.is_file():
                raise ManifestError(f"{p}: no such file")
            t["commit_diff"] = p.read_text()
        try:
            window = int(t["time_window_minutes"] * MINUTE) if "time_window_minutes" in t else int(t["time_window"])
            task = ChallengeTask(
                task_id=t["task_id"],
                mode=Mode(t["mode"]),
                project_name=t.get("project_name", target.name),
                repo_root=t.get("repo_root", f"lab://{target.name}"),
                language=Language(t.get("language", target.language.value)),
                time_window=window,
                received_at=int(t.get("received_at", 0)),
                harness_names=tuple(t.get("harness_names", sorted(target.harnesses))),
                base_state_ref=t.get("base_state_ref"),
                commit_diff=t.get("commit_diff"),
            )
        except (KeyError, ValueError, InvariantError) as exc:
            raise ManifestError(f"{path}: bad task: {exc}") from None
        unknown = set(task.harness_names) - set(target.harnesses)
        if unknown:
            raise ManifestError(f"{path}: task names harnesses the target lacks: {sorted(unknown)}")
        graph_doc = _read_json(base / doc["graph"]) if doc.get("graph") else None
        sarif_docs = []
        for item in doc.get("sarif", []):
            sdoc = item["document"] if "document" in item else _read_json(base / item["file"])
            truth = Verdict(item["truth"]) if item.get("truth") else None
            sarif_docs.append((sdoc, truth))
        bad = set(doc.get("run", {})) - _RUN_KEYS
        if bad:
            raise ManifestError(f"{path}: unknown run keys {sorted(bad)}")
        return cls(path, doc, task, target, graph_doc, sarif_docs)

    # ------------------------------------------------------------------ boot

    def policy(self) -> BudgetPolicy:
        try:
            if "policy_file" in self.doc:
                return BudgetPolicy.from_file(self.path.parent / self.doc["policy_file"])
            return BudgetPolicy.from_doc(self.doc.get("policy", {}))
        except (ValueError, FileNotFoundError) as exc:
            raise ManifestError(f"policy: {exc}") from None

    def run_config(self) -> RunConfig:
        run = dict(self.doc.get("run", {}))
        if "xpatch" in run:
            run["xpatch"] = XPatchConfig(**run["xpatch"])
        return RunConfig(**run)

    def boot(self, workroot: Path, clock, seed: int = 0, providers: Optional[ModelRouter] = None) -> "Booted":
        """Build every service for one run under ``workroot``."""
        from ..coordinator import CorpusManager  # late: coordinator imports the engines

        base = self.path.parent
        workroot = Path(workroot)
        repo = self.target.materialize(workroot / "repo")
        costs = self.doc.get("costs", {})
        runner = LabHarnessRunner(self.target, clock, int(costs.get("exec_ms", 0)), int(costs.get("build_ms", 0)))

        scripted: list[ScriptedProvider] = []
        if providers is None:
            pdoc = self.doc.get("providers", {})
            latency = int(pdoc.get("latency_ms", 0))
            registry = {}
            for name, entries in pdoc.get("scripts", {}).items():
                prov = ScriptedProvider(name, _script(entries, base), clock=clock, latency_ms=latency)
                registry[name] = prov
                scripted.append(prov)
            if not registry:
                raise ManifestError(f"{self.path}: no provider scripts and no live providers")
            priority = tuple(pdoc.get("priority", list(registry)))
            missing = [n for n in priority if n not in registry]
            if missing:
                raise ManifestError(f"{self.path}: priority names unscripted providers {missing}")
            router = ModelRouter(registry, ModelPriorityList(priority), deadline_s=None)
        else:
            router = providers

        edoc = self.doc.get("evaluators", {})
        evaluators = []
        for name, entries in edoc.get("scripts", {}).items():
            ev = ScriptedProvider(name, _script(entries, base), clock=clock, latency_ms=int(edoc.get("latency_ms", 0)))
            evaluators.append(ev)
            scripted.append(ev)
        if evaluators and len(evaluators) != 3:
            raise ManifestError(f"{self.path}: exactly three evaluators are needed, got {len(evaluators)}")
        match_ev = judge = None
        if "match_evaluator" in self.doc:
            match_ev = ScriptedProvider("match", _script(self.doc["match_evaluator"], base), clock=clock)
            scripted.append(match_ev)
        if "judge" in self.doc:
            judge = ScriptedProvider("judge", _script(self.doc["judge"], base), clock=clock)
            scripted.append(judge)

        sarif_inputs = []
        truths: dict[str, Verdict] = {}
        for i, (sdoc, truth) in enumerate(self.sarif_docs):
            try:
                records = parse_sarif_results(sdoc, self.task.task_id, id_prefix=f"sarif-{i + 1}")
            except ValueError as exc:
                raise ManifestError(f"sarif[{i}]: {exc}") from None
            for rec in records:
                sarif_inputs.append(SarifInput(rec))
                if truth is not None:
                    truths[rec.sarif_id] = truth

        client = LabCompetitionClient(self.target, truths, self.doc.get("client", {}).get("overrides"))
        submission = SubmissionService(client, clock=clock, evaluators=evaluators, match_evaluator=match_ev,
                                       project_root_markers=(self.target.root_marker,))
        script_language = self.doc.get("script_language", "bytegen")
        executor = make_executor(script_language, clock)
        if costs.get("script_ms") and hasattr(executor, "cost_ms"):
            executor.cost_ms = int(costs["script_ms"])
        graph = load_graph(self.graph_doc) if self.graph_doc is not None else None
        harness_sources = {}
        for h, rel in self.doc.get("harness_sources", {}).items():
            if rel not in self.target.source_files:
                raise ManifestError(f"{self.path}: harness source {rel} not in target sources")
            harness_sources[h] = self.target.source_files[rel]
        services = Services(
            router=router,
            runner=runner,
            executor=executor,
            submission=submission,
            clock=clock,
            workroot=workroot / "work",
            repo_root=repo,
            graph=graph,
            corpus=CorpusManager(workroot / "corpus", clock),
            evaluator=judge,
            harness_sources=harness_sources,
            project_root_markers=(self.target.root_marker,),
            script_language=script_language,
            seed=seed,
        )
        return Booted(self, services, sarif_inputs, evaluators, scripted)


@dataclass
class Booted:
    scenario: Scenario
    services: Services
    sarif_inputs: list[SarifInput]
    evaluators: list
    scripted: list[ScriptedProvider]

    def script_problems(self) -> list[str]:
        out = []
        for p in self.scripted:
            if p.remaining:
                out.append(f"{p.name}: {p.remaining} scripted responses left unused")
            if p.overruns:
                out.append(f"{p.name}: called {p.overruns} times past the end of its script")
        return out

    def check_expectations(self, report: dict) -> list[str]:
        exp = self.scenario.doc.get("expect", {})
        problems = []
        if exp.get("scripts_consumed", True):
            problems += self.script_problems()
        passed_povs = [p for p in report["povs"] if p["status"] == "Passed"]
        passed_patches = [p for p in report["patches"] if p["status"] == "Passed"]
        if "povs" in exp and len(passed_povs) != exp["povs"]:
            problems.append(f"expected {exp['povs']} passed POVs, got {len(passed_povs)}")
        if "patches" in exp and len(passed_patches) != exp["patches"]:
            problems.append(f"expected {exp['patches']} passed patches, got {len(passed_patches)}")
        if "xpatches" in exp:
            n = sum(1 for p in passed_patches if p["is_xpatch"])
            if n != exp["xpatches"]:
                problems.append(f"expected {exp['xpatches']} passed XPatches, got {n}")
        if "bundle_sizes" in exp:
            sizes = sorted(sum(1 for k in ("pov_id", "patch_id", "sarif_id") if b.get(k)) for b in report["bundles"])
            if sizes != sorted(exp["bundle_sizes"]):
                problems.append(f"expected bundle sizes {exp['bundle_sizes']}, got {sizes}")
        if "pov_strategy" in exp and passed_povs and passed_povs[0]["strategy"] != exp["pov_strategy"]:
            problems.append(f"expected the POV from {exp['pov_strategy']}, got {passed_povs[0]['strategy']}")
        return problems


def run_scenario(path: str | Path, *, clock=None, seed: int = 0,
                 providers: Optional[ModelRouter] = None, provider_doc: Optional[dict] = None):
    """Load, boot and run a scenario in a throwaway work directory.

    Returns ``(report, problems)``; ``problems`` lists unmet expectations and
    script consumption errors, and is also stored in the report.
    """
    import tempfile

    from ..clock import SimulatedClock
    from ..coordinator import orchestrate

    scenario = Scenario.load(path)
    if provider_doc is not None:
        scenario.doc = dict(scenario.doc, providers=provider_doc)
    clock = clock if clock is not None else SimulatedClock(scenario.task.received_at)
    if clock.now() < scenario.task.received_at and hasattr(clock, "set"):
        clock.set(scenario.task.received_at)
    with tempfile.TemporaryDirectory(prefix="crsim-") as tmp:
        booted = scenario.boot(Path(tmp), clock, seed=seed, providers=providers)
        try:
            report = orchestrate(scenario.task, booted.services, scenario.policy(), scenario.run_config(),
                                 booted.sarif_inputs, booted.evaluators)
        finally:
            booted.services.submission.close()
        problems = booted.check_expectations(report) if providers is None else []
    report["scenario"] = {"name": scenario.doc.get("name", scenario.path.stem), "seed": seed,
                          "problems": problems}
    return report, problems
