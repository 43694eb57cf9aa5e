"""Patch generation: pick target functions, ask a model for rewrites, turn the
rewrites into a diff and check the diff against four criteria.

Any criterion that is not a definite Pass blocks submission.
"""

from __future__ import annotations

import enum
import json
import logging
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from ..callgraph import function_metadata, reachable_indices
from ..clock import MINUTE
from ..diffs import DiffParseError, PatchApplyError, apply_diff, make_diff
from ..domain import (
    Check,
    ChallengeTask,
    FunctionRecord,
    FuzzerTarget,
    InvariantError,
    Mode,
    PatchSubmission,
    PovSubmission,
    Status,
    ValidationRecord,
    task_signature,
)
from ..harness import Crash, CrashFound
from ..pov.engine import coverage_block, function_source, modified_functions, score_functions, truncate_output
from ..router import AllProvidersExhausted, Conversation
from ..services import Services
from .catalog import SamplePatchCatalog, crash_class

log = logging.getLogger(__name__)

FEEDBACK_LINES = 200


class Identification(str, enum.Enum):
    LLM_ONLY = "LlmOnly"
    DIFF_ONLY = "DiffOnly"
    HYBRID = "Hybrid"
    PATH_AWARE = "PathAware"
    KNOWLEDGE_ENHANCED = "KnowledgeEnhanced"


@dataclass(frozen=True)
class PatchStrategyConfig:
    strategy_name: str = "patch_delta"
    identification: Identification = Identification.LLM_ONLY
    max_iterations: int = 5
    parallel_processes: int = 3
    timeout: int = 30 * MINUTE
    delta: bool = True

    def __post_init__(self):
        if self.identification in (Identification.DIFF_ONLY, Identification.HYBRID) and not self.delta:
            raise InvariantError(f"{self.identification.value} identification needs a delta-scan task")
        if self.max_iterations < 1 or self.parallel_processes < 1:
            raise InvariantError("iterations and processes must be positive")


_PATCH_IDS = {
    "patch": Identification.LLM_ONLY,
    "patch0": Identification.DIFF_ONLY,
    "patch1": Identification.HYBRID,
    "patch2": Identification.PATH_AWARE,
    "patch3": Identification.KNOWLEDGE_ENHANCED,
}

PATCH_STRATEGIES = tuple(f"{p}_{m}" for m in ("delta", "full") for p in _PATCH_IDS)


def patch_strategy_config(name: str, **overrides) -> PatchStrategyConfig:
    stem, mode = name.rsplit("_", 1)
    ident = _PATCH_IDS[stem]
    if mode == "full" and ident in (Identification.DIFF_ONLY, Identification.HYBRID):
        # without a commit the diff half of these variants is empty
        ident = Identification.LLM_ONLY
    return PatchStrategyConfig(strategy_name=name, identification=ident, delta=(mode == "delta"), **overrides)


@dataclass(frozen=True)
class PatchCandidate:
    function: FunctionRecord
    replacement_body: str
    rationale: str = ""

    def __post_init__(self):
        if not self.replacement_body.strip():
            raise InvariantError("replacement body must be non-empty")


@dataclass(frozen=True)
class XPatchConfig:
    trigger_fraction: float = 0.5
    top_k: int = 5
    score_threshold: float = 7
    fuzz_validation_seconds: int = 60
    max_submissions: int = 3
    max_iterations: int = 5

    def __post_init__(self):
        if min(self.trigger_fraction, self.top_k, self.score_threshold, self.fuzz_validation_seconds,
               self.max_submissions, self.max_iterations) <= 0:
            raise InvariantError("XPatch settings must be positive")


# ---------------------------------------------------------------------------
# prompts

PATCH_SYSTEM = (
    "You repair security defects in C, C++ and Java code. Change only what the fix needs and keep "
    "every other behavior of the program as it is."
)

IDENTIFY_SYSTEM = "You locate the functions responsible for a crash so that they can be fixed."

PATH_AWARE_CLAUSE = (
    "List every function that may share responsibility for the defect, including callers or helpers "
    "that never show up in the stack trace."
)

CONTEXT_PROTOCOL = (
    'If you need to see more code first, reply only with JSON of the form '
    '{"functions": [{"name": "fn", "file": "path/to/file.c"}]} and the sources will be sent to you.'
)

ANSWER_FORMAT = (
    'When you are ready to fix, reply with a fenced json block of the form '
    '{"patches": [{"function": "fn", "file": "path/to/file.c", "code": "<the complete new function>"}]}. '
    "Each code value replaces the whole function, signature included."
)


def _json_object(text: str) -> Optional[dict]:
    m = re.search(r"```(?:json)?\s*\n(.*?)```", text, re.S)
    candidates = [m.group(1)] if m else []
    start, end = text.find("{"), text.rfind("}")
    if start >= 0 and end > start:
        candidates.append(text[start:end + 1])
    for c in candidates:
        try:
            doc = json.loads(c)
        except ValueError:
            continue
        if isinstance(doc, dict):
            return doc
    return None


# ---------------------------------------------------------------------------
# target identification


def _dedup(functions: Sequence[FunctionRecord]) -> list[FunctionRecord]:
    seen, out = set(), []
    for f in functions:
        if (f.name, f.file) not in seen:
            seen.add((f.name, f.file))
            out.append(f)
    return out


def _resolve(services: Services, refs: Sequence[dict]) -> list[FunctionRecord]:
    out = []
    for ref in refs:
        name = ref.get("name") or ref.get("function")
        if not name or services.graph is None:
            continue
        found = function_metadata(services.graph, name, ref.get("file") or None)
        if not found:
            log.warning("function %s (%s) not found in the call graph; dropped", name, ref.get("file"))
        out.extend(found[:1])
    return out


def identify_targets(
    task: ChallengeTask,
    crash_report: Optional[str],
    config: PatchStrategyConfig,
    services: Services,
    expert_analysis: Optional[str] = None,
) -> list[FunctionRecord]:
    ident = config.identification
    diff_fns: list[FunctionRecord] = []
    if ident is not Identification.LLM_ONLY and ident is not Identification.KNOWLEDGE_ENHANCED:
        diff_fns = modified_functions(task, services.graph)
    if ident is Identification.DIFF_ONLY:
        return _dedup(diff_fns)
    parts = ["Find the functions that need to change to fix this defect."]
    if task.commit_diff:
        parts.append("The commit below introduced the defect:\n```diff\n" + task.commit_diff + "\n```")
    if crash_report:
        parts.append("Crash report:\n```\n" + truncate_output(crash_report, FEEDBACK_LINES) + "\n```")
    if ident is Identification.PATH_AWARE:
        parts.append(PATH_AWARE_CLAUSE)
    if ident is Identification.KNOWLEDGE_ENHANCED and expert_analysis:
        parts.append("Earlier analysis of this defect:\n" + expert_analysis)
    parts.append('Reply with JSON: {"functions": [{"name": "fn", "file": "path"}]}.')
    conv = Conversation(IDENTIFY_SYSTEM).user("\n\n".join(parts))
    try:
        doc = _json_object(services.judge().complete(conv)) or {}
    except Exception as exc:
        log.warning("target identification failed: %s", exc)
        doc = {}
    llm_fns = _resolve(services, doc.get("functions", []) if isinstance(doc.get("functions"), list) else [])
    return _dedup(diff_fns + llm_fns)


# ---------------------------------------------------------------------------
# workspace edits


class StaleRecord(Exception):
    pass


def fresh_workspace(repo_root: Path, services: Services, label: str) -> Path:
    dest = services.private_dir(label) / "repo"
    shutil.copytree(repo_root, dest, symlinks=True, ignore=shutil.ignore_patterns(".git"))
    return dest


def rewrite_function(workspace: Path, function: FunctionRecord, replacement_body: str) -> Path:
    """Replace the function's line span in ``workspace`` (edited in place)."""
    path = Path(workspace) / function.file
    if not path.is_file():
        raise StaleRecord(f"{function.file} does not exist")
    text = path.read_bytes().decode("utf-8", "surrogateescape")
    lines = text.split("\n")
    if function.end_line > len(lines) or (function.end_line == len(lines) and text.endswith("\n")):
        raise StaleRecord(f"{function.name}: lines {function.start_line}-{function.end_line} outside {function.file}")
    span = lines[function.start_line - 1:function.end_line]
    if function.source is not None and "\n".join(span) != function.source.rstrip("\n"):
        raise StaleRecord(f"{function.name}: recorded source no longer matches {function.file}")
    body = replacement_body.rstrip("\n").split("\n")
    lines[function.start_line - 1:function.end_line] = body
    path.write_bytes("\n".join(lines).encode("utf-8", "surrogateescape"))
    return Path(workspace)


def apply_candidates(workspace: Path, candidates: Sequence[PatchCandidate]) -> None:
    # bottom-up, so earlier line numbers stay valid within a file
    for c in sorted(candidates, key=lambda c: (c.function.file, -c.function.start_line)):
        rewrite_function(workspace, c.function, c.replacement_body)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    record: ValidationRecord
    feedback: str = ""
    aborted: bool = False


def check_patch(
    diff_text: str,
    task: ChallengeTask,
    known_povs: Sequence[PovSubmission],
    services: Services,
    *,
    fuzz_targets: Sequence[FuzzerTarget] = (),
    fuzz_seconds: int = 0,
    label: str = "validate",
) -> ValidationReport:
    """applies -> compiles -> povs_blocked -> tests_pass, stopping at the first Fail.

    With ``fuzz_targets`` the POV criterion becomes a timed fuzz run per target.
    """
    rec = ValidationRecord()
    repo = services.repo_root
    try:
        ws = fresh_workspace(repo, services, label)
        apply_diff(diff_text, ws)
    except (DiffParseError, PatchApplyError) as exc:
        return ValidationReport(ValidationRecord(applies=Check.FAIL), f"The diff does not apply: {exc}")
    except OSError as exc:
        return ValidationReport(rec, f"workspace setup failed: {exc}", aborted=True)
    rec = ValidationRecord(applies=Check.PASS)

    try:
        build = services.runner.build(ws)
    except Exception as exc:
        return ValidationReport(rec, f"build infrastructure failed: {exc}", aborted=True)
    if not build.ok:
        return ValidationReport(ValidationRecord(Check.PASS, Check.FAIL),
                                "The patched code does not build:\n" + truncate_output(build.diagnostics, FEEDBACK_LINES))
    rec = ValidationRecord(Check.PASS, Check.PASS)

    try:
        if fuzz_targets:
            for i, t in enumerate(fuzz_targets):
                res = services.runner.fuzz(t, ws, fuzz_seconds, services.seed + i)
                if isinstance(res.outcome, CrashFound):
                    return ValidationReport(
                        ValidationRecord(Check.PASS, Check.PASS, Check.FAIL),
                        f"Fuzzing the patched build for {fuzz_seconds}s on {t.key} found a crash:\n"
                        + truncate_output(res.outcome.report, FEEDBACK_LINES))
        else:
            for pov in known_povs:
                outcome = services.runner.run(pov.target, pov.input_blob, ws)
                if isinstance(outcome, Crash):
                    fb = "The known crashing input still crashes the patched build:\n" + truncate_output(
                        outcome.report, FEEDBACK_LINES)
                    return ValidationReport(ValidationRecord(Check.PASS, Check.PASS, Check.FAIL), fb)
    except Exception as exc:
        return ValidationReport(rec, f"harness infrastructure failed: {exc}", aborted=True)
    rec = ValidationRecord(Check.PASS, Check.PASS, Check.PASS)

    try:
        results = services.runner.functionality_tests(ws)
    except Exception as exc:
        return ValidationReport(rec, f"test infrastructure failed: {exc}", aborted=True)
    failed = [r for r in results if not r.passed]
    if failed:
        fb = "Functionality tests failed:\n" + "\n".join(f"- {r.name}: {r.detail}" for r in failed)
        return ValidationReport(ValidationRecord(Check.PASS, Check.PASS, Check.PASS, Check.FAIL), fb)
    return ValidationReport(ValidationRecord(Check.PASS, Check.PASS, Check.PASS, Check.PASS))


def validate_patch(diff_text: str, task: ChallengeTask, known_povs: Sequence[PovSubmission],
                   services: Services) -> ValidationRecord:
    return check_patch(diff_text, task, known_povs, services).record


# ---------------------------------------------------------------------------
# the refinement loop


def _function_block(fn: FunctionRecord, services: Services) -> str:
    return (f"Function `{fn.name}` in {fn.file}, lines {fn.start_line}-{fn.end_line}:\n```\n"
            + function_source(fn, services.repo_root) + "\n```")


def _candidates(doc: dict, targets: Sequence[FunctionRecord], services: Services) -> list[PatchCandidate]:
    out = []
    for row in doc.get("patches", []):
        name, code = row.get("function"), row.get("code", "")
        if not name or not code.strip():
            continue
        pool = [t for t in targets if t.name == name and (not row.get("file") or t.file.endswith(row["file"])
                                                          or row["file"].endswith(t.file))]
        if not pool:
            pool = _resolve(services, [{"name": name, "file": row.get("file")}])
        if pool:
            out.append(PatchCandidate(pool[0], code, row.get("rationale", "")))
    return out


@dataclass
class LoopResult:
    patch: Optional[PatchSubmission] = None
    iterations: int = 0
    log: list[str] = field(default_factory=list)


def _refine(
    task: ChallengeTask,
    first: Conversation,
    targets: Sequence[FunctionRecord],
    config_name: str,
    max_iterations: int,
    deadline: int,
    services: Services,
    validate: Callable[[str, str], ValidationReport],
    make_submission: Callable[[str, ValidationRecord], PatchSubmission],
    extra_feedback: Callable[[str], str] = lambda _ws: "",
    cancelled: Callable[[], bool] = lambda: False,
) -> LoopResult:
    result = LoopResult()
    for model in services.router.priority.names:
        conv = first
        for it in range(1, max_iterations + 1):
            if services.clock.now() >= deadline or services.should_stop() or cancelled():
                result.log.append("stopped: out of time or cancelled")
                return result
            result.iterations += 1
            label = f"{config_name}-{model}-{it}"
            try:
                _, text = services.router.complete(conv, first=model)
            except AllProvidersExhausted as exc:
                result.log.append(f"{label}: {exc}")
                break
            conv = conv.assistant(text)
            doc = _json_object(text)
            if doc is None:
                conv = conv.user("That reply had no JSON I could read. " + ANSWER_FORMAT)
                result.log.append(f"{label}: unreadable reply")
                continue
            if "patches" not in doc and isinstance(doc.get("functions"), list):
                found = _resolve(services, doc["functions"])
                blocks = [_function_block(f, services) for f in found] or ["None of the requested functions exist."]
                conv = conv.user("Requested sources:\n\n" + "\n\n".join(blocks) + "\n\n" + ANSWER_FORMAT)
                result.log.append(f"{label}: context request for {len(doc['functions'])} functions")
                continue
            try:
                cands = _candidates(doc, targets, services)
                if not cands:
                    raise StaleRecord("the reply named no known function")
                ws = fresh_workspace(services.repo_root, services, label)
                apply_candidates(ws, cands)
            except (StaleRecord, InvariantError) as exc:
                conv = conv.user(f"The rewrite could not be applied: {exc}\n\n" + ANSWER_FORMAT)
                result.log.append(f"{label}: rewrite failed ({exc})")
                continue
            diff = make_diff(services.repo_root, ws)
            if not diff:
                conv = conv.user("The rewrite changes nothing. " + ANSWER_FORMAT)
                result.log.append(f"{label}: empty diff")
                continue
            report = validate(diff, label)
            result.log.append(f"{label}: {_summary(report.record)}")
            if report.record.valid:
                submission = make_submission(diff, report.record)
                decision = services.submission.submit_patch(submission)
                log.info("%s: patch %s %s", config_name, submission.patch_id, decision.outcome.value)
                status = decision.status if decision.status is not Status.PENDING else Status.PENDING
                result.patch = submission if status is Status.PENDING else submission.with_status(status)
                return result
            if report.aborted:
                # an infrastructure failure leaves a criterion Unknown: never submit
                conv = conv.user("Validation could not finish: " + report.feedback)
                continue
            fb = truncate_output(report.feedback, FEEDBACK_LINES)
            more = extra_feedback(str(ws))
            conv = conv.user("The patch was rejected.\n" + fb + (("\n\n" + more) if more else "")
                             + "\n\nRevise it. " + ANSWER_FORMAT)
    return result


def _summary(rec: ValidationRecord) -> str:
    return ", ".join(f"{k}={getattr(rec, k).value}" for k in ("applies", "compiles", "povs_blocked", "tests_pass"))


def run_patch_strategy(
    task: ChallengeTask,
    povs: Sequence[PovSubmission],
    config: PatchStrategyConfig,
    services: Services,
    catalog: Optional[SamplePatchCatalog] = None,
) -> Optional[PatchSubmission]:
    return run_patch_strategy_detailed(task, povs, config, services, catalog).patch


def run_patch_strategy_detailed(
    task: ChallengeTask,
    povs: Sequence[PovSubmission],
    config: PatchStrategyConfig,
    services: Services,
    catalog: Optional[SamplePatchCatalog] = None,
) -> LoopResult:
    if not povs:
        raise InvariantError("POV-based patch strategies need at least one POV")
    if config.delta and task.mode is not Mode.DELTA_SCAN:
        raise InvariantError(f"{config.strategy_name} runs on delta-scan tasks only")
    deadline = services.clock.now() + config.timeout
    pov = povs[0]
    history = services.pov_conversations.get(pov.pov_id)
    expert = history.first_assistant() if history is not None else None
    targets = identify_targets(task, pov.crash_report, config, services, expert_analysis=expert)

    parts = ["A fuzzing harness found an input that crashes this program. Write a fix."]
    if task.commit_diff:
        parts.append("The defect came in with this commit:\n```diff\n" + task.commit_diff + "\n```")
    parts.append("Crash report:\n```\n" + truncate_output(pov.crash_report, FEEDBACK_LINES) + "\n```")
    if targets:
        parts.append("Functions most likely at fault:\n\n" + "\n\n".join(_function_block(f, services) for f in targets))
    else:
        parts.append("No function could be pinned down; ask for the sources you need.")
    if config.identification is Identification.PATH_AWARE:
        parts.append(PATH_AWARE_CLAUSE)
    if config.identification is Identification.KNOWLEDGE_ENHANCED:
        if expert:
            parts.append("Earlier expert analysis of this defect:\n" + expert)
        example = (catalog or SamplePatchCatalog()).lookup(crash_class(pov.crash_report))
        if example:
            parts.append("An example fix for this class of crash:\n```diff\n" + example + "```")
    parts.append(CONTEXT_PROTOCOL)
    parts.append(ANSWER_FORMAT)
    request = "\n\n".join(parts)
    if history is not None:
        first = Conversation(history.system_prompt, history.turns).user(request)
    else:
        first = Conversation(PATCH_SYSTEM).user(request)

    def extra(ws: str) -> str:
        if config.identification is not Identification.PATH_AWARE:
            return ""
        cov = services.runner.coverage(pov.target, pov.input_blob, Path(ws))
        return coverage_block(cov)

    def submission(diff: str, rec: ValidationRecord) -> PatchSubmission:
        return PatchSubmission(services.submission.new_id("patch"), task.task_id, diff,
                               pov_signature=pov.signature, validation=rec)

    return _refine(task, first, targets, config.strategy_name, config.max_iterations, deadline, services,
                   lambda d, label: check_patch(d, task, povs, services, label=label + "-check"),
                   submission, extra)


# ---------------------------------------------------------------------------
# XPatch


def xpatch_gate(task: ChallengeTask, now: int, has_pov: bool, config: XPatchConfig = XPatchConfig()) -> bool:
    return not has_pov and (now - task.received_at) >= config.trigger_fraction * task.time_window


def select_xpatch_functions(task: ChallengeTask, services: Services, config: XPatchConfig) -> list[FunctionRecord]:
    if task.mode is Mode.DELTA_SCAN:
        return modified_functions(task, services.graph)
    graph = services.graph
    if graph is None:
        return []
    indices = sorted({i for h in task.harness_names if h in graph.entrypoints for i in reachable_indices(graph, h)})
    try:
        scores = score_functions(graph, indices, task.language, services.judge(), services.repo_root)
    except Exception as exc:
        log.warning("XPatch scoring failed: %s", exc)
        return []
    kept = [(i, s) for i, s in scores.items() if s >= config.score_threshold]
    kept.sort(key=lambda kv: (-kv[1], kv[0]))
    return [graph.functions[i] for i, _ in kept[:config.top_k]]


def xpatch_run(
    task: ChallengeTask,
    config: XPatchConfig,
    services: Services,
    fuzz_targets: Sequence[FuzzerTarget],
    name: str = "",
) -> Optional[PatchSubmission]:
    """Speculative patch for a task with no POV, validated by fuzzing."""
    def has_pov() -> bool:
        return services.submission.has_passed_pov(task.task_id)

    if not xpatch_gate(task, services.clock.now(), has_pov(), config):
        return None
    xcount = services.submission.entry_snapshot(task.task_id, lambda e: e.xpatch_count)
    if xcount >= config.max_submissions:
        return None
    name = name or ("xpatch_delta" if task.mode is Mode.DELTA_SCAN else "xpatch_full")
    targets = select_xpatch_functions(task, services, config)
    if not targets:
        log.info("%s: no candidate functions", name)
        return None
    parts = ["No crashing input is known yet, but the defect lies within one or more of the functions below. "
             "Find it and write a fix."]
    if task.commit_diff:
        parts.append("These functions changed in this commit:\n```diff\n" + task.commit_diff + "\n```")
    parts.append("\n\n".join(_function_block(f, services) for f in targets))
    parts.append(CONTEXT_PROTOCOL)
    parts.append(ANSWER_FORMAT)
    first = Conversation(PATCH_SYSTEM).user("\n\n".join(parts))

    def submission(diff: str, rec: ValidationRecord) -> PatchSubmission:
        return PatchSubmission(services.submission.new_id("xpatch"), task.task_id, diff, is_xpatch=True,
                               validation=rec)

    res = _refine(task, first, targets, name, config.max_iterations, task.deadline, services,
                  lambda d, label: check_patch(d, task, (), services, fuzz_targets=fuzz_targets,
                                               fuzz_seconds=config.fuzz_validation_seconds, label=label + "-check"),
                  submission, cancelled=has_pov)
    return res.patch


def xpatch_group(task: ChallengeTask) -> str:
    return task_signature(task.task_id).key
