"""Iterative POV generation.

One attempt = ask a model for a generator script, run the script in a private
directory, feed each produced file to the harness.  A crash is replayed once
and then submitted; anything else turns into a feedback turn.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from ..callgraph import PathQueryLimits, call_paths, functions_touching, reachable_indices
from ..clock import MINUTE
from ..diffs import changed_lines
from ..domain import (
    CallGraph,
    ChallengeTask,
    CoverageSummary,
    FunctionRecord,
    FuzzerTarget,
    InvariantError,
    Language,
    Mode,
    PovSubmission,
    Status,
)
from ..harness import Crash, NoCrash, Outcome
from ..router import AllProvidersExhausted, Conversation
from ..services import Services
from ..signature import parse_crash_report
from . import prompts

log = logging.getLogger(__name__)

MAX_ITERATIONS = 5
DEFAULT_TIMEOUT_MS = 30 * MINUTE
GENERATOR_TIMEOUT_S = 60.0
FEEDBACK_LINES = 200
MODIFIED_FUNCTION_LINES = 2000


@dataclass(frozen=True)
class PovStrategyConfig:
    strategy_name: str = "xs0_delta"
    max_iterations: int = MAX_ITERATIONS
    timeout: int = DEFAULT_TIMEOUT_MS
    multi_input: bool = False
    inputs_per_iteration: int = 1
    cwe_catalog: Optional[tuple[tuple[str, str], ...]] = None
    use_call_paths: bool = False
    modified_context: bool = False
    full_scan_ranking: bool = False
    ranking_models: int = 1
    top_functions: int = 5
    script_language: str = "python"

    def __post_init__(self):
        if self.multi_input != (self.inputs_per_iteration == 5):
            raise InvariantError("multi-input strategies produce exactly five files per iteration")
        if self.inputs_per_iteration not in (1, 5):
            raise InvariantError("inputs_per_iteration is 1 or 5")
        if self.max_iterations < 1:
            raise InvariantError("max_iterations must be at least 1")

    @property
    def expected_outputs(self) -> list[str]:
        if self.multi_input:
            return [f"x{i}.bin" for i in range(1, 6)]
        return ["x.bin"]


# Strategy presets by the names used in task rosters.
STRATEGIES: dict[str, dict] = {
    "xs0_delta": dict(),
    "as0_delta": dict(multi_input=True, inputs_per_iteration=5, cwe_catalog=(), modified_context=True,
                      use_call_paths=True),
    "xs0_c_full": dict(full_scan_ranking=True),
    "xs0_java_full": dict(full_scan_ranking=True),
    "xs1_c_full": dict(full_scan_ranking=True, ranking_models=2),
    "xs1_java_full": dict(full_scan_ranking=True, ranking_models=2),
    "xs2_java_full": dict(full_scan_ranking=True, ranking_models=2, cwe_catalog=()),
    "as0_full": dict(full_scan_ranking=True, multi_input=True, inputs_per_iteration=5, cwe_catalog=()),
    "sarif_POV0": dict(),
}

# (mode, languages) each POV strategy runs for
STRATEGY_SCOPE: dict[str, tuple[Mode, frozenset]] = {
    "xs0_delta": (Mode.DELTA_SCAN, frozenset(Language)),
    "as0_delta": (Mode.DELTA_SCAN, frozenset(Language)),
    "xs0_c_full": (Mode.FULL_SCAN, frozenset({Language.C_CPP})),
    "xs0_java_full": (Mode.FULL_SCAN, frozenset({Language.JAVA})),
    "xs1_c_full": (Mode.FULL_SCAN, frozenset({Language.C_CPP})),
    "xs1_java_full": (Mode.FULL_SCAN, frozenset({Language.JAVA})),
    "xs2_java_full": (Mode.FULL_SCAN, frozenset({Language.JAVA})),
    "as0_full": (Mode.FULL_SCAN, frozenset(Language)),
}


def strategy_config(name: str, language: Language = Language.C_CPP, **overrides) -> PovStrategyConfig:
    preset = dict(STRATEGIES[name])
    if preset.get("cwe_catalog") == ():
        preset["cwe_catalog"] = prompts.default_catalog(language)
    preset.update(overrides)
    return PovStrategyConfig(strategy_name=name, **preset)


# ---------------------------------------------------------------------------
# prompt assembly


def modified_functions(task: ChallengeTask, graph: Optional[CallGraph]) -> list[FunctionRecord]:
    if not task.commit_diff or graph is None:
        return []
    return functions_touching(graph, changed_lines(task.commit_diff))


def function_source(fn: FunctionRecord, repo_root: Optional[Path], cap: int = MODIFIED_FUNCTION_LINES) -> str:
    text = fn.source
    if text is None and repo_root is not None:
        p = Path(repo_root) / fn.file
        if p.is_file():
            lines = p.read_text(errors="replace").split("\n")
            text = "\n".join(lines[fn.start_line - 1:fn.end_line])
    if text is None:
        return "(source unavailable)"
    lines = text.split("\n")
    if len(lines) > cap:
        lines = lines[:cap] + [f"[... {len(lines) - cap} more lines omitted]"]
    return "\n".join(lines)


def build_initial_prompt(
    task: ChallengeTask,
    target: FuzzerTarget,
    harness_source: str,
    config: PovStrategyConfig,
    extra_sections: Sequence[str] = (),
    intro: Optional[str] = None,
) -> Conversation:
    """System prompt plus the first user turn.

    Section order: commit diff (delta only), harness source, sanitizer and
    language guidance, extra sections, then the output contract.
    """
    delta = config.strategy_name.endswith("_delta")
    if delta and not task.commit_diff:
        raise InvariantError(f"{config.strategy_name} needs the commit diff")
    parts = [intro or (prompts.DELTA_INTRO if delta else prompts.FULL_INTRO)]
    if delta:
        parts.append("Commit diff:\n```diff\n" + task.commit_diff.rstrip("\n") + "\n```")
    parts.append(f"Harness `{target.harness_name}`:\n```\n" + harness_source.rstrip("\n") + "\n```")
    parts.append(prompts.SANITIZER_GUIDANCE[target.sanitizer])
    parts.append(prompts.LANGUAGE_GUIDANCE[task.language])
    if config.cwe_catalog:
        parts.append(prompts.cwe_section(config.cwe_catalog))
    parts.extend(s for s in extra_sections if s)
    if config.script_language == "bytegen":
        parts.append(prompts.BYTEGEN_HELP)
    parts.append(prompts.contract_sentence(config.expected_outputs, config.script_language))
    return Conversation(prompts.SYSTEM_PROMPT).user("\n\n".join(parts))


# ---------------------------------------------------------------------------
# script extraction and execution


class NoCodeBlock(Exception):
    pass


class ExecutorFailure(Exception):
    def __init__(self, diagnostics: str):
        super().__init__(diagnostics)
        self.diagnostics = diagnostics


class MissingOutputs(Exception):
    def __init__(self, names: list[str]):
        super().__init__("missing outputs: " + ", ".join(names))
        self.names = names


@dataclass(frozen=True)
class GeneratorScript:
    source_text: str
    expected_outputs: tuple[str, ...]

    def __post_init__(self):
        if not self.expected_outputs:
            raise InvariantError("a generator script must name its outputs")


@dataclass
class GeneratorOutput:
    blobs: dict[str, bytes]
    missing: list[str] = field(default_factory=list)


_FENCE = re.compile(r"```[ \t]*([\w+-]*)[ \t]*\n(.*?)```", re.S)


def extract_generator_script(response: str, config: PovStrategyConfig) -> GeneratorScript:
    m = _FENCE.search(response or "")
    if not m:
        raise NoCodeBlock("the reply holds no fenced code block")
    return GeneratorScript(m.group(2), tuple(config.expected_outputs))


def run_generator(script: GeneratorScript, workdir: Path, executor, timeout_s: float = GENERATOR_TIMEOUT_S) -> GeneratorOutput:
    """Run the script inside ``workdir`` (which must be empty); partial output is success."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if any(workdir.iterdir()):
        raise ValueError(f"work directory {workdir} is not empty")
    result = executor.execute(script.source_text, workdir, timeout_s)
    if result.returncode != 0:
        text = (result.stderr or result.stdout or f"exit status {result.returncode}").strip()
        raise ExecutorFailure(truncate_output(text, 40))
    blobs, missing = {}, []
    for name in script.expected_outputs:
        p = workdir / name
        if p.is_file():
            blobs[name] = p.read_bytes()
        else:
            missing.append(name)
    if not blobs:
        raise MissingOutputs(missing)
    return GeneratorOutput(blobs, missing)


def execute_harness(target: FuzzerTarget, blob: bytes, runner, workspace: Optional[Path] = None) -> Outcome:
    return runner.run(target, blob, workspace)


# ---------------------------------------------------------------------------
# feedback


def truncate_output(text: str, max_lines: int = FEEDBACK_LINES) -> str:
    """Keep the first and last ``max_lines // 2`` lines with a marker between."""
    lines = text.split("\n")
    if len(lines) <= max_lines:
        return text
    head = max_lines // 2
    tail = max_lines - head
    omitted = len(lines) - max_lines
    return "\n".join(lines[:head] + [f"[... {omitted} lines truncated ...]"] + lines[-tail:])


def coverage_block(coverage: CoverageSummary) -> str:
    out = ["Coverage of the last run:"]
    out.append("Functions executed: " + (", ".join(coverage.executed_functions) or "(none)"))
    for bp in coverage.branch_points:
        state = "taken" if bp.taken else "not taken"
        out.append(f"Branch at {bp.file}:{bp.line} ({state}):")
        out.extend(f"{'>' if n == bp.line else ' '} {n:5d} | {text}" for n, text in bp.context)
    return "\n".join(out)


def build_feedback(fuzzer_output: str, coverage: Optional[CoverageSummary] = None,
                   problem: str = "The input did not trigger the defect.") -> str:
    block = truncate_output(fuzzer_output, FEEDBACK_LINES)
    cov = coverage_block(coverage) if coverage is not None else None
    return prompts.feedback_message(block, problem, cov)


# ---------------------------------------------------------------------------
# the strategy loop


@dataclass
class AttemptResult:
    conversation: Conversation
    pov: Optional[PovSubmission] = None
    exhausted: bool = False


def _attempt(
    conv: Conversation,
    model: Optional[str],
    task: ChallengeTask,
    target: FuzzerTarget,
    config: PovStrategyConfig,
    services: Services,
    label: str,
) -> AttemptResult:
    """One model request and everything that follows from its answer."""
    try:
        provider, text = services.router.complete(conv, first=model)
    except AllProvidersExhausted as exc:
        log.warning("%s: %s", label, exc)
        return AttemptResult(conv, exhausted=True)
    conv = conv.assistant(text)
    try:
        script = extract_generator_script(text, config)
    except NoCodeBlock:
        msg = build_feedback("(nothing was run)", None,
                             "Your reply had no fenced code block, so there was nothing to run.")
        return AttemptResult(conv.user(msg))
    workdir = services.private_dir(label)
    try:
        out = run_generator(script, workdir, services.executor)
    except ExecutorFailure as exc:
        msg = build_feedback(exc.diagnostics, None, "The script failed before producing any input.")
        return AttemptResult(conv.user(msg))
    except MissingOutputs as exc:
        msg = build_feedback("(no input files)", None,
                             "The script ran but did not write " + ", ".join(exc.names) + ".")
        return AttemptResult(conv.user(msg))

    outputs, coverage = [], None
    for name, blob in out.blobs.items():
        if not blob:
            outputs.append(f"[{name}] empty file skipped")
            continue
        outcome = execute_harness(target, blob, services.runner)
        if isinstance(outcome, Crash):
            replay = execute_harness(target, blob, services.runner)
            if not isinstance(replay, Crash):
                log.warning("%s: crash from %s did not reproduce", label, name)
                outputs.append(f"[{name}] crash did not reproduce")
                continue
            return AttemptResult(conv, pov=_submit(task, target, blob, outcome.report, config, services, conv, provider))
        outputs.append(f"[{name}]\n{outcome.output}" if len(out.blobs) > 1 else outcome.output)
        if services.corpus is not None:
            services.corpus.deposit(blob)
        coverage = services.runner.coverage(target, blob)
    if out.missing:
        outputs.append("missing files: " + ", ".join(out.missing))
    msg = build_feedback("\n".join(outputs), coverage)
    return AttemptResult(conv.user(msg))


def _submit(task, target, blob, report, config, services: Services, conv, provider) -> PovSubmission:
    sig = parse_crash_report(report, target.sanitizer, services.project_root_markers)
    pov = PovSubmission(
        pov_id=services.submission.new_id("pov"),
        task_id=task.task_id,
        target=target,
        input_blob=blob,
        crash_report=report,
        signature=sig,
        originating_strategy=config.strategy_name,
    )
    decision = services.submission.submit_pov(pov)
    log.info("%s found POV %s (%s) via %s: %s", config.strategy_name, pov.pov_id, sig.key, provider,
             decision.outcome.value)
    services.remember_conversation(pov.pov_id, conv)
    if decision.status is Status.PENDING:
        return pov
    return replace(pov, status=decision.status, submitted_at=services.clock.now())


def _models(services: Services) -> list[str]:
    return list(services.router.priority.names)


def run_pov_strategy(
    task: ChallengeTask,
    target: FuzzerTarget,
    config: PovStrategyConfig,
    services: Services,
    extra_sections: Sequence[str] = (),
    intro: Optional[str] = None,
) -> Optional[PovSubmission]:
    """Per model in priority order, up to ``max_iterations`` attempts each."""
    if config.timeout <= 0:
        return None
    deadline = services.clock.now() + config.timeout
    sections = list(extra_sections)
    if config.modified_context:
        for fn in modified_functions(task, services.graph):
            sections.append(f"Changed function `{fn.name}` ({fn.file}):\n```\n"
                            + function_source(fn, services.repo_root) + "\n```")
    if config.full_scan_ranking and services.graph is not None:
        sections.append(_focus_section(task, target, config, services))
    harness_source = services.harness_sources.get(target.harness_name, "(harness source unavailable)")
    first = build_initial_prompt(task, target, harness_source, config, sections, intro)

    if config.use_call_paths and task.mode is Mode.DELTA_SCAN and services.graph is not None:
        pov = call_path_prompt_rounds(task, target, modified_functions(task, services.graph), config, services,
                                      deadline=deadline)
        if pov is not None:
            return pov

    for model in _models(services):
        conv = first
        for it in range(1, config.max_iterations + 1):
            if services.clock.now() >= deadline or services.should_stop():
                log.info("%s on %s: out of time", config.strategy_name, target.key)
                return None
            res = _attempt(conv, model, task, target, config, services,
                           f"{config.strategy_name}-{target.harness_name}-{model}-{it}")
            if res.pov is not None:
                return res.pov
            if res.exhausted:
                break
            conv = res.conversation
    return None


# ---------------------------------------------------------------------------
# full-scan ranking and call-path rounds


def _parse_scores(text: str) -> dict[str, float]:
    start, end = text.find("["), text.rfind("]")
    if start < 0 or end <= start:
        raise ValueError("no JSON array in reply")
    rows = json.loads(text[start:end + 1])
    out = {}
    for row in rows:
        name = row.get("function") or row.get("name")
        if name is None:
            continue
        out[str(name)] = float(row["score"])
    return out


def _listing(graph: CallGraph, indices: list[int], repo_root: Optional[Path]) -> str:
    rows = []
    for i in indices:
        f = graph.functions[i]
        body = function_source(f, repo_root, cap=40)
        rows.append(f"## {f.name} ({f.file}:{f.start_line}-{f.end_line})\n{body}")
    return "\n\n".join(rows)


def score_functions(graph: CallGraph, indices: list[int], language: Language, evaluator,
                    repo_root: Optional[Path] = None, rubrics: Optional[Sequence[str]] = None) -> dict[int, float]:
    """Evaluator scores per graph index; the maximum over rubrics when several apply."""
    if not indices:
        return {}
    listing = _listing(graph, indices, repo_root)
    scores: dict[int, float] = {}
    for rubric in rubrics or prompts.rubrics_for(language):
        conv = Conversation(prompts.RANK_SYSTEM).user(prompts.ranking_request(rubric, listing))
        by_name = _parse_scores(evaluator.complete(conv))
        for i in indices:
            name = graph.functions[i].name
            if name in by_name:
                scores[i] = max(scores.get(i, by_name[name]), by_name[name])
    return scores


def rank_reachable_functions(graph: CallGraph, harness: str, language: Language, evaluator,
                             repo_root: Optional[Path] = None) -> list[tuple[FunctionRecord, float]]:
    """Reachable functions scored by the evaluator, best first; ties keep graph order."""
    try:
        indices = reachable_indices(graph, harness)
        scores = score_functions(graph, indices, language, evaluator, repo_root)
    except Exception as exc:
        log.warning("ranking for %s failed: %s", harness, exc)
        return []
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(graph.functions[i], s) for i, s in ordered]


def _focus_section(task, target, config: PovStrategyConfig, services: Services) -> str:
    ranked: dict[str, tuple[FunctionRecord, float]] = {}
    evaluators = [services.judge()]
    if config.ranking_models > 1:
        from ..router import ModelRouter

        class _Pinned:
            def __init__(self, router: ModelRouter, model: str):
                self.router, self.model, self.name = router, model, model

            def complete(self, conv):
                return self.router.complete(conv, first=self.model)[1]

        evaluators = [_Pinned(services.router, m) for m in _models(services)[:config.ranking_models]]
    for ev in evaluators:
        for fn, score in rank_reachable_functions(services.graph, target.harness_name, task.language, ev,
                                                  services.repo_root):
            key = f"{fn.file}:{fn.name}:{fn.start_line}"
            if key not in ranked or ranked[key][1] < score:
                ranked[key] = (fn, score)
    top = sorted(ranked.values(), key=lambda fs: (-fs[1], services.graph.index_of(fs[0])))[:config.top_functions]
    if not top:
        return "No ranking was available; consider every reachable function."
    rows = [f"Suspect `{fn.name}` ({fn.file}, score {score:g}):\n```\n" + function_source(fn, services.repo_root)
            + "\n```" for fn, score in top]
    return "\n\n".join(rows)


def _path_text(path) -> str:
    return " -> ".join(f"{f.name} ({f.file}:{f.start_line})" for f in path.functions)


def call_path_prompt_rounds(
    task: ChallengeTask,
    target: FuzzerTarget,
    modified: Sequence[FunctionRecord],
    config: PovStrategyConfig,
    services: Services,
    deadline: Optional[int] = None,
) -> Optional[PovSubmission]:
    """One attempt per call path into a changed function, then one combined attempt."""
    if task.mode is not Mode.DELTA_SCAN:
        raise InvariantError("call-path rounds need a delta-scan task")
    limits = PathQueryLimits.for_language(task.language)
    paths = []
    if services.graph is not None:
        for fn in modified:
            for p in call_paths(services.graph, target.harness_name, fn, limits):
                if len(paths) < limits.max_paths:
                    paths.append(p)
    harness_source = services.harness_sources.get(target.harness_name, "(harness source unavailable)")
    models = _models(services)

    def out_of_time():
        return (deadline is not None and services.clock.now() >= deadline) or services.should_stop()

    for n, path in enumerate(paths, 1):
        if out_of_time():
            return None
        section = "Aim for an input that drives execution along this call path:\n" + _path_text(path)
        conv = build_initial_prompt(task, target, harness_source, config, [section])
        res = _attempt(conv, models[0], task, target, config, services,
                       f"{config.strategy_name}-path{n}-{target.harness_name}")
        if res.pov is not None:
            return res.pov
    if out_of_time():
        return None
    if paths:
        section = "None of these call paths worked on its own. All of them together:\n" + "\n".join(
            f"{i}. {_path_text(p)}" for i, p in enumerate(paths, 1))
    else:
        section = "No call path from the harness to the changed functions was found; reason from the diff alone."
    conv = build_initial_prompt(task, target, harness_source, config, [section])
    res = _attempt(conv, models[0], task, target, config, services,
                   f"{config.strategy_name}-paths-all-{target.harness_name}")
    return res.pov
