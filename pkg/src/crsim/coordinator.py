"""Task decomposition, dispatch, budget policies, corpus housekeeping and the
end-to-end run of one challenge task.

Under a simulated clock every step runs on the calling thread in a fixed
order, which makes the task report reproducible byte for byte.  With the
system clock, targets are worked on by a thread pool.
"""

from __future__ import annotations

import concurrent.futures
import enum
import hashlib
import itertools
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

from .clock import MINUTE, SECOND
from .domain import (
    ChallengeTask,
    FuzzerTarget,
    Language,
    Mode,
    PovSubmission,
    Sanitizer,
    SarifRecord,
    Status,
    Verdict,
    check_unique_targets,
    serialize,
)
from .harness import CrashFound
from .patch.engine import XPatchConfig, patch_strategy_config, run_patch_strategy_detailed, xpatch_run
from .pov.prompts import SARIF_INTRO
from .pov.engine import STRATEGY_SCOPE, run_pov_strategy, strategy_config
from .sarif import SarifStore, assess, forward_for_guidance
from .scoring import leaderboard_score, score_ledger
from .services import Services
from .signature import parse_crash_report

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetPolicy:
    llm_fuzz_cap: int = 60 * MINUTE
    llm_fuzz_cap_after_pov_elsewhere: int = 45 * MINUTE
    msan_harness_threshold: int = 10
    corpus_ttl: int = 10 * MINUTE
    sweep_period: int = 60 * SECOND
    enabled_sanitizers: Optional[tuple[Sanitizer, ...]] = None

    def __post_init__(self):
        if self.llm_fuzz_cap_after_pov_elsewhere > self.llm_fuzz_cap:
            raise ConfigurationError("the reduced LLM cap cannot exceed the full cap")
        if min(self.llm_fuzz_cap, self.corpus_ttl, self.sweep_period) <= 0:
            raise ConfigurationError("durations must be positive")

    @staticmethod
    def fuzzer_half_time(task: ChallengeTask) -> int:
        return task.time_window // 2

    @classmethod
    def from_doc(cls, doc: dict) -> "BudgetPolicy":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown policy keys: {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("enabled_sanitizers") is not None:
            doc["enabled_sanitizers"] = tuple(Sanitizer(s) for s in doc["enabled_sanitizers"])
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "BudgetPolicy":
        return cls.from_doc(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# decomposition and dispatch


def decompose(task: ChallengeTask, policy: BudgetPolicy = BudgetPolicy()) -> list[FuzzerTarget]:
    """One target per (harness, sanitizer) that survives the pruning rules."""
    if task.language is Language.JAVA:
        sanitizers = [Sanitizer.JAZZER]
    else:
        sanitizers = [Sanitizer.ADDRESS, Sanitizer.MEMORY]  # UBSan never runs
        if len(task.harness_names) > policy.msan_harness_threshold:
            sanitizers.remove(Sanitizer.MEMORY)
    if policy.enabled_sanitizers is not None:
        sanitizers = [s for s in sanitizers if s in policy.enabled_sanitizers]
    targets = [FuzzerTarget(h, s, task.task_id) for h in task.harness_names for s in sanitizers]
    if not targets:
        raise ConfigurationError(f"task {task.task_id}: no fuzzer targets left after pruning")
    check_unique_targets(targets)
    return targets


def pov_roster(task: ChallengeTask) -> list[str]:
    return [n for n, (mode, langs) in STRATEGY_SCOPE.items() if mode is task.mode and task.language in langs]


def patch_roster(task: ChallengeTask) -> list[str]:
    suffix = "_delta" if task.mode is Mode.DELTA_SCAN else "_full"
    return [f"{p}{suffix}" for p in ("patch", "patch0", "patch1", "patch2", "patch3")]


def xpatch_roster(task: ChallengeTask) -> list[str]:
    return ["xpatch_delta"] if task.mode is Mode.DELTA_SCAN else ["xpatch_full"]


@dataclass(frozen=True)
class Assignment:
    """What a worker is told: a target reference and its strategies. Never a binary."""

    task_id: str
    harness_name: str
    sanitizer: Sanitizer
    strategies: tuple[str, ...]

    def target(self) -> FuzzerTarget:
        return FuzzerTarget(self.harness_name, self.sanitizer, self.task_id)


def dispatch(targets: Sequence[FuzzerTarget], workers: Sequence[str], task: Optional[ChallengeTask] = None,
             roster: Optional[Sequence[str]] = None) -> dict[str, list[Assignment]]:
    if not workers:
        raise ConfigurationError("worker pool is empty")
    strategies = tuple(roster if roster is not None else (pov_roster(task) if task is not None else ()))
    plan: dict[str, list[Assignment]] = {w: [] for w in workers}
    for t, w in zip(targets, itertools.cycle(workers)):
        plan[w].append(Assignment(t.task_id, t.harness_name, t.sanitizer, strategies))
    return plan


# ---------------------------------------------------------------------------
# budgets


@dataclass
class TaskState:
    """POVs found so far, by target key."""

    povs_by_target: dict[str, int] = field(default_factory=dict)

    def record_pov(self, target: FuzzerTarget) -> None:
        self.povs_by_target[target.key] = self.povs_by_target.get(target.key, 0) + 1


def llm_budget(target: FuzzerTarget, state: TaskState, policy: BudgetPolicy = BudgetPolicy()) -> int:
    sibling = any(n > 0 for k, n in state.povs_by_target.items() if k != target.key)
    return policy.llm_fuzz_cap_after_pov_elsewhere if sibling else policy.llm_fuzz_cap


class FuzzerDecision(str, enum.Enum):
    CONTINUE = "Continue"
    STOP = "Stop"


@dataclass(frozen=True)
class FuzzerState:
    povs_found: bool
    elapsed: int
    multi_fuzzer_on_vm: bool


def fuzzer_stop_decision(state: FuzzerState, half_time: int) -> FuzzerDecision:
    e, h = state.elapsed, half_time
    if state.povs_found and e > h:
        return FuzzerDecision.STOP
    if state.povs_found and state.multi_fuzzer_on_vm and e > h / 2:
        return FuzzerDecision.STOP
    if not state.povs_found and e >= h:
        return FuzzerDecision.STOP
    return FuzzerDecision.CONTINUE


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class CorpusEntry:
    path: Path
    created_at: int


class CorpusManager:
    """Shared input corpus on disk.

    Deposits are written to a hidden temp name and renamed into place, so
    readers and the sweeper never see partial files.  A file's mtime is its
    creation time on the injected clock.
    """

    def __init__(self, directory: str | os.PathLike, clock):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._lock = threading.Lock()

    def deposit(self, blob: bytes) -> Path:
        digest = hashlib.sha1(blob).hexdigest()
        final = self.dir / digest
        created = self.clock.now()
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=self.dir)
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.utime(tmp, ns=(created * 1_000_000, created * 1_000_000))
        os.replace(tmp, final)
        return final

    def entries(self) -> list[CorpusEntry]:
        out = []
        for p in sorted(self.dir.iterdir()):
            if p.name.startswith(".tmp-") or not p.is_file():
                continue
            try:
                out.append(CorpusEntry(p, p.stat().st_mtime_ns // 1_000_000))
            except FileNotFoundError:
                continue
        return out

    def blobs(self) -> list[bytes]:
        out = []
        for e in self.entries():
            try:
                out.append(e.path.read_bytes())
            except FileNotFoundError:
                continue
        return out

    def sweep(self, ttl: int = 10 * MINUTE) -> list[Path]:
        return corpus_sweep(self.dir, self.clock.now(), ttl)


def corpus_sweep(corpus_dir: str | os.PathLike, now: int, ttl: int = 10 * MINUTE) -> list[Path]:
    """Delete entries with ``now - created_at > ttl``; returns what was removed."""
    removed = []
    for p in sorted(Path(corpus_dir).iterdir()):
        if p.name.startswith(".tmp-") or not p.is_file():
            continue
        try:
            created = p.stat().st_mtime_ns // 1_000_000
            if now - created > ttl:
                p.unlink()
                removed.append(p)
        except FileNotFoundError:
            continue
        except OSError as exc:
            log.warning("could not remove %s: %s", p, exc)
    return removed


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class RunConfig:
    workers: int = 4
    pov_strategies: Optional[list[str]] = None
    patch_strategies: Optional[list[str]] = None
    xpatch_strategies: Optional[list[str]] = None
    patch_processes: int = 1
    fuzzer_enabled: bool = True
    fuzz_slice_seconds: int = 60
    xpatch: XPatchConfig = field(default_factory=XPatchConfig)
    pov_overrides: dict = field(default_factory=dict)
    patch_overrides: dict = field(default_factory=dict)


@dataclass
class SarifInput:
    record: SarifRecord
    read_source: object = None


class Orchestrator:
    def __init__(self, task: ChallengeTask, services: Services, policy: BudgetPolicy = BudgetPolicy(),
                 config: RunConfig = RunConfig(), sarif_inputs: Sequence[SarifInput] = (),
                 evaluators: Sequence = ()):
        self.task = task
        self.s = services
        self.policy = policy
        self.config = config
        self.sarif_inputs = list(sarif_inputs)
        self.evaluators = list(evaluators)
        self.store = SarifStore()
        self.state = TaskState()
        self.timeline: list[dict] = []
        self.failures: list[dict] = []
        self.broadcasts: list[dict] = []
        self.assessments: list[dict] = []
        self.patched: set[str] = set()
        self.patch_logs: list[dict] = []
        self._lock = threading.Lock()
        self.simulated = bool(getattr(services.clock, "simulated", False))
        services.submission.register_task(task)
        services.submission.pov_passed_hooks.append(
            self.store.pov_hook(services.submission.match_evaluator, services.project_root_markers))

    def note(self, event: str, **detail) -> None:
        with self._lock:
            self.timeline.append({"t": self.s.clock.now() - self.task.received_at, "event": event, **detail})

    # ------------------------------------------------------------- phases

    def run(self) -> dict:
        task = self.task
        self.note("task_received", mode=task.mode.value)
        self._sarif_phase()
        if task.mode is Mode.SARIF_ASSESSMENT:
            return self.report([], {})
        targets = decompose(task, self.policy)
        workers = [f"worker-{i + 1}" for i in range(max(1, self.config.workers))]
        roster = self.config.pov_strategies
        if roster is None:
            roster = (["sarif_POV0"] if self.broadcasts else []) + pov_roster(task)
        plan = dispatch(targets, workers, task, roster)
        self.note("dispatched", targets=len(targets), workers=len(workers))

        if self.simulated:
            for assignments in _round_robin(plan):
                self._work_target(assignments)
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=len(workers)) as pool:
                futures = [pool.submit(self._work_target, a) for a in _round_robin(plan)]
                for f in futures:
                    f.result()

        if self.config.fuzzer_enabled:
            self._fuzz_phase(targets)
        self._xpatch_phase(targets)
        return self.report(targets, plan)

    def _sarif_phase(self) -> None:
        for item in self.sarif_inputs:
            rec = self.store.add(replace(item.record, task_id=self.task.task_id))
            self.s.submission.register_sarif(rec)
            read = item.read_source or self._read_repo
            result = assess(rec, self.s.graph, self.evaluators, read)
            verdict = result.record_verdict
            rec = self.store.set_verdict(rec.sarif_id, verdict)
            self.assessments.append({
                "sarif_id": rec.sarif_id,
                "consensus": result.verdict.value,
                "reaching_harnesses": list(result.reaching_harnesses),
                "votes": [[v.evaluator, v.check.value, None if v.answer is None else v.answer] for v in result.votes],
            })
            self.note("sarif_assessed", sarif_id=rec.sarif_id, verdict=verdict.value)
            if verdict in (Verdict.TRUE_POSITIVE, Verdict.FALSE_POSITIVE):
                d = self.s.submission.submit_sarif_assessment(rec, verdict)
                self.note("sarif_submitted", sarif_id=rec.sarif_id, status=d.status.value)
            has_pov = self.s.submission.has_passed_pov(self.task.task_id)
            if result.reaching_harnesses or verdict is Verdict.DEFERRED:
                b = forward_for_guidance(rec, has_pov)
                if b is not None:
                    self.broadcasts.append(b)
                    self.note("sarif_broadcast", sarif_id=rec.sarif_id)

    def _read_repo(self, rel: str) -> Optional[str]:
        if self.s.repo_root is None:
            return None
        p = Path(self.s.repo_root) / rel
        return p.read_text(errors="replace") if p.is_file() else None

    def _work_target(self, assignment: "Assignment") -> None:
        target = assignment.target()
        start = self.s.clock.now()
        budget = llm_budget(target, self.state, self.policy)
        deadline = start + budget
        self.note("target_started", target=target.key, llm_budget_min=budget // MINUTE)
        for name in assignment.strategies:
            remaining = deadline - self.s.clock.now()
            if remaining <= 0:
                self.note("llm_budget_spent", target=target.key)
                break
            extra, intro = (), None
            if name == "sarif_POV0":
                if not self.broadcasts:
                    continue
                extra, intro = (_broadcast_section(self.broadcasts),), SARIF_INTRO
            try:
                cfg = strategy_config(name, self.task.language, timeout=min(remaining, 30 * MINUTE),
                                      script_language=self.s.script_language, **self.config.pov_overrides)
                pov = run_pov_strategy(self.task, target, cfg, self.s, extra, intro)
            except Exception as exc:  # one broken strategy must not sink the task
                log.exception("strategy %s on %s failed", name, target.key)
                self.failures.append({"target": target.key, "strategy": name, "error": str(exc)})
                continue
            if pov is not None:
                self._on_pov(pov, name)
                break
        self.note("target_finished", target=target.key)

    def _on_pov(self, pov: PovSubmission, origin: str) -> None:
        self.note("pov", pov_id=pov.pov_id, target=pov.target.key, status=pov.status.value, strategy=origin)
        if pov.status is Status.PASSED:
            self.state.record_pov(pov.target)
            self._patch_phase(pov)

    def _patch_phase(self, pov: PovSubmission) -> None:
        key = pov.signature.key
        if key in self.patched:
            return
        names = self.config.patch_strategies if self.config.patch_strategies is not None else patch_roster(self.task)
        povs = [p for p in self.s.submission.passed_povs(self.task.task_id) if p.signature.key == key]
        for name in names:
            for proc in range(self.config.patch_processes):
                try:
                    cfg = patch_strategy_config(name, **self.config.patch_overrides)
                    res = run_patch_strategy_detailed(self.task, povs, cfg, self.s)
                except Exception as exc:
                    log.exception("patch strategy %s failed", name)
                    self.failures.append({"signature": key, "strategy": name, "error": str(exc)})
                    continue
                self.patch_logs.append({"strategy": name, "process": proc + 1, "signature": key,
                                        "iterations": res.log})
                if res.patch is not None:
                    self.note("patch", patch_id=res.patch.patch_id, status=res.patch.status.value, strategy=name)
                    if res.patch.status is Status.PASSED:
                        self.patched.add(key)
                        return

    def _fuzz_phase(self, targets: Sequence[FuzzerTarget]) -> None:
        half = self.policy.fuzzer_half_time(self.task)
        active = list(targets)
        last_sweep = self.s.clock.now()
        seeds = itertools.count(self.s.seed)
        self.note("fuzzing_started", fuzzers=len(active))
        while active:
            elapsed = self.s.clock.now() - self.task.received_at
            still = []
            for t in active:
                st = FuzzerState(self.state.povs_by_target.get(t.key, 0) > 0, elapsed, len(active) > 1)
                if fuzzer_stop_decision(st, half) is FuzzerDecision.STOP:
                    self.note("fuzzer_stopped", target=t.key)
                else:
                    still.append(t)
            active = still
            if not active:
                break
            # never run past half-time: the stop rule is only checked between slices
            seconds = min(self.config.fuzz_slice_seconds, max(1, -(-(half - elapsed) // SECOND)))
            for t in active:
                corpus = self.s.corpus.blobs() if self.s.corpus is not None else []
                res = self.s.runner.fuzz(t, None, seconds, next(seeds), corpus)
                for blob in res.new_corpus:
                    if self.s.corpus is not None:
                        self.s.corpus.deposit(blob)
                if isinstance(res.outcome, CrashFound):
                    self._fuzzer_pov(t, res.outcome)
            now = self.s.clock.now()
            if self.s.corpus is not None and now - last_sweep >= self.policy.sweep_period:
                removed = self.s.corpus.sweep(self.policy.corpus_ttl)
                last_sweep = now
                if removed:
                    self.note("corpus_swept", removed=len(removed))

    def _fuzzer_pov(self, target: FuzzerTarget, found: CrashFound) -> None:
        sig = parse_crash_report(found.report, target.sanitizer, self.s.project_root_markers)
        pov = PovSubmission(self.s.submission.new_id("pov"), self.task.task_id, target, found.input_blob,
                            found.report, sig, originating_strategy="libfuzzer")
        d = self.s.submission.submit_pov(pov)
        if d.status is Status.DUPLICATE:
            return
        self._on_pov(pov.with_status(d.status) if d.status is not Status.PENDING else pov, "libfuzzer")

    def _xpatch_phase(self, targets: Sequence[FuzzerTarget]) -> None:
        if self.s.submission.has_passed_pov(self.task.task_id):
            return
        gate_at = self.task.received_at + int(self.config.xpatch.trigger_fraction * self.task.time_window)
        if self.simulated and self.s.clock.now() < gate_at:
            self.s.clock.set(gate_at)
        names = self.config.xpatch_strategies if self.config.xpatch_strategies is not None else xpatch_roster(self.task)
        self.note("xpatch_armed")
        for name in names:
            try:
                patch = xpatch_run(self.task, self.config.xpatch, self.s, targets, name)
            except Exception as exc:
                log.exception("XPatch failed")
                self.failures.append({"strategy": name, "error": str(exc)})
                continue
            if patch is not None:
                self.note("xpatch", patch_id=patch.patch_id, status=patch.status.value, strategy=name)

    # ------------------------------------------------------------- report

    def report(self, targets: Sequence[FuzzerTarget], plan: dict) -> dict:
        tid = self.task.task_id
        ledger = self.s.submission.ledger_document(tid)
        entry = self.s.submission.entry_snapshot(tid, lambda e: (dict(e.povs), dict(e.patches), list(e.bundles.values())))
        povs, patches, bundles = entry
        score = score_ledger(ledger)
        n_povs = sum(1 for p in povs.values() if p.status is Status.PASSED)
        n_patches = sum(1 for p in patches.values() if p.status is Status.PASSED)
        router = self.s.router
        return {
            "task": serialize(self.task),
            "targets": [t.key for t in targets],
            "assignments": {w: [f"{a.harness_name}/{a.sanitizer.value}" for a in lst] for w, lst in plan.items()},
            "povs": [
                {
                    "pov_id": p.pov_id,
                    "target": p.target.key,
                    "signature": p.signature.key,
                    "status": p.status.value,
                    "strategy": p.originating_strategy,
                    "submitted_at": p.submitted_at,
                    "input_sha256": hashlib.sha256(p.input_blob).hexdigest(),
                    "input_size": len(p.input_blob),
                }
                for p in povs.values()
            ],
            "patches": [
                {
                    "patch_id": p.patch_id,
                    "pov_signature": p.pov_signature.key if p.pov_signature else None,
                    "is_xpatch": p.is_xpatch,
                    "status": p.status.value,
                    "submitted_at": p.submitted_at,
                    "validation": serialize(p.validation),
                    "diff": p.diff_text,
                }
                for p in patches.values()
            ],
            "sarif": self.assessments,
            "sarif_broadcasts": self.broadcasts,
            "bundles": [serialize(b) for b in bundles],
            "ledger": ledger,
            "score": {
                "am": score.am,
                "vds": score.vds,
                "prs": score.prs,
                "sas": score.sas,
                "bdl": score.bdl,
                "total": score.total,
                "vulnerabilities": {k: serialize(v) for k, v in score.vulnerabilities.items()},
            },
            "leaderboard": leaderboard_score(n_povs, n_patches),
            "router": {
                "requests": router.requests,
                "attempts": [[a.provider, a.outcome] for a in router.attempts],
            },
            "patch_iterations": self.patch_logs,
            "timeline": self.timeline,
            "failures": self.failures,
        }


def _broadcast_section(broadcasts: Sequence[dict]) -> str:
    rows = []
    for b in broadcasts:
        where = ", ".join(f"{f}:{a}-{z}" for f, a, z in b["locations"]) or "unknown location"
        funcs = ", ".join(f"{n} ({f})" for n, f in b["functions"])
        cwes = ", ".join(b["cwe_ids"])
        rows.append(f"- {b['sarif_id']}: {where}" + (f"; functions {funcs}" if funcs else "")
                    + (f"; {cwes}" if cwes else ""))
    return "Reported findings:\n" + "\n".join(rows)


def _round_robin(plan: dict[str, list[Assignment]]) -> list[Assignment]:
    """Assignments interleaved across workers: first of each worker, then second..."""
    out = []
    lists = list(plan.values())
    for i in range(max((len(l) for l in lists), default=0)):
        for l in lists:
            if i < len(l):
                out.append(l[i])
    return out


def orchestrate(task: ChallengeTask, services: Services, policy: BudgetPolicy = BudgetPolicy(),
                config: RunConfig = RunConfig(), sarif_inputs: Sequence[SarifInput] = (),
                evaluators: Sequence = ()) -> dict:
    return Orchestrator(task, services, policy, config, sarif_inputs, evaluators).run()
