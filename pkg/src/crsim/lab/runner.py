"""Harness runner, build handle, test runner and fuzzer for lab targets."""

from __future__ import annotations

import logging
import random
from pathlib import Path
from typing import Optional

from ..domain import CoverageSummary, FuzzerTarget
from ..harness import (
    BuildResult,
    CleanRun,
    Crash,
    CrashFound,
    FuzzResult,
    NoCrash,
    Outcome,
    TestResult,
)
from .target import LabTarget

log = logging.getLogger(__name__)

MAX_INPUT = 4096


def run_harness(target: LabTarget, harness: str, sanitizer, data: bytes, workspace=None) -> Outcome:
    sources = target.sources_in(workspace)
    hit = target.first_crash(harness, sanitizer, data, sources)
    if hit is not None:
        bug, line = hit
        return Crash(target.render_report(bug, line, harness, sanitizer, data))
    depth = target.depth(harness, sanitizer, data)
    trace = 3 + depth + len(data) // 64
    return NoCrash(
        f"INFO: Running with entropic power schedule (0xFF, 100).\n"
        f"Running: {harness} input ({len(data)} bytes)\n"
        f"Executed {harness} on {len(data)} bytes; execution trace: {trace} lines\n"
        f"INFO: no sanitizer error\n"
    )


def trace_coverage(target: LabTarget, harness: str, sanitizer, data: bytes) -> CoverageSummary:
    return target.coverage(harness, sanitizer, data)


def build_handle(target: LabTarget, workspace) -> BuildResult:
    ok, diag = target.build(workspace)
    return BuildResult(ok, diag)


def run_functionality_tests(target: LabTarget, workspace) -> list[TestResult]:
    """A check passes when its behavior survives in the sources and its input runs clean."""
    sources = target.sources_in(workspace)
    results = []
    for chk in target.functionality_checks:
        if not target.behavior_holds(chk.expect, sources):
            results.append(TestResult(chk.name, False, f"behavior '{chk.expect}' no longer present"))
            continue
        crashed = any(
            target.first_crash(h, s, chk.input, sources) is not None
            for h in target.harnesses
            for s in {s for b in target.bugs for s in b.sanitizers}
        )
        if crashed:
            results.append(TestResult(chk.name, False, "functionality input crashed"))
        else:
            results.append(TestResult(chk.name, True))
    return results


class Mutator:
    """Seeded byte mutator that keeps inputs which satisfy more trigger clauses.

    Feedback is the lab's stand-in for edge coverage: the number of clauses an
    input satisfies for the fuzzed harness.
    """

    def __init__(self, target: LabTarget, harness: str, sanitizer, seed: int):
        self.target = target
        self.harness = harness
        self.sanitizer = sanitizer
        self.rng = random.Random(seed)
        self.tokens = list(target.dictionary)

    def mutate(self, data: bytes) -> bytes:
        rng = self.rng
        buf = bytearray(data or b"\x00")
        op = rng.randrange(6)
        if op == 0:
            i = rng.randrange(len(buf))
            buf[i] = rng.randrange(256)
        elif op == 1:
            i = rng.randrange(len(buf) + 1)
            buf[i:i] = bytes(rng.randrange(256) for _ in range(rng.randint(1, 8)))
        elif op == 2 and len(buf) > 1:
            i = rng.randrange(len(buf))
            del buf[i:i + rng.randint(1, 4)]
        elif op == 3 and self.tokens:
            tok = rng.choice(self.tokens)
            i = rng.choice((0, rng.randrange(len(buf) + 1)))
            buf[i:i] = tok
        elif op == 4:
            buf += bytes([rng.randrange(256)]) * rng.choice((8, 32, 128, 512))
        else:
            i = rng.randrange(len(buf))
            buf[i] ^= 1 << rng.randrange(8)
        return bytes(buf[:MAX_INPUT])

    def score(self, data: bytes) -> int:
        return self.target.depth(self.harness, self.sanitizer, data)


def scripted_fuzz_run(
    target: LabTarget,
    harness: str,
    sanitizer,
    workspace=None,
    seconds: int = 60,
    seed: int = 0,
    corpus: Optional[list[bytes]] = None,
    clock=None,
) -> FuzzResult:
    """Seeded mutation loop; ``seconds`` of simulated time at the target's exec rate."""
    budget = max(0, int(seconds)) * target.fuzz_execs_per_second
    if clock is not None:
        clock.spend(max(0, int(seconds)) * 1000)
    if budget == 0:
        return FuzzResult(CleanRun(0))
    sources = target.sources_in(workspace)
    mut = Mutator(target, harness, sanitizer, seed)
    pool = [c for c in (corpus or []) if c] + list(target.seeds) or [b"\x00"]
    scores = [mut.score(p) for p in pool]
    best = max(scores)
    new: list[bytes] = []
    for n in range(1, budget + 1):
        # prefer the most productive inputs; occasionally explore the rest
        top = [p for p, s in zip(pool, scores) if s == best]
        parent = mut.rng.choice(top if mut.rng.random() < 0.8 else pool)
        child = mut.mutate(parent)
        hit = target.first_crash(harness, sanitizer, child, sources)
        if hit is not None:
            bug, line = hit
            report = target.render_report(bug, line, harness, sanitizer, child)
            return FuzzResult(CrashFound(report, child, n), new)
        s = mut.score(child)
        if s > best or (s == best and len(pool) < 64 and child not in pool):
            pool.append(child)
            scores.append(s)
            if s > best:
                new.append(child)
            best = max(best, s)
    return FuzzResult(CleanRun(budget), new)


class LabHarnessRunner:
    """Adapts one lab target to the engines' runner interface.

    ``exec_cost_ms`` is charged to the clock for each single-input run so that
    simulated timelines advance as strategies work.
    """

    def __init__(self, target: LabTarget, clock=None, exec_cost_ms: int = 0, build_cost_ms: int = 0):
        self.lab = target
        self.clock = clock
        self.exec_cost_ms = exec_cost_ms
        self.build_cost_ms = build_cost_ms
        self.runs = 0

    def _spend(self, ms: int) -> None:
        if self.clock is not None and ms:
            self.clock.spend(ms)

    def run(self, target: FuzzerTarget, blob: bytes, workspace: Optional[Path] = None) -> Outcome:
        self.runs += 1
        self._spend(self.exec_cost_ms)
        return run_harness(self.lab, target.harness_name, target.sanitizer, blob, workspace)

    def coverage(self, target: FuzzerTarget, blob: bytes, workspace: Optional[Path] = None) -> CoverageSummary:
        return trace_coverage(self.lab, target.harness_name, target.sanitizer, blob)

    def build(self, workspace: Path) -> BuildResult:
        self._spend(self.build_cost_ms)
        return build_handle(self.lab, workspace)

    def functionality_tests(self, workspace: Path) -> list[TestResult]:
        return run_functionality_tests(self.lab, workspace)

    def fuzz(self, target: FuzzerTarget, workspace: Optional[Path], seconds: int, seed: int,
             corpus: Optional[list[bytes]] = None) -> FuzzResult:
        return scripted_fuzz_run(self.lab, target.harness_name, target.sanitizer, workspace, seconds, seed,
                                 corpus, self.clock)

    @property
    def project_root_markers(self) -> tuple[str, ...]:
        return (self.lab.root_marker,)
