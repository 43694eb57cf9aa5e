"""Outcome types and the runner interface shared by the engines.

A runner executes one input through one harness under one sanitizer and
reports either a sanitizer crash or a clean run.  The lab runner implements
this deterministically; a real deployment would wrap libFuzzer binaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Union

from .domain import CoverageSummary, FuzzerTarget


@dataclass(frozen=True)
class Crash:
    report: str


@dataclass(frozen=True)
class NoCrash:
    output: str


Outcome = Union[Crash, NoCrash]


class RunnerError(Exception):
    """The runner itself failed; distinct from a clean run."""


@dataclass(frozen=True)
class BuildResult:
    ok: bool
    diagnostics: str = ""


@dataclass(frozen=True)
class TestResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class CleanRun:
    executions: int


@dataclass(frozen=True)
class CrashFound:
    report: str
    input_blob: bytes
    executions: int


FuzzOutcome = Union[CleanRun, CrashFound]


@dataclass
class FuzzResult:
    """What a traditional fuzzing session hands back to the coordinator."""

    outcome: FuzzOutcome
    new_corpus: list[bytes] = field(default_factory=list)


class HarnessRunner(Protocol):
    def run(self, target: FuzzerTarget, blob: bytes, workspace: Optional[Path] = None) -> Outcome: ...

    def coverage(self, target: FuzzerTarget, blob: bytes, workspace: Optional[Path] = None) -> CoverageSummary: ...

    def build(self, workspace: Path) -> BuildResult: ...

    def functionality_tests(self, workspace: Path) -> list[TestResult]: ...

    def fuzz(self, target: FuzzerTarget, workspace: Optional[Path], seconds: int, seed: int,
             corpus: list[bytes] = ...) -> FuzzResult: ...
