"""The handles a strategy run needs, bundled so engines take one argument."""

from __future__ import annotations

import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .domain import CallGraph
from .harness import HarnessRunner
from .router import ModelRouter, RouterEvaluator
from .submission import SubmissionService


@dataclass
class Services:
    router: ModelRouter
    runner: HarnessRunner
    executor: object  # has execute(source, workdir, timeout_s) -> ExecResult
    submission: SubmissionService
    clock: object
    workroot: Path
    repo_root: Optional[Path] = None
    graph: Optional[CallGraph] = None
    corpus: Optional[object] = None  # has deposit(blob) -> path
    evaluator: Optional[object] = None  # single-answer handle for ranking and identification
    harness_sources: dict[str, str] = field(default_factory=dict)
    project_root_markers: tuple[str, ...] = ()
    script_language: str = "python"
    seed: int = 0
    should_stop: Callable[[], bool] = lambda: False
    # POV id -> conversation that found it, reused by the patch strategies
    pov_conversations: dict = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()
        self.workroot = Path(self.workroot)

    def judge(self):
        return self.evaluator if self.evaluator is not None else RouterEvaluator(self.router)

    def private_dir(self, prefix: str) -> Path:
        """A fresh directory no other attempt will ever use."""
        self.workroot.mkdir(parents=True, exist_ok=True)
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in prefix)
        return Path(tempfile.mkdtemp(prefix=safe + "-", dir=self.workroot))

    def remember_conversation(self, pov_id: str, conversation) -> None:
        with self._lock:
            self.pov_conversations[pov_id] = conversation
