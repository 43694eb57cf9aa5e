"""Script executors for generator scripts."""

from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path

from ..lab.bytegen import BytegenExecutor, ExecResult

__all__ = ["PythonExecutor", "BytegenExecutor", "ExecResult", "make_executor"]


class PythonExecutor:
    """Runs a script with the current interpreter in isolated mode.

    The child gets a scrubbed environment and its working directory set to
    the attempt's private directory.  This is process isolation only; real
    deployments should wrap it in a container without network access.
    """

    language = "python"

    def __init__(self, python: str = sys.executable):
        self.python = python

    def execute(self, source: str, workdir: Path, timeout_s: float = 60.0) -> ExecResult:
        workdir = Path(workdir)
        script = workdir / ".generator.py"
        script.write_text(source)
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "HOME": str(workdir), "PYTHONHASHSEED": "0"}
        try:
            proc = subprocess.run(
                [self.python, "-I", script.name],
                cwd=workdir, env=env, capture_output=True, text=True, timeout=timeout_s,
            )
        except subprocess.TimeoutExpired:
            return ExecResult(124, "", f"script exceeded {timeout_s:g}s")
        finally:
            script.unlink(missing_ok=True)
        return ExecResult(proc.returncode, proc.stdout[-4000:], proc.stderr[-4000:])


def make_executor(language: str, clock=None):
    if language == "python":
        return PythonExecutor()
    if language == "bytegen":
        return BytegenExecutor(clock)
    raise ValueError(f"no executor for script language {language!r}")
