"""Crash-report parsing into crash signatures.

Two report grammars are understood:

AsanLike (Address/Memory/UndefinedBehavior sanitizers)::

    ==12==ERROR: AddressSanitizer: stack-buffer-overflow on address 0x7ffc... pc 0x...
        #0 0x4f1a2b in __asan_memcpy /src/llvm-project/compiler-rt/lib/asan/x.cpp:63:3
        #1 0x5a3c10 in parse_header /src/labhttp/src/http.c:42:7
        #2 0x5a3d20 in LLVMFuzzerTestOneInput /src/labhttp/fuzz/fuzz_http.c:12:3
    SUMMARY: AddressSanitizer: stack-buffer-overflow /src/labhttp/src/http.c:42:7 in parse_header

  A frame is ``#<ordinal> [0x<pc> in] <symbol> <file>:<line>[:<col>]``.

JazzerLike::

    == Java Exception: com.code_intelligence.jazzer.api.FuzzerSecurityIssueHigh: ...
    \tat com.example.Parser.parse(Parser.java:17)
    \tat com.example.ParserFuzzer.fuzzerTestOneInput(ParserFuzzer.java:9)

  A frame is ``at <qualified.method>(<File>.java:<line>)``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .domain import CrashSignature, Sanitizer, SignatureKind

ASAN_FRAME = re.compile(
    r"^\s*#(?P<num>\d+)\s+(?:0x[0-9a-fA-F]+\s+in\s+)?(?P<symbol>.+?)\s+"
    r"\(?(?P<file>[^\s:()]+):(?P<line>\d+)(?::\d+)?\)?\s*$"
)
JAZZER_FRAME = re.compile(
    r"^\s*at\s+(?P<symbol>[\w$.<>]+)\((?P<file>[^:()]+):(?P<line>\d+)\)\s*$"
)

# runtime frames never identify a project bug
_RUNTIME_PATH_HINTS = ("compiler-rt", "/llvm-project/", "/usr/include/", "/usr/lib/", "libc", "libFuzzer")
_RUNTIME_JAVA_PREFIXES = ("java.", "javax.", "jdk.", "sun.", "com.code_intelligence.jazzer.")

_HEX = re.compile(r"0x[0-9a-fA-F]+")
_PID = re.compile(r"(?i)(pid\s*[=:]?\s*)\d+")
_ASAN_PID = re.compile(r"==\d+==")
_THREAD = re.compile(r"\bT\d+\b")
_ISO_TS = re.compile(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?")

HEURISTIC_LINES = 20
DIGEST_CHARS = 16


@dataclass(frozen=True)
class Frame:
    ordinal: int
    symbol: str
    file: str
    line: int


def parse_frames(report: str) -> list[Frame]:
    """All stack frames found in ``report``, top of stack first."""
    frames: list[Frame] = []
    for raw in report.splitlines():
        m = ASAN_FRAME.match(raw)
        if m:
            frames.append(Frame(int(m.group("num")), m.group("symbol"), m.group("file"), int(m.group("line"))))
            continue
        m = JAZZER_FRAME.match(raw)
        if m:
            frames.append(Frame(len(frames), m.group("symbol"), m.group("file"), int(m.group("line"))))
    return frames


def _project_relative(frame: Frame, markers: list[str]) -> str | None:
    path = frame.file
    if any(h in path for h in _RUNTIME_PATH_HINTS):
        return None
    if frame.symbol.startswith(_RUNTIME_JAVA_PREFIXES):
        return None
    for marker in markers:
        idx = path.find(marker)
        if idx >= 0:
            rel = path[idx + len(marker):].lstrip("/")
            return rel or None
    if not path.startswith("/"):
        return path
    if not markers:
        return path.lstrip("/")
    return None


def normalize_report(report: str) -> str:
    """First lines of the report with addresses, pids and timestamps masked."""
    lines = report.splitlines()[:HEURISTIC_LINES]
    out = []
    for line in lines:
        line = _ISO_TS.sub("<ts>", line)
        line = _HEX.sub("0x<addr>", line)
        line = _ASAN_PID.sub("==<pid>==", line)
        line = _PID.sub(lambda m: m.group(1) + "<pid>", line)
        line = _THREAD.sub("T<n>", line)
        out.append(line.rstrip())
    return "\n".join(out)


def heuristic_signature(report: str, sanitizer: Sanitizer) -> CrashSignature:
    payload = f"{sanitizer.value}\n{normalize_report(report)}".encode("utf-8", "surrogateescape")
    digest = hashlib.sha256(payload).hexdigest()[:DIGEST_CHARS]
    return CrashSignature(SignatureKind.HEURISTIC, sanitizer, fallback_digest=digest)


def parse_crash_report(report: str, sanitizer: Sanitizer, project_root_markers: list[str] | tuple[str, ...] = ()) -> CrashSignature:
    """Signature from the topmost project frame; heuristic digest when none parses."""
    for frame in parse_frames(report):
        rel = _project_relative(frame, list(project_root_markers))
        if rel is not None and frame.line > 0:
            return CrashSignature(SignatureKind.LOCATION, sanitizer, file=rel, line=frame.line)
    return heuristic_signature(report, sanitizer)


def report_locations(report: str, project_root_markers: list[str] | tuple[str, ...] = ()) -> list[tuple[str, int]]:
    """(file, line) for every frame of the report, project-relative where possible."""
    out = []
    for frame in parse_frames(report):
        rel = _project_relative(frame, list(project_root_markers))
        out.append((rel if rel is not None else frame.file, frame.line))
    return out
