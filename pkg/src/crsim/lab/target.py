"""Synthetic vulnerable projects.

A lab target is pure data (usually a JSON manifest).  Each planted bug has a
declarative trigger over input bytes and a pair of source patterns: the bug
is live in a source tree while ``vulnerable_pattern`` is present in the crash
file and no ``guard_patterns`` match.  Patching the source therefore changes
observable behavior without any real compiler.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from ..domain import (
    BranchPoint,
    CoverageSummary,
    InvariantError,
    Language,
    Sanitizer,
    context_window,
)

SOURCE_SUFFIXES = (".c", ".h", ".cc", ".cpp", ".hpp", ".java")


def decode_bytes(value) -> bytes:
    """Manifest byte strings: plain text (latin-1), ``{"hex": ..}`` or ``{"b64": ..}``."""
    if isinstance(value, str):
        return value.encode("latin-1")
    if isinstance(value, dict) and "hex" in value:
        return bytes.fromhex(value["hex"])
    if isinstance(value, dict) and "b64" in value:
        return base64.b64decode(value["b64"])
    raise ValueError(f"cannot decode bytes from {value!r}")


@dataclass(frozen=True)
class Conjunct:
    """One clause of a trigger: prefix, contains, min_length, max_length or byte_at."""

    op: str
    arg: object
    file: Optional[str] = None
    line: Optional[int] = None
    function: Optional[str] = None

    def holds(self, data: bytes) -> bool:
        if self.op == "prefix":
            return data.startswith(self.arg)  # type: ignore[arg-type]
        if self.op == "contains":
            return self.arg in data  # type: ignore[operator]
        if self.op == "min_length":
            return len(data) >= self.arg  # type: ignore[operator]
        if self.op == "max_length":
            return len(data) <= self.arg  # type: ignore[operator]
        if self.op == "byte_at":
            off, val = self.arg  # type: ignore[misc]
            return len(data) > off and data[off] == val
        raise InvariantError(f"unknown trigger op {self.op}")

    @classmethod
    def from_doc(cls, doc: dict) -> "Conjunct":
        ops = [k for k in ("prefix", "contains", "min_length", "max_length", "byte_at") if k in doc]
        if len(ops) != 1:
            raise InvariantError(f"trigger clause needs exactly one operator: {doc}")
        op = ops[0]
        arg = doc[op]
        if op in ("prefix", "contains"):
            arg = decode_bytes(arg)
        elif op == "byte_at":
            arg = (int(arg[0]), int(arg[1]))
        else:
            arg = int(arg)
        return cls(op, arg, doc.get("file"), doc.get("line"), doc.get("function"))


@dataclass(frozen=True)
class Frame:
    function: str
    file: str
    line: int
    java_class: Optional[str] = None


@dataclass(frozen=True)
class PlantedBug:
    bug_id: str
    harnesses: tuple[str, ...]
    sanitizers: tuple[Sanitizer, ...]
    trigger: tuple[Conjunct, ...]
    crash_site: Frame
    callers: tuple[Frame, ...]
    crash_kind: str
    vulnerable_pattern: str
    guard_patterns: tuple[str, ...] = ()
    cwe: Optional[str] = None

    def triggered_by(self, data: bytes) -> bool:
        return all(c.holds(data) for c in self.trigger)

    def crash_line_in(self, sources: Mapping[str, str]) -> Optional[int]:
        """Line of the live vulnerable statement, or None when patched out."""
        text = sources.get(self.crash_site.file)
        if text is None:
            return None
        if any(re.search(g, text) for g in self.guard_patterns):
            return None
        m = re.search(self.vulnerable_pattern, text)
        if not m:
            return None
        return text.count("\n", 0, m.start()) + 1


@dataclass(frozen=True)
class Behavior:
    tag: str
    file: str
    requires: tuple[str, ...] = ()
    forbids: tuple[str, ...] = ()


@dataclass(frozen=True)
class FunctionalityCheck:
    name: str
    input: bytes
    expect: str


@dataclass(frozen=True)
class Marker:
    file: str
    text: str


@dataclass
class LabTarget:
    name: str
    language: Language
    source_files: dict[str, str]
    harnesses: dict[str, str]  # harness name -> entry function
    bugs: list[PlantedBug]
    root_marker: str = ""
    behaviors: dict[str, Behavior] = field(default_factory=dict)
    functionality_checks: list[FunctionalityCheck] = field(default_factory=list)
    required_markers: list[Marker] = field(default_factory=list)
    dictionary: list[bytes] = field(default_factory=list)
    seeds: list[bytes] = field(default_factory=list)
    fuzz_execs_per_second: int = 20

    def __post_init__(self):
        for bug in self.bugs:
            site = bug.crash_site
            if site.file not in self.source_files:
                raise InvariantError(f"{bug.bug_id}: crash site file {site.file} not in sources")
            lines = self.source_files[site.file].split("\n")
            if not 1 <= site.line <= len(lines):
                raise InvariantError(f"{bug.bug_id}: crash site line {site.line} outside {site.file}")
            live = bug.crash_line_in(self.source_files)
            if live != site.line:
                raise InvariantError(
                    f"{bug.bug_id}: vulnerable pattern found at line {live}, crash site says {site.line}"
                )
            for h in bug.harnesses:
                if h not in self.harnesses:
                    raise InvariantError(f"{bug.bug_id}: unknown harness {h}")
            for s in bug.sanitizers:
                if (s is Sanitizer.JAZZER) != (self.language is Language.JAVA):
                    raise InvariantError(f"{bug.bug_id}: sanitizer {s.value} does not fit {self.language.value}")
        for chk in self.functionality_checks:
            if chk.expect not in self.behaviors:
                raise InvariantError(f"check {chk.name} expects unknown behavior {chk.expect}")

    # -------------------------------------------------------------- loading

    @classmethod
    def from_doc(cls, doc: dict, base_dir: Path | None = None) -> "LabTarget":
        sources = dict(doc.get("source_files", {}))
        if "source_dir" in doc:
            root = (base_dir or Path.cwd()) / doc["source_dir"]
            for p in sorted(root.rglob("*")):
                if p.is_file():
                    sources[p.relative_to(root).as_posix()] = p.read_text()
        bugs = []
        for b in doc.get("bugs", []):
            site = b["crash_site"]
            bugs.append(
                PlantedBug(
                    bug_id=b["id"],
                    harnesses=tuple(b["harnesses"]),
                    sanitizers=tuple(Sanitizer(s) for s in b["sanitizers"]),
                    trigger=tuple(Conjunct.from_doc(c) for c in b["trigger"]),
                    crash_site=Frame(site["function"], site["file"], int(site["line"]), site.get("class")),
                    callers=tuple(
                        Frame(c["function"], c["file"], int(c["line"]), c.get("class")) for c in b.get("callers", [])
                    ),
                    crash_kind=b.get("kind", "crash"),
                    vulnerable_pattern=b["vulnerable_pattern"],
                    guard_patterns=tuple(b.get("guard_patterns", [])),
                    cwe=b.get("cwe"),
                )
            )
        behaviors = {
            tag: Behavior(tag, v["file"], tuple(v.get("requires", [])), tuple(v.get("forbids", [])))
            for tag, v in doc.get("behaviors", {}).items()
        }
        return cls(
            name=doc["name"],
            language=Language(doc["language"]),
            source_files=sources,
            harnesses=dict(doc["harnesses"]),
            bugs=bugs,
            root_marker=doc.get("root_marker", f"/src/{doc['name']}/"),
            behaviors=behaviors,
            functionality_checks=[
                FunctionalityCheck(c["name"], decode_bytes(c["input"]), c["expect"])
                for c in doc.get("functionality_checks", [])
            ],
            required_markers=[Marker(m["file"], m["text"]) for m in doc.get("required_markers", [])],
            dictionary=[decode_bytes(d) for d in doc.get("dictionary", [])],
            seeds=[decode_bytes(s) for s in doc.get("seeds", [])],
            fuzz_execs_per_second=int(doc.get("fuzz_execs_per_second", 20)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "LabTarget":
        path = Path(path)
        return cls.from_doc(json.loads(path.read_text()), path.parent)

    def materialize(self, dest: str | Path) -> Path:
        dest = Path(dest)
        for rel, text in sorted(self.source_files.items()):
            p = dest / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        return dest

    def sources_in(self, workspace: str | Path | None) -> dict[str, str]:
        if workspace is None:
            return self.source_files
        root = Path(workspace)
        out = {}
        for p in sorted(root.rglob("*")):
            if p.is_file() and ".git" not in p.parts:
                out[p.relative_to(root).as_posix()] = p.read_bytes().decode("utf-8", "replace")
        return out

    # -------------------------------------------------------------- semantics

    def bugs_for(self, harness: str, sanitizer: Sanitizer) -> list[PlantedBug]:
        return [b for b in self.bugs if harness in b.harnesses and sanitizer in b.sanitizers]

    def first_crash(self, harness: str, sanitizer: Sanitizer, data: bytes, sources: Mapping[str, str]):
        """(bug, live crash line) for the first live bug the input triggers."""
        for bug in self.bugs_for(harness, sanitizer):
            line = bug.crash_line_in(sources)
            if line is not None and bug.triggered_by(data):
                return bug, line
        return None

    def render_report(self, bug: PlantedBug, line: int, harness: str, sanitizer: Sanitizer, data: bytes) -> str:
        h = hashlib.sha256(data).hexdigest()
        addr, pc = h[:12], h[12:24]
        pid = int(h[24:28], 16) % 50000 + 1
        site = bug.crash_site
        frames = [Frame(site.function, site.file, line, site.java_class)] + list(bug.callers)
        if sanitizer is Sanitizer.JAZZER:
            out = [f"== Java Exception: com.code_intelligence.jazzer.api.FuzzerSecurityIssueHigh: {bug.crash_kind}"]
            for f in frames:
                cls_name = f.java_class or Path(f.file).stem
                out.append(f"\tat {cls_name}.{f.function}({Path(f.file).name}:{f.line})")
            out.append("\tat com.code_intelligence.jazzer.driver.FuzzTargetRunner.runOne(FuzzTargetRunner.java:230)")
            out.append(f"== libFuzzer crashing input ==\nDEDUP_TOKEN: {bug.bug_id}")
            return "\n".join(out) + "\n"
        tool = {
            Sanitizer.ADDRESS: "AddressSanitizer",
            Sanitizer.MEMORY: "MemorySanitizer",
            Sanitizer.UNDEFINED: "UndefinedBehaviorSanitizer",
        }[sanitizer]
        level = "WARNING" if sanitizer is Sanitizer.MEMORY else "ERROR"
        out = [
            "INFO: Running with entropic power schedule (0xFF, 100).",
            f"Running: {harness} input ({len(data)} bytes)",
            f"=={pid}=={level}: {tool}: {bug.crash_kind} on address 0x{addr} at pc 0x{pc} bp 0x7ffd{addr[:8]} sp 0x7ffd{pc[:8]}",
            f"READ of size {len(data)} at 0x{addr} thread T0",
        ]
        for i, f in enumerate(frames):
            out.append(f"    #{i} 0x{h[i * 6:i * 6 + 12]} in {f.function} {self.root_marker}{f.file}:{f.line}:{3 + i}")
        out.append(f"SUMMARY: {tool}: {bug.crash_kind} {self.root_marker}{site.file}:{line}:3 in {site.function}")
        out.append(f"=={pid}==ABORTING")
        return "\n".join(out) + "\n"

    def coverage(self, harness: str, sanitizer: Sanitizer, data: bytes) -> CoverageSummary:
        entry = self.harnesses.get(harness, harness)
        functions: list[str] = [entry]
        branches: list[BranchPoint] = []
        for bug in self.bugs_for(harness, sanitizer):
            for caller in reversed(bug.callers):
                if caller.function not in functions:
                    functions.append(caller.function)
            all_taken = True
            for c in bug.trigger:
                taken = c.holds(data)
                all_taken = all_taken and taken
                if c.function and taken and c.function not in functions:
                    functions.append(c.function)
                if c.file and c.line:
                    lines = self.source_files.get(c.file, "").split("\n")
                    branches.append(BranchPoint(c.file, c.line, taken, context_window(lines, c.line)))
            if all_taken and bug.crash_site.function not in functions:
                functions.append(bug.crash_site.function)
        return CoverageSummary(tuple(functions), tuple(branches))

    def depth(self, harness: str, sanitizer: Sanitizer, data: bytes) -> int:
        """Number of satisfied trigger clauses; drives the fuzzer's feedback."""
        return sum(c.holds(data) for b in self.bugs_for(harness, sanitizer) for c in b.trigger)

    # -------------------------------------------------------------- build/test

    def build(self, workspace: str | Path | None) -> tuple[bool, str]:
        sources = self.sources_in(workspace)
        problems = []
        for rel in sorted(self.source_files):
            if rel not in sources:
                problems.append(f"{rel}: file missing")
        for rel, text in sorted(sources.items()):
            if rel.endswith(SOURCE_SUFFIXES):
                err = check_delimiters(text)
                if err:
                    problems.append(f"{rel}:{err}")
        for marker in self.required_markers:
            text = sources.get(marker.file, "")
            if marker.text not in [ln.strip() for ln in text.split("\n")]:
                problems.append(f"{marker.file}: required line missing: {marker.text}")
        return (not problems, "\n".join(problems))

    def behavior_holds(self, tag: str, sources: Mapping[str, str]) -> bool:
        b = self.behaviors[tag]
        text = sources.get(b.file, "")
        return all(re.search(p, text) for p in b.requires) and not any(re.search(p, text) for p in b.forbids)


_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {v: k for k, v in _OPEN.items()}


def check_delimiters(text: str) -> str | None:
    """Return ``"<line>: <problem>"`` for the first unbalanced delimiter, else None.

    String/char literals and // and /* */ comments are skipped.
    """
    stack: list[tuple[str, int]] = []
    i, line, n = 0, 1, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
        elif text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
            continue
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                return f"{line}: unterminated comment"
            line += text.count("\n", i, j)
            i = j + 2
            continue
        elif ch in "\"'":
            j = i + 1
            while j < n and text[j] != ch:
                if text[j] == "\\":
                    j += 1
                elif text[j] == "\n":
                    return f"{line}: unterminated literal"
                j += 1
            if j >= n:
                return f"{line}: unterminated literal"
            i = j + 1
            continue
        elif ch in _OPEN:
            stack.append((ch, line))
        elif ch in _CLOSE:
            if not stack or stack[-1][0] != _CLOSE[ch]:
                return f"{line}: unmatched '{ch}'"
            stack.pop()
        i += 1
    if stack:
        ch, ln = stack[-1]
        return f"{ln}: unclosed '{ch}'"
    return None
