"""Core value types shared by every service, with invariant checks and JSON forms.

Every type is a frozen dataclass validated on construction.  ``serialize``
turns any of them into a plain JSON-compatible document whose keys are the
field names; ``deserialize`` reverses it.  Durations and timestamps are
integer milliseconds.
"""

from __future__ import annotations

import base64
import dataclasses
import enum
import types
import typing
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .diffs import DiffParseError, validate_diff


class InvariantError(ValueError):
    """A value violates one of its type's invariants."""


class Mode(str, enum.Enum):
    DELTA_SCAN = "DeltaScan"
    FULL_SCAN = "FullScan"
    SARIF_ASSESSMENT = "SarifAssessment"


class Language(str, enum.Enum):
    C_CPP = "C_CPP"
    JAVA = "Java"


class Sanitizer(str, enum.Enum):
    ADDRESS = "Address"
    MEMORY = "Memory"
    UNDEFINED = "UndefinedBehavior"
    JAZZER = "Jazzer"


class SignatureKind(str, enum.Enum):
    LOCATION = "Location"
    HEURISTIC = "Heuristic"


class Status(str, enum.Enum):
    PENDING = "Pending"
    PASSED = "Passed"
    FAILED = "Failed"
    DUPLICATE = "Duplicate"


class Check(str, enum.Enum):
    UNKNOWN = "Unknown"
    PASS = "Pass"
    FAIL = "Fail"


class Verdict(str, enum.Enum):
    UNDECIDED = "Undecided"
    TRUE_POSITIVE = "TruePositive"
    FALSE_POSITIVE = "FalsePositive"
    DEFERRED = "Deferred"


FINAL_VERDICTS = frozenset({Verdict.TRUE_POSITIVE, Verdict.FALSE_POSITIVE})
SCORED_MODES = frozenset({Mode.DELTA_SCAN, Mode.FULL_SCAN})


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvariantError(message)


@dataclass(frozen=True)
class ChallengeTask:
    task_id: str
    mode: Mode
    project_name: str
    repo_root: str
    language: Language
    time_window: int
    received_at: int = 0
    harness_names: tuple[str, ...] = ()
    base_state_ref: Optional[str] = None
    commit_diff: Optional[str] = None

    def __post_init__(self):
        _require(bool(self.task_id), "task_id must be non-empty")
        _require(self.time_window > 0, "time_window must be positive")
        if self.mode is Mode.DELTA_SCAN:
            _require(bool(self.commit_diff), "delta-scan task requires a commit diff")
        if self.mode in SCORED_MODES:
            _require(len(self.harness_names) > 0, "scored task requires at least one harness")

    @property
    def deadline(self) -> int:
        return self.received_at + self.time_window


@dataclass(frozen=True)
class FuzzerTarget:
    harness_name: str
    sanitizer: Sanitizer
    task_id: str

    def __post_init__(self):
        _require(bool(self.harness_name), "harness_name must be non-empty")

    @property
    def key(self) -> str:
        return f"{self.harness_name}/{self.sanitizer.value}"


def check_target_for_task(target: FuzzerTarget, task: ChallengeTask) -> None:
    _require(target.task_id == task.task_id, "target belongs to another task")
    is_java = task.language is Language.JAVA
    _require(
        (target.sanitizer is Sanitizer.JAZZER) == is_java,
        "Jazzer is used exactly for Java tasks",
    )


def check_unique_targets(targets: list[FuzzerTarget]) -> None:
    seen = set()
    for t in targets:
        k = (t.task_id, t.harness_name, t.sanitizer)
        _require(k not in seen, f"duplicate target {t.key}")
        seen.add(k)


@dataclass(frozen=True, eq=False)
class CrashSignature:
    kind: SignatureKind
    sanitizer: Sanitizer
    file: Optional[str] = None
    line: Optional[int] = None
    fallback_digest: Optional[str] = None

    def __post_init__(self):
        if self.kind is SignatureKind.LOCATION:
            _require(bool(self.file), "location signature needs a file")
            _require(self.line is not None and self.line > 0, "location signature needs a positive line")
        else:
            _require(bool(self.fallback_digest), "heuristic signature needs a digest")
            _require(
                all(c in "0123456789abcdef" for c in self.fallback_digest or ""),
                "digest must be lowercase hex",
            )

    def _key(self) -> tuple:
        if self.kind is SignatureKind.LOCATION:
            return (self.kind, self.file, self.line, self.sanitizer)
        return (self.kind, self.fallback_digest, self.sanitizer)

    def __eq__(self, other):
        if not isinstance(other, CrashSignature):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def key(self) -> str:
        """Stable string form used to key ledgers, caps and bundles."""
        if self.kind is SignatureKind.LOCATION:
            return f"{self.file}:{self.line}:{self.sanitizer.value}"
        return f"#{self.fallback_digest}:{self.sanitizer.value}"


def task_signature(task_id: str, sanitizer: Sanitizer = Sanitizer.ADDRESS) -> CrashSignature:
    """Canonical signature for POV-less work: one introduced vulnerability per task."""
    import hashlib

    digest = hashlib.sha256(f"task:{task_id}".encode()).hexdigest()[:16]
    return CrashSignature(SignatureKind.HEURISTIC, sanitizer, fallback_digest=digest)


_TRANSITIONS = {Status.PENDING: {Status.PASSED, Status.FAILED, Status.DUPLICATE}}


def _check_transition(old: Status, new: Status) -> None:
    _require(new in _TRANSITIONS.get(old, set()), f"illegal status transition {old.value} -> {new.value}")


@dataclass(frozen=True)
class PovSubmission:
    pov_id: str
    task_id: str
    target: FuzzerTarget
    input_blob: bytes
    crash_report: str
    signature: CrashSignature
    status: Status = Status.PENDING
    submitted_at: int = 0
    originating_strategy: str = ""

    def __post_init__(self):
        _require(len(self.input_blob) > 0, "POV input must be non-empty")
        _require(self.target.task_id == self.task_id, "POV target belongs to another task")

    def with_status(self, status: Status) -> "PovSubmission":
        _check_transition(self.status, status)
        return replace(self, status=status)


@dataclass(frozen=True)
class ValidationRecord:
    applies: Check = Check.UNKNOWN
    compiles: Check = Check.UNKNOWN
    povs_blocked: Check = Check.UNKNOWN
    tests_pass: Check = Check.UNKNOWN

    @property
    def valid(self) -> bool:
        return all(c is Check.PASS for c in dataclasses.astuple(self))


@dataclass(frozen=True)
class PatchSubmission:
    patch_id: str
    task_id: str
    diff_text: str
    pov_signature: Optional[CrashSignature] = None
    is_xpatch: bool = False
    status: Status = Status.PENDING
    submitted_at: int = 0
    validation: ValidationRecord = field(default_factory=ValidationRecord)

    def __post_init__(self):
        try:
            validate_diff(self.diff_text)
        except DiffParseError as exc:
            raise InvariantError(f"diff_text is not a unified diff: {exc}") from exc
        if self.is_xpatch:
            _require(self.pov_signature is None, "an XPatch carries no POV signature")

    def with_status(self, status: Status) -> "PatchSubmission":
        _check_transition(self.status, status)
        return replace(self, status=status)


@dataclass(frozen=True)
class FunctionRef:
    function_name: str
    file: str


@dataclass(frozen=True)
class SourceLocation:
    file: str
    start_line: int
    end_line: int

    def __post_init__(self):
        _require(1 <= self.start_line <= self.end_line, "location needs 1 <= start_line <= end_line")


@dataclass(frozen=True)
class SarifRecord:
    sarif_id: str
    task_id: str
    affected_functions: tuple[FunctionRef, ...] = ()
    cwe_ids: tuple[str, ...] = ()
    locations: tuple[SourceLocation, ...] = ()
    severity: Optional[str] = None
    stack_trace: Optional[tuple[str, ...]] = None
    description: str = ""
    verdict: Verdict = Verdict.UNDECIDED

    def __post_init__(self):
        _require(
            bool(self.affected_functions) or bool(self.locations),
            "SARIF record needs affected functions or locations",
        )


@dataclass(frozen=True)
class Bundle:
    bundle_id: str
    task_id: str
    canonical_signature: CrashSignature
    pov_id: Optional[str] = None
    patch_id: Optional[str] = None
    sarif_id: Optional[str] = None

    def __post_init__(self):
        _require(len(self.members) >= 2, "a bundle groups at least two submissions")

    @property
    def members(self) -> list[str]:
        return [m for m in (self.pov_id, self.patch_id, self.sarif_id) if m is not None]


@dataclass(frozen=True)
class ScoreInputs:
    acc: int
    inacc: int
    time_rem: int
    time_window: int

    def __post_init__(self):
        _require(self.acc >= 0 and self.inacc >= 0, "counts must be non-negative")
        _require(self.time_window > 0, "time_window must be positive")
        _require(0 <= self.time_rem <= self.time_window, "need 0 <= time_rem <= time_window")


_TOL = 1e-9


def _in_band(x: float, lo: float, hi: float) -> bool:
    return abs(x) <= _TOL or lo - _TOL <= x <= hi + _TOL


@dataclass(frozen=True)
class ScoreComponents:
    """Points for one vulnerability (one canonical signature) of a challenge."""

    vds: float = 0.0
    prs: float = 0.0
    sas: float = 0.0
    bdl: float = 0.0
    am: float = 1.0
    total: float = 0.0

    def __post_init__(self):
        _require(0.75 - _TOL <= self.am <= 1.0 + _TOL, "am must lie in [0.75, 1]")
        _require(_in_band(self.vds, 1.0, 2.0), "vds must be 0 or in [1, 2]")
        _require(_in_band(self.prs, 3.0, 6.0), "prs must be 0 or in [3, 6]")
        _require(_in_band(self.sas, 0.5, 1.0), "sas must be 0 or in [0.5, 1]")
        _require(_in_band(self.bdl, 0.5, 1.0), "bdl must be 0 or in [0.5, 1]")
        expected = self.am * (self.vds + self.prs + self.sas + self.bdl)
        _require(abs(self.total - expected) <= 1e-9, "total must equal am * (vds + prs + sas + bdl)")


@dataclass(frozen=True)
class FunctionRecord:
    name: str
    file: str
    start_line: int
    end_line: int
    source: Optional[str] = None
    parameters: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        _require(bool(self.name), "function name must be non-empty")
        _require(1 <= self.start_line <= self.end_line, "need 1 <= start_line <= end_line")

    @property
    def ident(self) -> tuple[str, str, int]:
        return (self.name, self.file, self.start_line)


@dataclass(frozen=True)
class CallGraph:
    functions: tuple[FunctionRecord, ...]
    edges: frozenset[tuple[int, int]]
    entrypoints: dict[str, Optional[int]]

    def __post_init__(self):
        n = len(self.functions)
        for a, b in self.edges:
            _require(0 <= a < n and 0 <= b < n, f"dangling edge ({a}, {b})")
        for harness, idx in self.entrypoints.items():
            _require(idx is None or 0 <= idx < n, f"entrypoint of {harness!r} is not a function")
        seen = set()
        for f in self.functions:
            _require(f.ident not in seen, f"duplicate function {f.ident}")
            seen.add(f.ident)
        # adjacency, sorted ascending for deterministic traversal
        succ: list[list[int]] = [[] for _ in range(n)]
        for a, b in sorted(self.edges):
            succ[a].append(b)
        object.__setattr__(self, "_succ", tuple(tuple(s) for s in succ))

    def successors(self, index: int) -> tuple[int, ...]:
        return self._succ[index]  # type: ignore[attr-defined]

    def index_of(self, record: FunctionRecord) -> Optional[int]:
        for i, f in enumerate(self.functions):
            if f.ident == record.ident:
                return i
        return None


@dataclass(frozen=True)
class CallPath:
    functions: tuple[FunctionRecord, ...]

    def __post_init__(self):
        _require(len(self.functions) >= 1, "a call path has at least one function")
        first, last = self.functions[0].ident, self.functions[-1].ident
        for f in self.functions[1:-1]:
            _require(f.ident not in (first, last), "intermediate function equals the source or target")

    def check_against(self, graph: CallGraph) -> None:
        idx = [graph.index_of(f) for f in self.functions]
        _require(all(i is not None for i in idx), "path mentions a function missing from the graph")
        for a, b in zip(idx, idx[1:]):
            _require((a, b) in graph.edges, f"path step {a}->{b} is not an edge")


# ---------------------------------------------------------------- serialization

def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def serialize(value: Any) -> Any:
    """JSON-compatible document for a domain value (or plain container of them)."""
    if isinstance(value, CallGraph):
        return {
            "functions": [serialize(f) for f in value.functions],
            "edges": [list(e) for e in sorted(value.edges)],
            "entrypoints": dict(sorted(value.entrypoints.items())),
        }
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: serialize(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, bytes):
        return base64.b64encode(value).decode("ascii")
    if isinstance(value, (list, tuple)):
        return [serialize(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return [serialize(v) for v in sorted(value)]
    if isinstance(value, dict):
        return {str(k): serialize(v) for k, v in value.items()}
    return value


def _from(tp: Any, doc: Any) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if doc is None:
            return None
        non_none = [a for a in args if a is not type(None)]
        return _from(non_none[0], doc)
    if tp is Any:
        return doc
    if origin in (tuple,):
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_from(args[0], d) for d in doc)
        return tuple(_from(a, d) for a, d in zip(args, doc))
    if origin in (list,):
        return [_from(args[0], d) for d in doc]
    if origin in (frozenset, set):
        return origin(_from(args[0], d) for d in doc)
    if origin is dict:
        return {k: _from(args[1], v) for k, v in doc.items()}
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(doc)
    if tp is bytes:
        return base64.b64decode(doc)
    if isinstance(tp, type) and dataclasses.is_dataclass(tp):
        return deserialize(tp, doc)
    if tp is float and isinstance(doc, int):
        return float(doc)
    return doc


def deserialize(cls: type, doc: dict) -> Any:
    """Rebuild a ``cls`` value from its document; invariants are re-checked."""
    if not isinstance(doc, dict):
        raise InvariantError(f"{cls.__name__} document must be an object")
    hints = _hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in doc:
            kwargs[f.name] = _from(hints[f.name], doc[f.name])
    if cls is CallGraph:
        kwargs["edges"] = frozenset(tuple(e) for e in doc.get("edges", []))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvariantError(f"{cls.__name__}: {exc}") from exc


@dataclass(frozen=True)
class BranchPoint:
    file: str
    line: int
    taken: bool
    # (line_number, text) for the branch line +-3, clipped to the file
    context: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        _require(len(self.context) <= 7, "branch context spans at most 7 lines")
        if self.context:
            nums = [n for n, _ in self.context]
            _require(
                nums == list(range(nums[0], nums[-1] + 1)) and nums[0] >= max(1, self.line - 3)
                and nums[-1] <= self.line + 3,
                "context must be the contiguous branch line +-3",
            )


@dataclass(frozen=True)
class CoverageSummary:
    executed_functions: tuple[str, ...] = ()
    branch_points: tuple[BranchPoint, ...] = ()


def context_window(lines: list[str], line: int, radius: int = 3) -> tuple[tuple[int, str], ...]:
    """``line`` +- ``radius`` (1-based), clipped to the file."""
    lo = max(1, line - radius)
    hi = min(len(lines), line + radius)
    return tuple((n, lines[n - 1]) for n in range(lo, hi + 1))
