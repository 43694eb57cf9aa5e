"""SARIF ingestion and assessment.

Each of three evaluators answers two separate questions about a finding:
"is this likely a false positive?" and "is this likely a real bug?".  The
finding is a true positive when at least two evaluators affirm the second
question and fewer than two affirm the first, and symmetrically for a false
positive.  Anything else (including both questions affirmed by a majority)
is inconclusive and the record is deferred until a POV shows up.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

from .callgraph import reachable_indices
from .domain import (
    FINAL_VERDICTS,
    CallGraph,
    FunctionRef,
    PovSubmission,
    SarifRecord,
    SourceLocation,
    Verdict,
)
from .router import Conversation
from .submission import match_sarif_to_pov, parse_yes_no

log = logging.getLogger(__name__)

EXCERPT_RADIUS = 20
EXCERPT_MAX_LINES = 200


class SarifParseError(ValueError):
    pass


class CheckKind(str, enum.Enum):
    FALSE_POSITIVE = "FalsePositiveCheck"
    TRUE_POSITIVE = "TruePositiveCheck"


class Consensus(str, enum.Enum):
    TRUE_POSITIVE = "TruePositive"
    FALSE_POSITIVE = "FalsePositive"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Vote:
    evaluator: str
    answer: Optional[bool]  # None when the evaluator failed
    check: CheckKind


@dataclass(frozen=True)
class ConsensusResult:
    verdict: Consensus
    votes: tuple[Vote, ...]
    reaching_harnesses: tuple[str, ...] = ()

    @property
    def record_verdict(self) -> Verdict:
        return {
            Consensus.TRUE_POSITIVE: Verdict.TRUE_POSITIVE,
            Consensus.FALSE_POSITIVE: Verdict.FALSE_POSITIVE,
            Consensus.INCONCLUSIVE: Verdict.DEFERRED,
        }[self.verdict]


def consensus(votes: Iterable[Vote]) -> Consensus:
    votes = list(votes)
    tp = sum(1 for v in votes if v.check is CheckKind.TRUE_POSITIVE and v.answer is True)
    fp = sum(1 for v in votes if v.check is CheckKind.FALSE_POSITIVE and v.answer is True)
    if tp >= 2 and fp < 2:
        return Consensus.TRUE_POSITIVE
    if fp >= 2 and tp < 2:
        return Consensus.FALSE_POSITIVE
    return Consensus.INCONCLUSIVE


# ---------------------------------------------------------------------------
# parsing


def _cwe_from(text: str) -> Optional[str]:
    t = text.strip()
    low = t.lower()
    if low.startswith("cwe-"):
        return "CWE-" + t[4:]
    if "/cwe/cwe-" in low:
        return "CWE-" + low.rsplit("cwe-", 1)[1]
    return None


def parse_sarif_results(document, task_id: str = "", id_prefix: str = "sarif") -> list[SarifRecord]:
    """Every result of every run as a record (ids ``<prefix>-<run>-<result>``)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except ValueError as exc:
            raise SarifParseError(f"not JSON: {exc}") from exc
    if not isinstance(document, dict) or not isinstance(document.get("runs"), list):
        raise SarifParseError("document has no runs list")
    if not document["runs"]:
        raise SarifParseError("runs list is empty")
    records = []
    for ri, run in enumerate(document["runs"]):
        if not isinstance(run, dict) or not isinstance(run.get("results", []), list):
            raise SarifParseError(f"runs[{ri}] is not a run object")
        rule_tags: dict[str, list[str]] = {}
        for rule in (run.get("tool", {}).get("driver", {}).get("rules") or []):
            tags = list((rule.get("properties") or {}).get("tags") or [])
            rule_tags[rule.get("id", "")] = tags
        for qi, res in enumerate(run.get("results", [])):
            records.append(_record(res, rule_tags, task_id, f"{id_prefix}-{ri}-{qi}", f"runs[{ri}].results[{qi}]"))
    if not records:
        raise SarifParseError("document contains no results")
    return records


def parse_sarif(document, task_id: str = "", sarif_id: str = "sarif-0") -> SarifRecord:
    """The first result of a SARIF document."""
    return replace(parse_sarif_results(document, task_id)[0], sarif_id=sarif_id)


def _record(res: dict, rule_tags: dict, task_id: str, sarif_id: str, where: str) -> SarifRecord:
    if not isinstance(res, dict):
        raise SarifParseError(f"{where} is not an object")
    cwes: list[str] = []
    for cand in [res.get("ruleId", "")] + rule_tags.get(res.get("ruleId", ""), []) + list(
        (res.get("properties") or {}).get("tags") or []
    ):
        c = _cwe_from(str(cand))
        if c and c not in cwes:
            cwes.append(c)
    locations, functions = [], []
    for li, loc in enumerate(res.get("locations") or []):
        phys = loc.get("physicalLocation") or {}
        uri = (phys.get("artifactLocation") or {}).get("uri")
        region = phys.get("region") or {}
        if uri and "startLine" in region:
            start = int(region["startLine"])
            end = int(region.get("endLine", start))
            try:
                locations.append(SourceLocation(uri.removeprefix("file://"), start, max(start, end)))
            except ValueError as exc:
                raise SarifParseError(f"{where}.locations[{li}]: {exc}") from exc
        for logical in loc.get("logicalLocations") or []:
            if logical.get("kind", "function") in ("function", "member", "method"):
                name = logical.get("name") or logical.get("fullyQualifiedName")
                if name:
                    functions.append(FunctionRef(name, uri or ""))
    frames = None
    stacks = res.get("stacks") or []
    if stacks:
        frames = []
        for fr in stacks[0].get("frames", []):
            phys = (fr.get("location") or {}).get("physicalLocation") or {}
            uri = (phys.get("artifactLocation") or {}).get("uri", "?")
            line = (phys.get("region") or {}).get("startLine", 0)
            frames.append(f"{uri}:{line}")
        frames = tuple(frames)
    try:
        return SarifRecord(
            sarif_id=sarif_id,
            task_id=task_id,
            affected_functions=tuple(functions),
            cwe_ids=tuple(cwes),
            locations=tuple(locations),
            severity=res.get("level"),
            stack_trace=frames,
            description=str((res.get("message") or {}).get("text", "")),
        )
    except ValueError as exc:
        raise SarifParseError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# assessment


def reaching_harnesses(record: SarifRecord, graph: Optional[CallGraph]) -> list[str]:
    """Harnesses from whose entrypoint a reported function or location is reachable."""
    if graph is None:
        return []
    hits = []
    for harness in sorted(graph.entrypoints):
        for i in reachable_indices(graph, harness):
            f = graph.functions[i]
            named = any(
                fr.function_name == f.name and (not fr.file or _same(fr.file, f.file))
                for fr in record.affected_functions
            )
            spanned = any(
                _same(loc.file, f.file) and loc.start_line <= f.end_line and f.start_line <= loc.end_line
                for loc in record.locations
            )
            if named or spanned:
                hits.append(harness)
                break
    return hits


def _same(a: str, b: str) -> bool:
    return a == b or a.endswith("/" + b) or b.endswith("/" + a)


def source_excerpt(record: SarifRecord, read_source: Callable[[str], Optional[str]]) -> str:
    """Reported lines +-20 per location, at most 200 lines overall."""
    out: list[str] = []
    for loc in record.locations:
        text = read_source(loc.file)
        if text is None:
            continue
        lines = text.split("\n")
        lo = max(1, loc.start_line - EXCERPT_RADIUS)
        hi = min(len(lines), loc.end_line + EXCERPT_RADIUS)
        out.append(f"--- {loc.file} lines {lo}-{hi}")
        out.extend(f"{n:5d}  {lines[n - 1]}" for n in range(lo, hi + 1))
    if len(out) > EXCERPT_MAX_LINES:
        out = out[:EXCERPT_MAX_LINES] + ["[excerpt truncated]"]
    return "\n".join(out)


_SYSTEM = (
    "You audit static-analysis findings against the source code they point at. "
    "Reply YES or NO on the first line, then give a short justification."
)

_QUESTIONS = {
    CheckKind.FALSE_POSITIVE: "Looking at this code, is the finding most likely a false alarm that cannot be triggered?",
    CheckKind.TRUE_POSITIVE: "Looking at this code, is the finding most likely a real, triggerable vulnerability?",
}


def _finding_text(record: SarifRecord, excerpt: str) -> str:
    parts = [f"Finding: {record.description or '(no message)'}"]
    if record.cwe_ids:
        parts.append("Classifications: " + ", ".join(record.cwe_ids))
    if record.severity:
        parts.append(f"Severity: {record.severity}")
    for f in record.affected_functions:
        parts.append(f"Function: {f.function_name} ({f.file})")
    for loc in record.locations:
        parts.append(f"Location: {loc.file}:{loc.start_line}-{loc.end_line}")
    if excerpt:
        parts.append("Source:\n" + excerpt)
    return "\n".join(parts)


def assess(
    record: SarifRecord,
    graph: Optional[CallGraph],
    evaluators: Sequence,
    read_source: Callable[[str], Optional[str]] = lambda _p: None,
) -> ConsensusResult:
    """Ask every evaluator both questions, in evaluator order, and apply the majority rule."""
    harnesses = reaching_harnesses(record, graph)
    if not harnesses:
        log.info("SARIF %s: no harness reaches it; validating with evaluators", record.sarif_id)
    body = _finding_text(record, source_excerpt(record, read_source))
    votes = []
    for ev in evaluators:
        name = getattr(ev, "name", repr(ev))
        for check in (CheckKind.FALSE_POSITIVE, CheckKind.TRUE_POSITIVE):
            conv = Conversation(_SYSTEM).user(body + "\n\n" + _QUESTIONS[check])
            try:
                answer = parse_yes_no(ev.complete(conv))
            except Exception as exc:
                log.info("evaluator %s failed on %s: %s", name, check.value, exc)
                answer = None
            votes.append(Vote(name, answer, check))
    return ConsensusResult(consensus(votes), tuple(votes), tuple(harnesses))


def forward_for_guidance(record: SarifRecord, has_pov: bool = False) -> Optional[dict]:
    """Broadcast for the sarif-driven POV strategy, or None when nothing should go out."""
    if record.verdict is Verdict.FALSE_POSITIVE:
        return None
    if record.verdict is Verdict.TRUE_POSITIVE and has_pov:
        return None
    if record.verdict not in (Verdict.TRUE_POSITIVE, Verdict.DEFERRED):
        return None
    return {
        "strategy": "sarif_POV0",
        "sarif_id": record.sarif_id,
        "task_id": record.task_id,
        "verdict": record.verdict.value,
        "locations": [[l.file, l.start_line, l.end_line] for l in record.locations],
        "functions": [[f.function_name, f.file] for f in record.affected_functions],
        "cwe_ids": list(record.cwe_ids),
    }


def on_pov_accepted(
    pov: PovSubmission,
    pending: Sequence[SarifRecord],
    evaluator=None,
    project_root_markers: Sequence[str] = (),
) -> list[SarifRecord]:
    """Pending records the POV confirms, returned with verdict TruePositive."""
    out = []
    for record in pending:
        if record.verdict in FINAL_VERDICTS or record.task_id != pov.task_id:
            continue
        if match_sarif_to_pov(record, pov, evaluator, project_root_markers):
            out.append(replace(record, verdict=Verdict.TRUE_POSITIVE))
    return out


class FinalVerdictError(ValueError):
    pass


class SarifStore:
    """Records by id; a final verdict, once set, never changes."""

    def __init__(self):
        self._records: dict[str, SarifRecord] = {}
        self._lock = threading.Lock()

    def add(self, record: SarifRecord) -> SarifRecord:
        with self._lock:
            return self._records.setdefault(record.sarif_id, record)

    def get(self, sarif_id: str) -> SarifRecord:
        with self._lock:
            return self._records[sarif_id]

    def set_verdict(self, sarif_id: str, verdict: Verdict) -> SarifRecord:
        with self._lock:
            rec = self._records[sarif_id]
            if rec.verdict in FINAL_VERDICTS and verdict is not rec.verdict:
                raise FinalVerdictError(f"{sarif_id} already final as {rec.verdict.value}")
            rec = replace(rec, verdict=verdict)
            self._records[sarif_id] = rec
            return rec

    def pending(self, task_id: str) -> list[SarifRecord]:
        with self._lock:
            return [
                r for r in self._records.values()
                if r.task_id == task_id and r.verdict not in FINAL_VERDICTS
            ]

    def all(self, task_id: Optional[str] = None) -> list[SarifRecord]:
        with self._lock:
            return [r for r in self._records.values() if task_id is None or r.task_id == task_id]

    def pov_hook(self, evaluator=None, project_root_markers: Sequence[str] = ()):
        """A submission-service hook that confirms pending records when a POV passes."""

        def hook(pov: PovSubmission) -> list[SarifRecord]:
            confirmed = on_pov_accepted(pov, self.pending(pov.task_id), evaluator, project_root_markers)
            return [self.set_verdict(r.sarif_id, Verdict.TRUE_POSITIVE) for r in confirmed]

        return hook
