"""Submission service: deduplication, bundling, the accuracy ledger and the
competition-client boundary.

All decisions for one task run on a single-worker executor, so the dedup
state is only ever touched by one thread per task.  Callers on any thread
block until their decision is made.
"""

from __future__ import annotations

import concurrent.futures
import enum
import itertools
import logging
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import httpx

from .clock import SECOND, SystemClock
from .domain import (
    Bundle,
    ChallengeTask,
    CrashSignature,
    PatchSubmission,
    PovSubmission,
    SarifRecord,
    Status,
    Verdict,
    serialize,
    task_signature,
)
from .router import Conversation
from .signature import report_locations

log = logging.getLogger(__name__)

LEVENSHTEIN_THRESHOLD = 10
SAME_SIGNATURE_WINDOW_MS = 3 * SECOND
PATCHES_PER_SIGNATURE = 5
XPATCHES_PER_TASK = 3
CLIENT_RETRIES = 3
BACKOFF_START_MS = 1 * SECOND


# ---------------------------------------------------------------------------
# edit distance


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance, two-row dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def bounded_levenshtein(a: str, b: str, bound: int) -> int:
    """Edit distance if it is at most ``bound``, else ``bound + 1``.

    Only the diagonal band of width ``2 * bound + 1`` is filled, which keeps
    comparisons of long diffs linear in their length.
    """
    if abs(len(a) - len(b)) > bound:
        return bound + 1
    big = bound + 1
    n = len(b)
    prev = [j if j <= bound else big for j in range(n + 1)]
    for i in range(1, len(a) + 1):
        lo, hi = max(1, i - bound), min(n, i + bound)
        cur = [big] * (n + 1)
        if i <= bound:
            cur[0] = i
        ca = a[i - 1]
        row_min = cur[0]
        for j in range(lo, hi + 1):
            v = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != b[j - 1]))
            cur[j] = v if v < big else big
            row_min = min(row_min, cur[j])
        if row_min > bound:
            return big
        prev = cur
    return min(prev[n], big)


# ---------------------------------------------------------------------------
# evaluator questions

_YES = re.compile(r"\b(yes|redundant|same|duplicate|true)\b", re.I)
_NO = re.compile(r"\b(no|distinct|different|unrelated|false)\b", re.I)


def parse_yes_no(text: str) -> Optional[bool]:
    """Earliest yes-like or no-like word in an answer; None when neither appears."""
    y, n = _YES.search(text or ""), _NO.search(text or "")
    if y and (not n or y.start() < n.start()):
        return True
    if n:
        return False
    return None


_JUDGE_SYSTEM = (
    "You review crash reports for a vulnerability triage team. Decide whether two reports "
    "come from one underlying defect. Start your answer with REDUNDANT or DISTINCT."
)


def judge_pov_equivalence(report_a: str, report_b: str, evaluators: Sequence) -> bool:
    """True iff at least two evaluators call the reports redundant; errors vote no."""
    question = (
        "Report A:\n" + report_a[:6000] + "\n\nReport B:\n" + report_b[:6000]
        + "\n\nDo both reports stem from the same root cause?"
    )
    conv = Conversation(_JUDGE_SYSTEM).user(question)
    yes = 0
    for ev in evaluators:
        try:
            vote = parse_yes_no(ev.complete(conv))
        except Exception as exc:  # an unreachable evaluator abstains as "no"
            log.info("equivalence evaluator %s failed: %s", getattr(ev, "name", ev), exc)
            vote = False
        yes += vote is True
    return yes >= 2


_MATCH_SYSTEM = (
    "You compare a static-analysis finding with a fuzzer crash. Answer YES when both describe "
    "the same vulnerability and NO otherwise."
)


def match_sarif_to_pov(sarif: SarifRecord, pov: PovSubmission, evaluator=None,
                       project_root_markers: Sequence[str] = ()) -> bool:
    """Stage one: a reported (file, line) appears among the crash frames.
    Stage two: a single evaluator compares the descriptions."""
    frames = report_locations(pov.crash_report, project_root_markers)
    for loc in sarif.locations:
        for f, line in frames:
            if _same_file(loc.file, f) and loc.start_line <= line <= loc.end_line:
                return True
    if evaluator is None:
        return False
    finding = [sarif.description or "(no description)"]
    finding += [f"location {l.file}:{l.start_line}-{l.end_line}" for l in sarif.locations]
    finding += [f"function {f.function_name} in {f.file}" for f in sarif.affected_functions]
    finding += [f"classification {c}" for c in sarif.cwe_ids]
    conv = Conversation(_MATCH_SYSTEM).user(
        "Static-analysis finding:\n" + "\n".join(finding)
        + "\n\nCrash report:\n" + pov.crash_report[:6000]
        + "\n\nIs this the same vulnerability?"
    )
    try:
        return parse_yes_no(evaluator.complete(conv)) is True
    except Exception as exc:
        log.info("SARIF match evaluator failed: %s", exc)
        return False


def _same_file(a: str, b: str) -> bool:
    a, b = a.lstrip("./"), b.lstrip("./")
    return a == b or a.endswith("/" + b) or b.endswith("/" + a)


# ---------------------------------------------------------------------------
# competition client


class TransientClientError(Exception):
    """Transport-level failure; the same request may be retried."""


@dataclass(frozen=True)
class ClientResult:
    status: Status
    external_id: str


class CompetitionClient(Protocol):
    def submit_pov(self, pov: PovSubmission) -> ClientResult: ...

    def submit_patch(self, patch: PatchSubmission) -> ClientResult: ...

    def submit_sarif_assessment(self, record: SarifRecord, verdict: Verdict) -> ClientResult: ...

    def submit_bundle(self, bundle: Bundle) -> ClientResult: ...


class _IdempotentClient:
    """Caches one answer per submission id."""

    def __init__(self):
        self._seen: dict[tuple[str, str], ClientResult] = {}
        self._lock = threading.Lock()
        self.requests: list[tuple[str, str]] = []

    def _once(self, kind: str, sub_id: str, decide: Callable[[], ClientResult]) -> ClientResult:
        with self._lock:
            if (kind, sub_id) in self._seen:
                return self._seen[(kind, sub_id)]
        result = decide()
        with self._lock:
            self.requests.append((kind, sub_id))
            return self._seen.setdefault((kind, sub_id), result)


class ScriptedCompetitionClient(_IdempotentClient):
    """Statuses come from per-kind scripts; an exhausted script answers Passed.

    Script entries are "Passed", "Failed" or "Transient" (raise once).
    """

    def __init__(self, scripts: Optional[dict[str, list[str]]] = None):
        super().__init__()
        self.scripts = {k: list(v) for k, v in (scripts or {}).items()}
        self._counter = itertools.count(1)

    def _next(self, kind: str) -> ClientResult:
        with self._lock:
            script = self.scripts.get(kind, [])
            entry = script.pop(0) if script else "Passed"
            n = next(self._counter)
        if entry == "Transient":
            raise TransientClientError(f"scripted transport failure for {kind}")
        return ClientResult(Status(entry), f"ext-{kind.lower()}-{n:04d}")

    def submit_pov(self, pov):
        return self._once("POV", pov.pov_id, lambda: self._next("POV"))

    def submit_patch(self, patch):
        return self._once("Patch", patch.patch_id, lambda: self._next("Patch"))

    def submit_sarif_assessment(self, record, verdict):
        return self._once("Sarif", record.sarif_id, lambda: self._next("Sarif"))

    def submit_bundle(self, bundle):
        key = bundle.bundle_id + "/" + "+".join(bundle.members)
        return self._once("Bundle", key, lambda: self._next("Bundle"))


class HttpCompetitionClient:
    """JSON-over-HTTP client for a competition API.

    The route layout is this project's own; adapt ``paths`` for a real API.
    """

    paths = {
        "POV": "/v1/task/{task_id}/pov/",
        "Patch": "/v1/task/{task_id}/patch/",
        "Sarif": "/v1/task/{task_id}/sarif-assessment/",
        "Bundle": "/v1/task/{task_id}/bundle/",
    }

    def __init__(self, base_url: str, auth: Optional[tuple[str, str]] = None,
                 transport: Optional[httpx.BaseTransport] = None, timeout_s: float = 30.0):
        self._client = httpx.Client(base_url=base_url, auth=auth, transport=transport, timeout=timeout_s)

    def _post(self, kind: str, task_id: str, body: dict) -> ClientResult:
        try:
            resp = self._client.post(self.paths[kind].format(task_id=task_id), json=body)
        except httpx.HTTPError as exc:
            raise TransientClientError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransientClientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            return ClientResult(Status.FAILED, "")
        doc = resp.json()
        status = Status.PASSED if str(doc.get("status", "")).lower() in ("passed", "accepted") else Status.FAILED
        return ClientResult(status, str(doc.get("id", "")))

    def submit_pov(self, pov):
        return self._post("POV", pov.task_id, serialize(pov))

    def submit_patch(self, patch):
        return self._post("Patch", patch.task_id, serialize(patch))

    def submit_sarif_assessment(self, record, verdict):
        return self._post("Sarif", record.task_id, {"sarif_id": record.sarif_id, "assessment": verdict.value})

    def submit_bundle(self, bundle):
        return self._post("Bundle", bundle.task_id, serialize(bundle))


# ---------------------------------------------------------------------------
# decisions and ledger


class Outcome(str, enum.Enum):
    ACCEPTED = "Accepted"
    DUPLICATE = "Duplicate"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    subject_id: str
    status: Status
    external_id: Optional[str] = None
    duplicate_of: Optional[str] = None
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.outcome is Outcome.ACCEPTED and self.status is Status.PASSED


class BundleEvent(str, enum.Enum):
    POV_PASSED = "PovPassed"
    PATCH_PASSED = "PatchPassed"
    SARIF_CONFIRMED = "SarifConfirmed"


@dataclass(frozen=True)
class BundleMutation:
    action: str  # "Created" or "Extended"
    bundle: Bundle


@dataclass
class LedgerEntry:
    task: ChallengeTask
    povs: dict[str, PovSubmission] = field(default_factory=dict)
    patches: dict[str, PatchSubmission] = field(default_factory=dict)
    sarifs: dict[str, SarifRecord] = field(default_factory=dict)
    # signature key -> POV forwarded to the client with that signature
    forwarded_pov: dict[str, str] = field(default_factory=dict)
    accepted_povs: dict[str, list[str]] = field(default_factory=dict)
    accepted_patches: dict[str, list[str]] = field(default_factory=dict)
    forwarded_patches: list[str] = field(default_factory=list)
    patch_count: dict[str, int] = field(default_factory=dict)
    xpatch_count: int = 0
    acc: int = 0
    inacc: int = 0
    sarif_verdicts: dict[str, Verdict] = field(default_factory=dict)
    confirmed_sarifs: list[str] = field(default_factory=list)
    pending_povs: dict[str, str] = field(default_factory=dict)  # signature key -> pov id without bundle
    bundles: dict[str, Bundle] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)


class SubmissionService:
    def __init__(
        self,
        client: CompetitionClient,
        *,
        clock=None,
        evaluators: Sequence = (),
        match_evaluator=None,
        project_root_markers: Sequence[str] = (),
        threaded: Optional[bool] = None,
    ):
        self.client = client
        self.clock = clock or SystemClock()
        self.evaluators = list(evaluators)
        self.match_evaluator = match_evaluator
        self.project_root_markers = tuple(project_root_markers)
        # simulated time runs decisions inline so that runs are reproducible
        self.threaded = (not getattr(self.clock, "simulated", False)) if threaded is None else threaded
        self._tasks: dict[str, LedgerEntry] = {}
        self._queues: dict[str, concurrent.futures.ThreadPoolExecutor] = {}
        self._inline_locks: dict[str, threading.Lock] = {}
        self._lock = threading.Lock()
        self._ids: dict[str, itertools.count] = {}
        self.pov_passed_hooks: list[Callable[[PovSubmission], list[SarifRecord]]] = []
        self.pov_listeners: list[Callable[[PovSubmission], None]] = []

    # ------------------------------------------------------------- plumbing

    def new_id(self, prefix: str) -> str:
        with self._lock:
            counter = self._ids.setdefault(prefix, itertools.count(1))
            return f"{prefix}-{next(counter):04d}"

    def register_task(self, task: ChallengeTask) -> None:
        with self._lock:
            if task.task_id not in self._tasks:
                self._tasks[task.task_id] = LedgerEntry(task)
                self._inline_locks[task.task_id] = threading.Lock()
                if self.threaded:
                    self._queues[task.task_id] = concurrent.futures.ThreadPoolExecutor(
                        max_workers=1, thread_name_prefix=f"decide-{task.task_id}"
                    )

    def _run(self, task_id: str, fn: Callable[[LedgerEntry], object]):
        with self._lock:
            entry = self._tasks.get(task_id)
        if entry is None:
            raise KeyError(f"unknown task {task_id}")
        if self.threaded:
            return self._queues[task_id].submit(fn, entry).result()
        with self._inline_locks[task_id]:
            return fn(entry)

    def close(self) -> None:
        for q in self._queues.values():
            q.shutdown(wait=True)

    def _with_retry(self, call: Callable[[], ClientResult]) -> Optional[ClientResult]:
        delay = BACKOFF_START_MS
        for attempt in range(CLIENT_RETRIES + 1):
            try:
                return call()
            except TransientClientError as exc:
                log.warning("competition client failed (attempt %d): %s", attempt + 1, exc)
                if attempt == CLIENT_RETRIES:
                    return None
                self.clock.sleep(delay)
                delay *= 2
        return None

    def _event(self, entry: LedgerEntry, kind: str, sub_id: str, status: Status, at: int) -> None:
        entry.events.append({"kind": kind, "id": sub_id, "status": status.value, "submitted_at": at})

    # ------------------------------------------------------------- POVs

    def submit_pov(self, pov: PovSubmission) -> Decision:
        if pov.status is not Status.PENDING:
            raise ValueError("only pending POVs can be submitted")
        pov = replace(pov, submitted_at=self.clock.now())
        return self._run(pov.task_id, lambda e: self._decide_pov(e, pov))

    def _decide_pov(self, entry: LedgerEntry, pov: PovSubmission) -> Decision:
        key = pov.signature.key
        entry.povs.setdefault(pov.pov_id, pov)
        if key in entry.forwarded_pov:
            return self._pov_duplicate(entry, pov, entry.forwarded_pov[key], "same signature")
        if self.evaluators:
            for other_id in (i for ids in entry.accepted_povs.values() for i in ids):
                other = entry.povs[other_id]
                if judge_pov_equivalence(other.crash_report, pov.crash_report, self.evaluators):
                    return self._pov_duplicate(entry, pov, other_id, "evaluators judged it redundant")
        result = self._with_retry(lambda: self.client.submit_pov(pov))
        if result is None:
            return Decision(Outcome.REJECTED, pov.pov_id, Status.PENDING, reason="transient")
        decided = pov.with_status(result.status)
        entry.povs[pov.pov_id] = decided
        entry.forwarded_pov[key] = pov.pov_id
        self._event(entry, "POV", pov.pov_id, result.status, pov.submitted_at)
        if result.status is Status.PASSED:
            entry.acc += 1
            entry.accepted_povs.setdefault(key, []).append(pov.pov_id)
            self._apply_bundle_rules(entry, BundleEvent.POV_PASSED, pov.pov_id)
            for hook in self.pov_passed_hooks:
                for record in hook(decided):
                    self._assess_sarif(entry, record, Verdict.TRUE_POSITIVE)
            for listener in self.pov_listeners:
                listener(decided)
        else:
            entry.inacc += 1
        return Decision(Outcome.ACCEPTED, pov.pov_id, result.status, result.external_id)

    def _pov_duplicate(self, entry, pov, of_id, reason) -> Decision:
        entry.povs[pov.pov_id] = pov.with_status(Status.DUPLICATE)
        log.info("POV %s duplicates %s (%s)", pov.pov_id, of_id, reason)
        return Decision(Outcome.DUPLICATE, pov.pov_id, Status.DUPLICATE, duplicate_of=of_id, reason=reason)

    # ------------------------------------------------------------- patches

    def submit_patch(self, patch: PatchSubmission) -> Decision:
        if patch.status is not Status.PENDING:
            raise ValueError("only pending patches can be submitted")
        patch = replace(patch, submitted_at=self.clock.now())
        return self._run(patch.task_id, lambda e: self._decide_patch(e, patch))

    def _patch_group(self, entry: LedgerEntry, patch: PatchSubmission) -> str:
        if patch.pov_signature is not None:
            return patch.pov_signature.key
        return task_signature(entry.task.task_id).key

    def _decide_patch(self, entry: LedgerEntry, patch: PatchSubmission) -> Decision:
        entry.patches.setdefault(patch.patch_id, patch)

        def dup(of, reason):
            entry.patches[patch.patch_id] = patch.with_status(Status.DUPLICATE)
            log.info("patch %s rejected as duplicate (%s)", patch.patch_id, reason)
            return Decision(Outcome.DUPLICATE, patch.patch_id, Status.DUPLICATE, duplicate_of=of, reason=reason)

        for other_id in entry.forwarded_patches:
            other = entry.patches[other_id]
            if bounded_levenshtein(other.diff_text, patch.diff_text, LEVENSHTEIN_THRESHOLD - 1) < LEVENSHTEIN_THRESHOLD:
                return dup(other_id, "edit distance below 10")
        key = patch.pov_signature.key if patch.pov_signature is not None else None
        if key is not None:
            for other_id in entry.forwarded_patches:
                other = entry.patches[other_id]
                if (other.pov_signature is not None and other.pov_signature.key == key
                        and abs(patch.submitted_at - other.submitted_at) <= SAME_SIGNATURE_WINDOW_MS):
                    return dup(other_id, "same signature within 3 seconds")
            if entry.patch_count.get(key, 0) >= PATCHES_PER_SIGNATURE:
                return dup(None, "per-signature patch cap reached")
        if patch.is_xpatch and entry.xpatch_count >= XPATCHES_PER_TASK:
            return dup(None, "XPatch cap reached")

        result = self._with_retry(lambda: self.client.submit_patch(patch))
        if result is None:
            return Decision(Outcome.REJECTED, patch.patch_id, Status.PENDING, reason="transient")
        entry.patches[patch.patch_id] = patch.with_status(result.status)
        entry.forwarded_patches.append(patch.patch_id)
        if patch.is_xpatch:
            entry.xpatch_count += 1
        else:
            entry.patch_count[key] = entry.patch_count.get(key, 0) + 1
        self._event(entry, "Patch", patch.patch_id, result.status, patch.submitted_at)
        if result.status is Status.PASSED:
            entry.acc += 1
            entry.accepted_patches.setdefault(self._patch_group(entry, patch), []).append(patch.patch_id)
            self._apply_bundle_rules(entry, BundleEvent.PATCH_PASSED, patch.patch_id)
        else:
            entry.inacc += 1
        return Decision(Outcome.ACCEPTED, patch.patch_id, result.status, result.external_id)

    # ------------------------------------------------------------- SARIF

    def register_sarif(self, record: SarifRecord) -> None:
        self._run(record.task_id, lambda e: e.sarifs.setdefault(record.sarif_id, record))

    def submit_sarif_assessment(self, record: SarifRecord, verdict: Verdict) -> Decision:
        if verdict not in (Verdict.TRUE_POSITIVE, Verdict.FALSE_POSITIVE):
            raise ValueError("only final verdicts are submitted")
        return self._run(record.task_id, lambda e: self._assess_sarif(e, record, verdict))

    def _assess_sarif(self, entry: LedgerEntry, record: SarifRecord, verdict: Verdict) -> Decision:
        entry.sarifs.setdefault(record.sarif_id, record)
        if record.sarif_id in entry.sarif_verdicts:
            return Decision(Outcome.DUPLICATE, record.sarif_id, Status.DUPLICATE, duplicate_of=record.sarif_id,
                            reason="assessment already submitted")
        now = self.clock.now()
        result = self._with_retry(lambda: self.client.submit_sarif_assessment(record, verdict))
        if result is None:
            return Decision(Outcome.REJECTED, record.sarif_id, Status.PENDING, reason="transient")
        entry.sarif_verdicts[record.sarif_id] = verdict
        entry.sarifs[record.sarif_id] = replace(entry.sarifs[record.sarif_id], verdict=verdict)
        self._event(entry, "Sarif", record.sarif_id, result.status, now)
        if result.status is Status.PASSED:
            entry.acc += 1
            if verdict is Verdict.TRUE_POSITIVE:
                entry.confirmed_sarifs.append(record.sarif_id)
                self._apply_bundle_rules(entry, BundleEvent.SARIF_CONFIRMED, record.sarif_id)
        else:
            entry.inacc += 1
        return Decision(Outcome.ACCEPTED, record.sarif_id, result.status, result.external_id)

    # ------------------------------------------------------------- bundles

    def apply_bundle_rules(self, task_id: str, event: BundleEvent, subject_id: str) -> list[BundleMutation]:
        return self._run(task_id, lambda e: self._apply_bundle_rules(e, event, subject_id))

    def _bundle_of_pov(self, entry: LedgerEntry, pov_id: str) -> Optional[Bundle]:
        for b in entry.bundles.values():
            if b.pov_id == pov_id:
                return b
        return None

    def _bundled_sarifs(self, entry: LedgerEntry) -> set[str]:
        return {b.sarif_id for b in entry.bundles.values() if b.sarif_id}

    def _passed_povs(self, entry: LedgerEntry) -> list[PovSubmission]:
        return [entry.povs[i] for ids in entry.accepted_povs.values() for i in ids]

    def _apply_bundle_rules(self, entry: LedgerEntry, event: BundleEvent, subject_id: str) -> list[BundleMutation]:
        mutations: list[BundleMutation] = []
        if event is BundleEvent.POV_PASSED:
            pov = entry.povs[subject_id]
            taken = self._bundled_sarifs(entry)
            for sid in entry.confirmed_sarifs:
                if sid in taken:
                    continue
                if match_sarif_to_pov(entry.sarifs[sid], pov, self.match_evaluator, self.project_root_markers):
                    mutations.append(self._create(entry, pov, sarif_id=sid))
                    break
            else:
                entry.pending_povs[pov.signature.key] = pov.pov_id
        elif event is BundleEvent.PATCH_PASSED:
            patch = entry.patches[subject_id]
            if patch.pov_signature is not None:
                key = patch.pov_signature.key
                pov_ids = entry.accepted_povs.get(key, [])
                if pov_ids:
                    pov = entry.povs[pov_ids[0]]
                    bundle = self._bundle_of_pov(entry, pov.pov_id)
                    if bundle is None:
                        mutations.append(self._create(entry, pov, patch_id=patch.patch_id))
                    elif bundle.patch_id is None:
                        mutations.append(self._extend(entry, bundle, patch_id=patch.patch_id))
        elif event is BundleEvent.SARIF_CONFIRMED:
            record = entry.sarifs[subject_id]
            if subject_id not in self._bundled_sarifs(entry):
                for pov in self._passed_povs(entry):
                    if not match_sarif_to_pov(record, pov, self.match_evaluator, self.project_root_markers):
                        continue
                    bundle = self._bundle_of_pov(entry, pov.pov_id)
                    if bundle is None:
                        mutations.append(self._create(entry, pov, sarif_id=subject_id))
                        break
                    if bundle.sarif_id is None:
                        mutations.append(self._extend(entry, bundle, sarif_id=subject_id))
                        break
        for m in mutations:
            self._submit_bundle(entry, m.bundle)
        return mutations

    def _create(self, entry: LedgerEntry, pov: PovSubmission, **members) -> BundleMutation:
        bundle = Bundle(self.new_id("bundle"), entry.task.task_id, pov.signature, pov_id=pov.pov_id, **members)
        entry.bundles[bundle.bundle_id] = bundle
        entry.pending_povs.pop(pov.signature.key, None)
        log.info("bundle %s created with %s", bundle.bundle_id, bundle.members)
        return BundleMutation("Created", bundle)

    def _extend(self, entry: LedgerEntry, bundle: Bundle, **members) -> BundleMutation:
        grown = replace(bundle, **members)
        entry.bundles[bundle.bundle_id] = grown
        log.info("bundle %s extended to %s", grown.bundle_id, grown.members)
        return BundleMutation("Extended", grown)

    def _submit_bundle(self, entry: LedgerEntry, bundle: Bundle) -> None:
        now = self.clock.now()
        result = self._with_retry(lambda: self.client.submit_bundle(bundle))
        if result is None:
            log.warning("bundle %s could not be submitted", bundle.bundle_id)
            return
        self._event(entry, "Bundle", bundle.bundle_id, result.status, now)

    # ------------------------------------------------------------- reads

    def bundles(self, task_id: str) -> list[Bundle]:
        return self._run(task_id, lambda e: list(e.bundles.values()))

    def entry_snapshot(self, task_id: str, fn: Callable[[LedgerEntry], object]):
        """Run a read-only function against the ledger between decisions."""
        return self._run(task_id, fn)

    def has_passed_pov(self, task_id: str) -> bool:
        return self._run(task_id, lambda e: bool(e.accepted_povs))

    def passed_povs(self, task_id: str) -> list[PovSubmission]:
        return self._run(task_id, self._passed_povs)

    def ledger_document(self, task_id: str) -> dict:
        return self._run(task_id, self._ledger_document)

    def _group_of(self, entry: LedgerEntry, kind: str, sub_id: str) -> str:
        for b in entry.bundles.values():
            if sub_id in b.members or (kind == "Bundle" and b.bundle_id == sub_id):
                return b.canonical_signature.key
        if kind == "POV":
            return entry.povs[sub_id].signature.key
        if kind == "Patch":
            return self._patch_group(entry, entry.patches[sub_id])
        return f"sarif:{sub_id}"

    def _ledger_document(self, entry: LedgerEntry) -> dict:
        events = [dict(ev, group=self._group_of(entry, ev["kind"], ev["id"])) for ev in entry.events]
        return {
            "task_id": entry.task.task_id,
            "time_window": entry.task.time_window,
            "received_at": entry.task.received_at,
            "acc": entry.acc,
            "inacc": entry.inacc,
            "accepted_povs": {k: list(v) for k, v in sorted(entry.accepted_povs.items())},
            "accepted_patches": {k: list(v) for k, v in sorted(entry.accepted_patches.items())},
            "patch_count": dict(sorted(entry.patch_count.items())),
            "xpatch_count": entry.xpatch_count,
            "events": events,
        }
