"""Competition client that judges submissions against a lab target's ground truth."""

from __future__ import annotations

import itertools
import logging
import tempfile
import threading
from typing import Optional

from ..diffs import DiffParseError, PatchApplyError, apply_diff
from ..domain import Bundle, PatchSubmission, PovSubmission, SarifRecord, Status, Verdict
from ..harness import Crash
from ..submission import ClientResult, _IdempotentClient
from .runner import build_handle, run_functionality_tests, run_harness
from .target import LabTarget

log = logging.getLogger(__name__)


class LabCompetitionClient(_IdempotentClient):
    """Answers the way a competition API would if it knew the planted bugs.

    * a POV passes when it crashes the unpatched target;
    * a patch passes when it applies, builds, keeps every functionality check
      green and stops every passed POV of its vulnerability (an XPatch must
      instead remove at least one planted bug);
    * a SARIF assessment passes when it agrees with ``sarif_truth``
      (records without a truth label pass);
    * a bundle passes when all of its members passed.

    ``overrides`` forces statuses per kind, in order, before any judging.
    """

    def __init__(self, target: LabTarget, sarif_truth: Optional[dict[str, Verdict]] = None,
                 overrides: Optional[dict[str, list[str]]] = None):
        super().__init__()
        self.lab = target
        self.sarif_truth = dict(sarif_truth or {})
        self.overrides = {k: list(v) for k, v in (overrides or {}).items()}
        self._ids = itertools.count(1)
        self._status: dict[str, Status] = {}
        self._passed_povs: dict[str, list[PovSubmission]] = {}
        self._judge_lock = threading.Lock()

    def _result(self, kind: str, subject: str, status: Status) -> ClientResult:
        with self._judge_lock:
            forced = self.overrides.get(kind)
            if forced:
                status = Status(forced.pop(0))
            self._status[subject] = status
            return ClientResult(status, f"lab-{kind.lower()}-{next(self._ids):04d}")

    # ------------------------------------------------------------------ POV

    def submit_pov(self, pov: PovSubmission) -> ClientResult:
        def decide():
            out = run_harness(self.lab, pov.target.harness_name, pov.target.sanitizer, pov.input_blob)
            res = self._result("POV", pov.pov_id, Status.PASSED if isinstance(out, Crash) else Status.FAILED)
            if res.status is Status.PASSED:
                with self._judge_lock:
                    self._passed_povs.setdefault(pov.signature.key, []).append(pov)
            return res

        return self._once("POV", pov.pov_id, decide)

    # ---------------------------------------------------------------- patch

    def _patch_ok(self, patch: PatchSubmission) -> bool:
        with tempfile.TemporaryDirectory(prefix="lab-judge-") as tmp:
            ws = self.lab.materialize(tmp)
            try:
                apply_diff(patch.diff_text, ws)
            except (DiffParseError, PatchApplyError) as exc:
                log.info("judge: %s does not apply: %s", patch.patch_id, exc)
                return False
            if not build_handle(self.lab, ws).ok:
                return False
            if not all(r.passed for r in run_functionality_tests(self.lab, ws)):
                return False
            sources = self.lab.sources_in(ws)
            if patch.is_xpatch:
                return any(b.crash_line_in(sources) is None for b in self.lab.bugs)
            with self._judge_lock:
                povs = list(self._passed_povs.get(patch.pov_signature.key, []))
            return all(
                not isinstance(run_harness(self.lab, p.target.harness_name, p.target.sanitizer, p.input_blob, ws),
                               Crash)
                for p in povs
            )

    def submit_patch(self, patch: PatchSubmission) -> ClientResult:
        return self._once("Patch", patch.patch_id,
                          lambda: self._result("Patch", patch.patch_id,
                                               Status.PASSED if self._patch_ok(patch) else Status.FAILED))

    # ---------------------------------------------------------------- SARIF

    def submit_sarif_assessment(self, record: SarifRecord, verdict: Verdict) -> ClientResult:
        truth = self.sarif_truth.get(record.sarif_id)
        ok = truth is None or truth is verdict
        return self._once("Sarif", record.sarif_id,
                          lambda: self._result("Sarif", record.sarif_id, Status.PASSED if ok else Status.FAILED))

    # --------------------------------------------------------------- bundle

    def submit_bundle(self, bundle: Bundle) -> ClientResult:
        key = bundle.bundle_id + "/" + "+".join(bundle.members)

        def decide():
            with self._judge_lock:
                ok = all(self._status.get(m) is Status.PASSED for m in bundle.members)
            return self._result("Bundle", key, Status.PASSED if ok else Status.FAILED)

        return self._once("Bundle", key, decide)
