import hashlib
import random
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crsim.clock import SECOND, SimulatedClock
from crsim.domain import Bundle, FunctionRef, PatchSubmission, PovSubmission, SarifRecord, SourceLocation, Status, Verdict
from crsim.router import ErrorKind, ScriptedProvider
from crsim.submission import (BundleEvent, Outcome, ScriptedCompetitionClient, SubmissionService,
                              bounded_levenshtein, judge_pov_equivalence, levenshtein, match_sarif_to_pov)

from conftest import loc_sig, make_task, target
from oracles import levenshtein_oracle

REPORT = "    #0 0x1 in f /src/proj/{file}:{line}:3\n"


def pov(pid, file="src/a.c", line=10, task_id="t1"):
    return PovSubmission(pid, task_id, target(task_id), b"crash", REPORT.format(file=file, line=line),
                         loc_sig(file, line))


def patch_diff(i):
    token = hashlib.sha256(str(i).encode()).hexdigest()
    return f"--- a/src/a.c\n+++ b/src/a.c\n@@ -1 +1 @@\n-old\n+{token}\n"


def patch(pid, i, sig=None, xpatch=False, task_id="t1"):
    return PatchSubmission(pid, task_id, patch_diff(i), pov_signature=None if xpatch else (sig or loc_sig()),
                           is_xpatch=xpatch)


def service(evaluators=(), client=None, clock=None, threaded=False, **kw):
    svc = SubmissionService(client or ScriptedCompetitionClient(), clock=clock or SimulatedClock(),
                            evaluators=evaluators, threaded=threaded, **kw)
    svc.register_task(make_task())
    return svc


def evaluators(*answers):
    return [ScriptedProvider(f"e{i}", [a] if isinstance(a, (str, ErrorKind)) else a) for i, a in enumerate(answers)]


# ----------------------------------------------------------------- POVs

def test_first_pov_accepted():
    svc = service()
    d = svc.submit_pov(pov("p1"))
    assert d.outcome is Outcome.ACCEPTED and d.passed
    assert svc.ledger_document("t1")["accepted_povs"] == {"src/a.c:10:Address": ["p1"]}


def test_signature_dedup():
    svc = service()
    svc.submit_pov(pov("p1"))
    d = svc.submit_pov(pov("p2"))
    assert d.outcome is Outcome.DUPLICATE and d.duplicate_of == "p1"
    assert svc.submit_pov(pov("p3", line=11)).outcome is Outcome.ACCEPTED


def test_two_of_three_evaluator_dedup():
    svc = service(evaluators(["REDUNDANT"], ["DISTINCT"], ["REDUNDANT"]))
    svc.submit_pov(pov("p1"))
    d = svc.submit_pov(pov("p2", line=99))
    assert d.outcome is Outcome.DUPLICATE and d.reason.startswith("evaluators")


def test_one_of_three_evaluator_keeps_pov():
    svc = service(evaluators(["REDUNDANT"], ["DISTINCT"], [ErrorKind.TIMEOUT]))
    svc.submit_pov(pov("p1"))
    assert svc.submit_pov(pov("p2", line=99)).outcome is Outcome.ACCEPTED


def test_judge_votes():
    assert judge_pov_equivalence("a", "b", evaluators("yes", "yes", "no"))
    assert not judge_pov_equivalence("a", "b", evaluators("yes", "no", ErrorKind.OVERLOADED))
    assert not judge_pov_equivalence("a", "b", evaluators("no", "no", "no"))


def test_failed_pov_counts_inaccurate():
    svc = service(client=ScriptedCompetitionClient({"POV": ["Failed"]}))
    d = svc.submit_pov(pov("p1"))
    assert d.status is Status.FAILED
    doc = svc.ledger_document("t1")
    assert (doc["acc"], doc["inacc"]) == (0, 1)


def test_transient_failures_retry_with_backoff():
    clock = SimulatedClock()
    svc = service(client=ScriptedCompetitionClient({"POV": ["Transient", "Transient", "Passed"]}), clock=clock)
    assert svc.submit_pov(pov("p1")).passed
    assert clock.now() == 3 * SECOND  # waited 1 s then 2 s


def test_transport_exhaustion_rejects_and_leaves_pending():
    clock = SimulatedClock()
    svc = service(client=ScriptedCompetitionClient({"POV": ["Transient"] * 4}), clock=clock)
    d = svc.submit_pov(pov("p1"))
    assert d.outcome is Outcome.REJECTED and d.status is Status.PENDING
    assert clock.now() == 7 * SECOND


def test_unknown_task():
    svc = service()
    with pytest.raises(KeyError):
        svc.submit_pov(pov("p1", task_id="other"))


# -------------------------------------------------------------- patches

def test_identical_patch_is_duplicate():
    svc = service()
    svc.submit_pov(pov("p1"))
    svc.submit_patch(patch("x1", 1))
    svc.clock.advance(10 * SECOND)
    d = svc.submit_patch(patch("x2", 1))
    assert d.outcome is Outcome.DUPLICATE and "edit distance" in d.reason


def test_levenshtein_rule_is_strictly_below_ten():
    base = "--- a/src/a.c\n+++ b/src/a.c\n@@ -1 +1 @@\n-old\n+" + "a" * 40 + "\n"
    nine = base.replace("a" * 9, "b" * 9, 1)
    ten = base.replace("a" * 10, "b" * 10, 1)
    assert levenshtein(base, nine) == 9 and levenshtein(base, ten) == 10
    svc = service()
    svc.submit_patch(PatchSubmission("x1", "t1", base, pov_signature=loc_sig(line=1)))
    svc.clock.advance(10 * SECOND)
    assert svc.submit_patch(PatchSubmission("x2", "t1", nine, pov_signature=loc_sig(line=2))).outcome is Outcome.DUPLICATE
    svc.clock.advance(10 * SECOND)
    assert svc.submit_patch(PatchSubmission("x3", "t1", ten, pov_signature=loc_sig(line=3))).outcome is Outcome.ACCEPTED


def test_three_second_window():
    svc = service()
    svc.submit_patch(patch("x1", 1))
    svc.clock.advance(2 * SECOND)
    d = svc.submit_patch(patch("x2", 2))
    assert d.outcome is Outcome.DUPLICATE and "3 seconds" in d.reason
    svc.clock.advance(1 * SECOND)  # exactly 3 s after x1 still counts as the window
    assert svc.submit_patch(patch("x3", 3)).outcome is Outcome.DUPLICATE
    svc.clock.advance(1)
    assert svc.submit_patch(patch("x4", 4)).outcome is Outcome.ACCEPTED


def test_five_patch_cap():
    svc = service()
    outcomes = []
    for i in range(7):
        outcomes.append(svc.submit_patch(patch(f"x{i}", i)).outcome)
        svc.clock.advance(5 * SECOND)
    assert outcomes == [Outcome.ACCEPTED] * 5 + [Outcome.DUPLICATE] * 2
    assert svc.ledger_document("t1")["patch_count"] == {"src/a.c:10:Address": 5}


def test_three_xpatch_cap():
    svc = service()
    outcomes = []
    for i in range(5):
        outcomes.append(svc.submit_patch(patch(f"x{i}", i, xpatch=True)).outcome)
        svc.clock.advance(5 * SECOND)
    assert outcomes == [Outcome.ACCEPTED] * 3 + [Outcome.DUPLICATE] * 2


class TickClock(SimulatedClock):
    """Every reading moves time forward 4 s, so no two submissions share the 3 s window."""

    def now(self):
        with self._lock:
            self._now += 4 * SECOND
            return self._now


def concurrent_caps(submitters=100):
    """Hammer one task from many threads and return the final ledger."""
    svc = SubmissionService(ScriptedCompetitionClient(), clock=TickClock(), threaded=True)
    svc.register_task(make_task())
    barrier = threading.Barrier(submitters)
    errors = []

    def work(n):
        try:
            barrier.wait()
            if n % 2:
                svc.submit_patch(patch(f"x{n}", n, xpatch=True))
            else:
                svc.submit_patch(patch(f"x{n}", n, sig=loc_sig(line=1 + (n // 2) % 4)))
        except Exception as exc:  # pragma: no cover - surfaced by the assert below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(n,)) for n in range(submitters)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    doc = svc.ledger_document("t1")
    svc.close()
    return doc, errors


def test_caps_hold_under_concurrency():
    doc, errors = concurrent_caps(100)
    assert not errors
    assert doc["xpatch_count"] == 3
    assert sorted(doc["patch_count"].values()) == [5, 5, 5, 5]


# ---------------------------------------------------------------- SARIF

def sarif(sid="s1", file="src/a.c", start=8, end=12, desc="overflow"):
    return SarifRecord(sid, "t1", (FunctionRef("f", file),), ("CWE-121",), (SourceLocation(file, start, end),),
                       description=desc)


def test_match_stage_one_location():
    assert match_sarif_to_pov(sarif(), pov("p1"), None, ["/src/proj/"])


def test_match_stage_two_evaluator():
    other = sarif(file="src/zzz.c")
    assert match_sarif_to_pov(other, pov("p1"), ScriptedProvider("m", ["YES, same bug"]))
    assert not match_sarif_to_pov(other, pov("p1"), ScriptedProvider("m", ["NO"]))
    assert not match_sarif_to_pov(other, pov("p1"), ScriptedProvider("m", [ErrorKind.TIMEOUT]))


def test_bundle_pov_then_sarif_then_patch():
    svc = service(project_root_markers=["/src/proj/"])
    svc.submit_pov(pov("p1"))
    assert svc.bundles("t1") == []  # a lone POV waits for company
    svc.submit_sarif_assessment(sarif(), Verdict.TRUE_POSITIVE)
    [b] = svc.bundles("t1")
    assert (b.pov_id, b.sarif_id, b.patch_id) == ("p1", "s1", None)
    svc.submit_patch(patch("x1", 1))
    [b] = svc.bundles("t1")
    assert b.members == ["p1", "x1", "s1"]
    assert b.canonical_signature == loc_sig()


def test_bundle_sarif_first_then_pov():
    svc = service(project_root_markers=["/src/proj/"])
    svc.submit_sarif_assessment(sarif(), Verdict.TRUE_POSITIVE)
    svc.submit_pov(pov("p1"))
    [b] = svc.bundles("t1")
    assert set(b.members) == {"p1", "s1"}


def test_sarif_without_matching_pov_makes_no_bundle():
    svc = service()
    svc.submit_sarif_assessment(sarif(file="src/elsewhere.c"), Verdict.TRUE_POSITIVE)
    assert svc.apply_bundle_rules("t1", BundleEvent.SARIF_CONFIRMED, "s1") == []
    assert svc.bundles("t1") == []


def test_sarif_assessed_once():
    svc = service()
    svc.submit_sarif_assessment(sarif(), Verdict.FALSE_POSITIVE)
    assert svc.submit_sarif_assessment(sarif(), Verdict.TRUE_POSITIVE).outcome is Outcome.DUPLICATE


def test_bundles_never_merge_signatures():
    svc = service(project_root_markers=["/src/proj/"])
    svc.submit_pov(pov("p1", line=10))
    svc.submit_pov(pov("p2", line=50))
    svc.submit_sarif_assessment(sarif("s1", start=9, end=11), Verdict.TRUE_POSITIVE)
    svc.submit_sarif_assessment(sarif("s2", start=49, end=51), Verdict.TRUE_POSITIVE)
    svc.clock.advance(5 * SECOND)
    svc.submit_patch(patch("x1", 1, sig=loc_sig(line=50)))
    by_pov = {b.pov_id: b for b in svc.bundles("t1")}
    assert by_pov["p1"].canonical_signature.line == 10 and by_pov["p1"].sarif_id == "s1"
    assert by_pov["p2"].canonical_signature.line == 50 and by_pov["p2"].members == ["p2", "x1", "s2"]


# ----------------------------------------------------------- properties

def test_levenshtein_examples():
    assert levenshtein("", "abc") == 3
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("same", "same") == 0


def levenshtein_agreement(pairs=1000, seed=1234):
    rng = random.Random(seed)
    bad = []
    for _ in range(pairs):
        a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 12)))
        b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 12)))
        if levenshtein(a, b) != levenshtein_oracle(a, b):
            bad.append((a, b))
    return bad


def test_levenshtein_matches_oracle_on_random_pairs():
    assert levenshtein_agreement() == []


@given(st.text("ab", max_size=12), st.text("ab", max_size=12), st.integers(0, 12))
def test_bounded_levenshtein(a, b, bound):
    d = levenshtein_oracle(a, b)
    assert bounded_levenshtein(a, b, bound) == (d if d <= bound else bound + 1)


@given(st.lists(st.tuples(st.sampled_from(["pov", "patch", "xpatch"]), st.integers(0, 3), st.integers(0, 6)),
                max_size=30))
def test_invariants_under_random_submission_orders(ops):
    svc = service()
    for n, (kind, line, gap) in enumerate(ops):
        svc.clock.advance(gap * SECOND)
        if kind == "pov":
            svc.submit_pov(pov(f"p{n}", line=line + 1))
        else:
            svc.submit_patch(patch(f"x{n}", n, sig=loc_sig(line=line + 1), xpatch=kind == "xpatch"))
    doc = svc.ledger_document("t1")
    assert all(len(ids) == 1 for ids in doc["accepted_povs"].values())
    assert all(c <= 5 for c in doc["patch_count"].values())
    assert doc["xpatch_count"] <= 3
    for b in svc.bundles("t1"):
        assert isinstance(b, Bundle) and len(b.members) >= 2


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 2)), max_size=12))
def test_decisions_deterministic(ops):
    def run():
        svc = service(evaluators(*[["REDUNDANT", "DISTINCT"] * 6] * 3))
        out = []
        for n, (is_pov, line) in enumerate(ops):
            svc.clock.advance(4 * SECOND)
            d = svc.submit_pov(pov(f"p{n}", line=line + 1)) if is_pov else svc.submit_patch(patch(f"x{n}", n % 3))
            out.append((d.outcome, d.status, d.duplicate_of))
        return out, svc.ledger_document("t1")

    assert run() == run()
