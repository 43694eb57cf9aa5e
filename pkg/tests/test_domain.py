import pytest
from hypothesis import given
from hypothesis import strategies as st

from crsim.domain import (Bundle, CallGraph, CallPath, ChallengeTask, Check, CrashSignature, FunctionRecord,
                          InvariantError, Language, Mode, PatchSubmission, PovSubmission, Sanitizer, SarifRecord,
                          ScoreComponents, ScoreInputs, SignatureKind, SourceLocation, Status, ValidationRecord,
                          check_target_for_task, check_unique_targets, context_window, deserialize, serialize)

from conftest import SIMPLE_DIFF, loc_sig, make_task, target


def roundtrip(value):
    return deserialize(type(value), serialize(value))


def test_location_signature_roundtrip():
    sig = CrashSignature(SignatureKind.LOCATION, Sanitizer.ADDRESS, file="src/a.c", line=42)
    assert roundtrip(sig) == sig
    assert serialize(sig)["file"] == "src/a.c"


def test_score_inputs_roundtrip():
    inputs = ScoreInputs(acc=0, inacc=0, time_rem=10, time_window=10)
    assert roundtrip(inputs) == inputs


def test_bundle_with_only_pov_is_rejected():
    with pytest.raises(InvariantError):
        Bundle("b1", "t1", loc_sig(), pov_id="pov-1")


def test_delta_task_requires_diff():
    with pytest.raises(InvariantError):
        make_task(diff=None)


def test_scored_task_requires_harness():
    with pytest.raises(InvariantError):
        make_task(harnesses=())
    # SARIF assessment tasks may come without harnesses
    make_task(mode=Mode.SARIF_ASSESSMENT, harnesses=())


def test_time_window_positive():
    with pytest.raises(InvariantError):
        make_task(window=0)


def test_jazzer_iff_java():
    java = make_task(language=Language.JAVA)
    check_target_for_task(target(sanitizer=Sanitizer.JAZZER), java)
    with pytest.raises(InvariantError):
        check_target_for_task(target(sanitizer=Sanitizer.ADDRESS), java)
    with pytest.raises(InvariantError):
        check_target_for_task(target(sanitizer=Sanitizer.JAZZER), make_task())


def test_targets_unique():
    with pytest.raises(InvariantError):
        check_unique_targets([target(), target()])
    check_unique_targets([target(), target(sanitizer=Sanitizer.MEMORY)])


def test_signature_invariants():
    with pytest.raises(InvariantError):
        CrashSignature(SignatureKind.LOCATION, Sanitizer.ADDRESS, file="a.c")
    with pytest.raises(InvariantError):
        CrashSignature(SignatureKind.HEURISTIC, Sanitizer.ADDRESS)


def test_location_equality_ignores_digest():
    a = CrashSignature(SignatureKind.LOCATION, Sanitizer.ADDRESS, "a.c", 3, fallback_digest="aa")
    b = CrashSignature(SignatureKind.LOCATION, Sanitizer.ADDRESS, "a.c", 3, fallback_digest="bb")
    assert a == b and hash(a) == hash(b)
    assert a != CrashSignature(SignatureKind.LOCATION, Sanitizer.MEMORY, "a.c", 3)


def test_pov_status_transitions():
    pov = PovSubmission("p1", "t1", target(), b"x", "report", loc_sig())
    passed = pov.with_status(Status.PASSED)
    assert passed.status is Status.PASSED
    with pytest.raises(InvariantError):
        passed.with_status(Status.FAILED)


def test_pov_blob_non_empty():
    with pytest.raises(InvariantError):
        PovSubmission("p1", "t1", target(), b"", "report", loc_sig())


def test_patch_needs_unified_diff():
    with pytest.raises(InvariantError):
        PatchSubmission("x1", "t1", "not a diff")
    with pytest.raises(InvariantError):
        PatchSubmission("x1", "t1", SIMPLE_DIFF, pov_signature=loc_sig(), is_xpatch=True)


def test_validation_record_valid_only_when_all_pass():
    assert ValidationRecord(Check.PASS, Check.PASS, Check.PASS, Check.PASS).valid
    assert not ValidationRecord(Check.PASS, Check.PASS, Check.UNKNOWN, Check.PASS).valid


def test_sarif_record_needs_location_or_function():
    with pytest.raises(InvariantError):
        SarifRecord("s1", "t1")


def test_score_components_bands():
    ScoreComponents(vds=2, prs=6, sas=1, bdl=1, am=1, total=10)
    with pytest.raises(InvariantError):
        ScoreComponents(vds=0.5, total=0.5)
    with pytest.raises(InvariantError):
        ScoreComponents(vds=2, am=1, total=3)


def test_graph_and_path_invariants():
    fns = tuple(FunctionRecord(n, "a.c", i + 1, i + 1) for i, n in enumerate("abc"))
    with pytest.raises(InvariantError):
        CallGraph(fns, frozenset({(0, 99)}), {})
    with pytest.raises(InvariantError):
        CallGraph(fns + (fns[0],), frozenset(), {})
    with pytest.raises(InvariantError):
        CallPath((fns[0], fns[0], fns[1]))
    g = CallGraph(fns, frozenset({(0, 1), (1, 2)}), {"h": 0})
    CallPath(fns).check_against(g)
    with pytest.raises(InvariantError):
        CallPath((fns[0], fns[2])).check_against(g)


def test_context_window_clips():
    lines = ["l1", "l2", "l3", "l4"]
    assert [n for n, _ in context_window(lines, 2)] == [1, 2, 3, 4]
    assert [n for n, _ in context_window(list(map(str, range(20))), 10)] == list(range(7, 14))


# ----------------------------------------------------------- properties

names = st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=8)
sanitizers = st.sampled_from(list(Sanitizer))

signatures = st.one_of(
    st.builds(lambda f, l, s: CrashSignature(SignatureKind.LOCATION, s, file=f, line=l),
              names, st.integers(1, 10_000), sanitizers),
    st.builds(lambda d, s: CrashSignature(SignatureKind.HEURISTIC, s, fallback_digest=d),
              st.text("0123456789abcdef", min_size=16, max_size=16), sanitizers),
)


@st.composite
def tasks(draw):
    mode = draw(st.sampled_from(list(Mode)))
    return ChallengeTask(
        task_id=draw(names), mode=mode, project_name=draw(names), repo_root="lab://x",
        language=draw(st.sampled_from(list(Language))), time_window=draw(st.integers(1, 10**9)),
        received_at=draw(st.integers(0, 10**12)), harness_names=tuple(draw(st.lists(names, min_size=1, max_size=3))),
        commit_diff=SIMPLE_DIFF if mode is Mode.DELTA_SCAN else None,
    )


@st.composite
def povs(draw):
    sig = draw(signatures)
    return PovSubmission(draw(names), "t1", target(sanitizer=sig.sanitizer), draw(st.binary(min_size=1, max_size=64)),
                         draw(st.text(max_size=40)), sig, draw(st.sampled_from(list(Status))),
                         draw(st.integers(0, 10**12)), draw(names))


@st.composite
def sarif_records(draw):
    locs = draw(st.lists(st.builds(lambda f, a, n: SourceLocation(f, a, a + n), names, st.integers(1, 500),
                                   st.integers(0, 20)), min_size=1, max_size=3))
    return SarifRecord(draw(names), "t1", locations=tuple(locs), cwe_ids=tuple(draw(st.lists(names, max_size=2))),
                       description=draw(st.text(max_size=30)))


@st.composite
def bundles(draw):
    ids = draw(st.lists(st.one_of(st.none(), names), min_size=3, max_size=3).filter(
        lambda xs: sum(x is not None for x in xs) >= 2))
    return Bundle(draw(names), "t1", draw(signatures), *ids)


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 6))
    fns = tuple(FunctionRecord(f"f{i}", "a.c", i + 1, i + 2) for i in range(n))
    edges = draw(st.frozensets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=10))
    return CallGraph(fns, edges, {"h": draw(st.integers(0, n - 1)), "u": None})


@given(st.one_of(signatures, tasks(), povs(), sarif_records(), bundles(), graphs(),
                 st.builds(ScoreInputs, st.integers(0, 50), st.integers(0, 50), st.just(5), st.just(10))))
def test_serialize_roundtrip_property(value):
    back = roundtrip(value)
    assert back == value
    assert serialize(back) == serialize(value)


@given(st.integers(-5, 5), st.integers(-5, 5), st.integers(-20, 20), st.integers(-5, 20))
def test_score_inputs_rejects_invalid(acc, inacc, rem, window):
    ok = acc >= 0 and inacc >= 0 and window > 0 and 0 <= rem <= window
    if ok:
        ScoreInputs(acc, inacc, rem, window)
    else:
        with pytest.raises(InvariantError):
            ScoreInputs(acc, inacc, rem, window)


@given(st.integers(-3, 3), st.integers(-3, 3))
def test_function_record_lines(start, end):
    if 1 <= start <= end:
        FunctionRecord("f", "a.c", start, end)
    else:
        with pytest.raises(InvariantError):
            FunctionRecord("f", "a.c", start, end)
