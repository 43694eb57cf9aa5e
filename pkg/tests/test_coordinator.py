import itertools
import os
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crsim.clock import MINUTE, SimulatedClock
from crsim.coordinator import (BudgetPolicy, ConfigurationError, CorpusManager, FuzzerDecision, FuzzerState,
                               TaskState, corpus_sweep, decompose, dispatch, fuzzer_stop_decision, llm_budget,
                               patch_roster, pov_roster, xpatch_roster)
from crsim.domain import FuzzerTarget, Language, Mode, Sanitizer

from conftest import make_task
from oracles import stop_oracle


# ---------------------------------------------------------- decomposition

def test_c_task_gets_address_and_memory():
    targets = decompose(make_task(harnesses=("a", "b")))
    assert [(t.harness_name, t.sanitizer) for t in targets] == [
        ("a", Sanitizer.ADDRESS), ("a", Sanitizer.MEMORY), ("b", Sanitizer.ADDRESS), ("b", Sanitizer.MEMORY)]


def test_memory_sanitizer_pruned_above_ten_harnesses():
    ten = decompose(make_task(harnesses=tuple(f"h{i}" for i in range(10))))
    eleven = decompose(make_task(harnesses=tuple(f"h{i}" for i in range(11))))
    assert len(ten) == 20
    assert len(eleven) == 11 and {t.sanitizer for t in eleven} == {Sanitizer.ADDRESS}


def test_java_uses_jazzer_only():
    targets = decompose(make_task(language=Language.JAVA, harnesses=("J",)))
    assert [t.sanitizer for t in targets] == [Sanitizer.JAZZER]


def test_undefined_behavior_sanitizer_never_scheduled():
    assert all(t.sanitizer is not Sanitizer.UNDEFINED for t in decompose(make_task(harnesses=("a",))))


def test_policy_can_disable_everything():
    with pytest.raises(ConfigurationError):
        decompose(make_task(), BudgetPolicy(enabled_sanitizers=(Sanitizer.JAZZER,)))


@given(st.integers(1, 30))
def test_decompose_targets_unique(n):
    targets = decompose(make_task(harnesses=tuple(f"h{i}" for i in range(n))))
    assert len({t.key for t in targets}) == len(targets)
    assert len(targets) == (2 * n if n <= 10 else n)


def test_rosters():
    delta, full = make_task(mode=Mode.DELTA_SCAN), make_task(mode=Mode.FULL_SCAN, diff=None)
    assert pov_roster(delta) == ["xs0_delta", "as0_delta"]
    assert pov_roster(full) == ["xs0_c_full", "xs1_c_full", "as0_full"]
    assert pov_roster(make_task(mode=Mode.FULL_SCAN, diff=None, language=Language.JAVA)) == [
        "xs0_java_full", "xs1_java_full", "xs2_java_full", "as0_full"]
    assert patch_roster(delta)[0] == "patch_delta" and len(patch_roster(full)) == 5
    assert xpatch_roster(full) == ["xpatch_full"]


def test_dispatch_round_robin_without_binaries():
    targets = [FuzzerTarget(f"h{i}", Sanitizer.ADDRESS, "t1") for i in range(5)]
    plan = dispatch(targets, ["w1", "w2"], make_task())
    assert [a.harness_name for a in plan["w1"]] == ["h0", "h2", "h4"]
    assert [a.harness_name for a in plan["w2"]] == ["h1", "h3"]
    assert plan["w1"][0].strategies == ("xs0_delta", "as0_delta")
    assert set(vars(plan["w1"][0])) == {"task_id", "harness_name", "sanitizer", "strategies"}
    with pytest.raises(ConfigurationError):
        dispatch(targets, [])


# ---------------------------------------------------------------- budgets

def test_llm_budget_reduced_after_sibling_pov():
    a, b = FuzzerTarget("a", Sanitizer.ADDRESS, "t1"), FuzzerTarget("b", Sanitizer.ADDRESS, "t1")
    state = TaskState()
    assert llm_budget(a, state) == 60 * MINUTE
    state.record_pov(a)
    assert llm_budget(a, state) == 60 * MINUTE  # its own POV does not shrink it
    assert llm_budget(b, state) == 45 * MINUTE


def test_policy_validation_and_override_file(tmp_path):
    with pytest.raises(ConfigurationError):
        BudgetPolicy(llm_fuzz_cap=10, llm_fuzz_cap_after_pov_elsewhere=20)
    p = tmp_path / "policy.json"
    p.write_text('{"llm_fuzz_cap": 1200000, "llm_fuzz_cap_after_pov_elsewhere": 600000,'
                 ' "enabled_sanitizers": ["Address"]}')
    pol = BudgetPolicy.from_file(p)
    assert pol.llm_fuzz_cap == 20 * MINUTE and pol.enabled_sanitizers == (Sanitizer.ADDRESS,)
    assert {t.sanitizer for t in decompose(make_task(), pol)} == {Sanitizer.ADDRESS}
    with pytest.raises(ConfigurationError):
        BudgetPolicy.from_doc({"bogus": 1})


def stop_table_mismatches(half=120 * MINUTE):
    """The fuzzer stop rule on a grid around every boundary, compared with the oracle."""
    points = sorted({0, 1, half // 2 - 1, half // 2, half // 2 + 1, half - 1, half, half + 1, 2 * half})
    bad = []
    for povs, multi, elapsed in itertools.product((False, True), (False, True), points):
        got = fuzzer_stop_decision(FuzzerState(povs, elapsed, multi), half) is FuzzerDecision.STOP
        if got != stop_oracle(povs, elapsed, multi, half):
            bad.append((povs, multi, elapsed))
    return bad


def test_fuzzer_stop_truth_table():
    assert stop_table_mismatches() == []


@given(st.booleans(), st.booleans(), st.integers(0, 10 ** 8), st.integers(1, 10 ** 8))
def test_fuzzer_stop_matches_oracle(povs, multi, elapsed, half):
    got = fuzzer_stop_decision(FuzzerState(povs, elapsed, multi), half) is FuzzerDecision.STOP
    assert got == stop_oracle(povs, elapsed, multi, half)


def test_half_time():
    assert BudgetPolicy.fuzzer_half_time(make_task(window=240 * MINUTE)) == 120 * MINUTE


# ----------------------------------------------------------------- corpus

def test_corpus_ttl_with_injected_clock(tmp_path):
    clock = SimulatedClock()
    corpus = CorpusManager(tmp_path / "c", clock)
    old = corpus.deposit(b"old")
    clock.advance(5 * MINUTE)
    young = corpus.deposit(b"young")
    clock.advance(5 * MINUTE)
    assert corpus.sweep() == []  # exactly ten minutes is kept
    clock.advance(1)
    assert corpus.sweep() == [old]
    assert corpus.blobs() == [b"young"] and young.exists()


def test_corpus_sweep_ignores_temp_files(tmp_path):
    (tmp_path / ".tmp-partial").write_bytes(b"x")
    os.utime(tmp_path / ".tmp-partial", ns=(0, 0))
    assert corpus_sweep(tmp_path, now=10 ** 9) == []


def test_corpus_concurrent_deposits_and_sweeps(tmp_path):
    clock = SimulatedClock()
    corpus = CorpusManager(tmp_path / "c", clock)
    errors = []

    def depositor(k):
        try:
            for i in range(50):
                corpus.deposit(f"{k}-{i}".encode())
        except Exception as exc:
            errors.append(exc)

    def sweeper():
        try:
            for _ in range(50):
                corpus.sweep()
                corpus.blobs()
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=depositor, args=(k,)) for k in range(4)] + [threading.Thread(target=sweeper)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    assert len(corpus.blobs()) == 200
