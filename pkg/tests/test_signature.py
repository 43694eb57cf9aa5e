from hypothesis import given
from hypothesis import strategies as st

from crsim.domain import CrashSignature, Sanitizer, SignatureKind
from crsim.signature import heuristic_signature, normalize_report, parse_crash_report, parse_frames, report_locations

ASAN = """\
==4242==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x602000000011 at pc 0x4f1a2b
READ of size 4 at 0x602000000011 thread T0
    #0 0x4f1a2b in __asan_memcpy /src/llvm-project/compiler-rt/lib/asan/asan_interceptors.cpp:63:3
    #1 0x5a3c10 in parse_header /src/labhttp/src/http.c:42:7
    #2 0x5a3d20 in LLVMFuzzerTestOneInput /src/labhttp/fuzz/fuzz_http.c:12:3
SUMMARY: AddressSanitizer: heap-buffer-overflow /src/labhttp/src/http.c:42:7 in parse_header
"""

JAZZER = """\
== Java Exception: com.code_intelligence.jazzer.api.FuzzerSecurityIssueHigh: Remote Code Execution
\tat com.code_intelligence.jazzer.sanitizers.Deserialization.hook(Deserialization.java:88)
\tat com.example.Parser.parse(Parser.java:17)
\tat com.example.ParserFuzzer.fuzzerTestOneInput(ParserFuzzer.java:9)
"""


def test_asan_topmost_project_frame():
    sig = parse_crash_report(ASAN, Sanitizer.ADDRESS, ["/src/labhttp/"])
    assert sig == CrashSignature(SignatureKind.LOCATION, Sanitizer.ADDRESS, file="src/http.c", line=42)


def test_no_frames_falls_back_to_heuristic():
    sig = parse_crash_report("SEGV on unknown address 0x000000000000", Sanitizer.ADDRESS)
    assert sig.kind is SignatureKind.HEURISTIC
    assert len(sig.fallback_digest) == 16


def test_jazzer_frame():
    sig = parse_crash_report(JAZZER, Sanitizer.JAZZER)
    assert sig == CrashSignature(SignatureKind.LOCATION, Sanitizer.JAZZER, file="Parser.java", line=17)


def test_frames_and_locations():
    assert [f.symbol for f in parse_frames(ASAN)] == ["__asan_memcpy", "parse_header", "LLVMFuzzerTestOneInput"]
    assert ("src/http.c", 42) in report_locations(ASAN, ["/src/labhttp/"])


def test_heuristic_ignores_addresses_pids_timestamps():
    a = "==12==ERROR: boom at 0xdeadbeef pid=100 2024-05-01T10:00:00Z\nthread T3"
    b = "==99==ERROR: boom at 0x1234 pid=7 2025-01-02T03:04:05Z\nthread T9"
    assert heuristic_signature(a, Sanitizer.ADDRESS) == heuristic_signature(b, Sanitizer.ADDRESS)
    assert heuristic_signature(a, Sanitizer.ADDRESS) != heuristic_signature(a, Sanitizer.MEMORY)


def test_heuristic_uses_first_twenty_lines_only():
    head = "\n".join(f"line {i}" for i in range(20))
    assert heuristic_signature(head + "\nextra A", Sanitizer.ADDRESS) == heuristic_signature(head + "\nB", Sanitizer.ADDRESS)


@given(st.text(max_size=300), st.sampled_from(list(Sanitizer)))
def test_parse_is_total_and_deterministic(report, sanitizer):
    a = parse_crash_report(report, sanitizer)
    assert a == parse_crash_report(report, sanitizer)
    assert a.sanitizer is sanitizer


@given(st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=6),
       st.integers(1, 9999), st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=60))
def test_location_independent_of_other_text(stem, line, noise):
    report = f"{noise.replace('#', '')}\n    #0 0x1 in fn /src/p/{stem}.c:{line}:2\n"
    sig = parse_crash_report(report, Sanitizer.ADDRESS, ["/src/p/"])
    assert sig == CrashSignature(SignatureKind.LOCATION, Sanitizer.ADDRESS, file=f"{stem}.c", line=line)


@given(st.lists(st.integers(0, 2**48), min_size=1, max_size=4), st.integers(1, 99999))
def test_hex_and_pid_never_matter(addrs, pid):
    template = "==PID==ERROR: crash " + " ".join("0x{:x}" for _ in addrs)
    base = template.replace("PID", "1").format(*[0] * len(addrs))
    varied = template.replace("PID", str(pid)).format(*addrs)
    assert normalize_report(base) == normalize_report(varied)
