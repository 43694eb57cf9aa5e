"""Prompt text for the POV strategies."""

from __future__ import annotations

from typing import Optional

from ..domain import Language, Sanitizer

SYSTEM_PROMPT = (
    "You are helping a security team reproduce a defect with a concrete input file. "
    "Keep each reply focused on the next input to try, and when a try fails, adjust your "
    "reasoning and move on. Point out any missing fact that would let you aim more precisely."
)

DELTA_INTRO = (
    "A recent commit to this project is believed to have introduced a security defect. "
    "Build a test input that makes the fuzzing harness below hit it."
)

FULL_INTRO = (
    "Static analysis found the functions listed below reachable from the fuzzing harness, "
    "and they were ranked as the likeliest to hold a defect. Build a test input that makes the "
    "harness hit one of them."
)

SARIF_INTRO = (
    "A static analyzer reported the finding below and it was judged credible. Build a test "
    "input that makes the fuzzing harness reach the reported code and trip the sanitizer."
)

SANITIZER_GUIDANCE = {
    Sanitizer.ADDRESS: (
        "The build uses AddressSanitizer. It reports reads or writes outside live heap, stack or "
        "global objects, and any touch of memory after it was freed. Lengths or indexes one step "
        "past what the code allocated, or sequences that release an object and keep using it, are "
        "the usual way in."
    ),
    Sanitizer.MEMORY: (
        "The build uses MemorySanitizer. It fires when a branch, a pointer or a system call depends "
        "on memory that was never initialised. Look for records the code fills only partly, such as "
        "a short message whose trailing fields are still read."
    ),
    Sanitizer.UNDEFINED: (
        "The build uses UndefinedBehaviorSanitizer. It flags signed overflow, oversized shifts, "
        "misaligned pointers and similar undefined operations. Put numeric fields at the edges "
        "of their types."
    ),
    Sanitizer.JAZZER: (
        "The build runs under Jazzer. It raises a finding for uncaught runtime exceptions and for "
        "its security hooks: unsafe deserialization, path traversal, command or SQL injection, "
        "XML external entities and server-side request forgery. Shape the input so that its data "
        "reaches one of those sinks."
    ),
}

LANGUAGE_GUIDANCE = {
    Language.C_CPP: (
        "The harness hands the raw bytes of your file to LLVMFuzzerTestOneInput(data, size). "
        "Lengths, offsets and terminators are read exactly as written; there is no implicit NUL "
        "at the end of the buffer."
    ),
    Language.JAVA: (
        "The harness hands the bytes to fuzzerTestOneInput, often through a FuzzedDataProvider "
        "that takes numbers from the end of the buffer and strings from the front. Lay the file "
        "out with that order in mind."
    ),
}

C_CWE_CATALOG: tuple[tuple[str, str], ...] = (
    ("CWE-119", "Buffer Overflow"),
    ("CWE-416", "Use After Free"),
    ("CWE-476", "NULL Pointer Dereference"),
    ("CWE-190", "Integer Overflow"),
    ("CWE-122", "Heap-based Buffer Overflow"),
    ("CWE-787", "Out-of-bounds Write"),
    ("CWE-125", "Out-of-bounds Read"),
    ("CWE-134", "Format String"),
    ("CWE-121", "Stack-based Buffer Overflow"),
    ("CWE-369", "Divide by Zero"),
)

JAVA_CWE_CATALOG: tuple[tuple[str, str], ...] = (
    ("CWE-22", "Path Traversal"),
    ("CWE-77/78", "Command or OS Command Injection"),
    ("CWE-79", "Cross-Site Scripting"),
    ("CWE-89", "SQL Injection"),
    ("CWE-502", "Unsafe Deserialization"),
    ("CWE-611", "XML External Entity Processing"),
    ("CWE-918", "Server-Side Request Forgery"),
)

# Java has room for more categories than the seven shipped above; a
# deployment config may fill these (see ``cwe_catalog`` on the strategy config).
JAVA_EXTRA_SLOTS = 8


def default_catalog(language: Language) -> tuple[tuple[str, str], ...]:
    return C_CWE_CATALOG if language is Language.C_CPP else JAVA_CWE_CATALOG


BYTEGEN_HELP = (
    "The script language is bytegen, one command per line:\n"
    '  literal b"..."      append bytes (Python bytes-literal syntax)\n'
    '  repeat b"A" 200     append a literal N times\n'
    "  range 0 255         append every byte value from lo to hi\n"
    "  concat x1.bin       append a file written earlier\n"
    "  write x.bin         write the buffer to a file and clear it"
)


def contract_sentence(files: list[str], script_language: str) -> str:
    names = ", ".join(f"`{f}`" for f in files)
    noun = "file" if len(files) == 1 else "files"
    lang = "Python" if script_language == "python" else script_language
    return (
        f"Answer with one fenced code block holding a {lang} script that writes the {noun} {names} "
        "into its working directory, then add a short note naming the defect and the function you aim at."
    )


def cwe_section(catalog) -> str:
    rows = [f"- {cid}: {name}" for cid, name in catalog if cid]
    return "Weakness classes worth considering:\n" + "\n".join(rows)


RETRY_POINTS = (
    "Rethink the layout of the input: field order, length prefixes, magic values.",
    "Try extreme values: empty, maximal, negative, off by one.",
    "Trace the path from the harness entry into the changed or suspicious functions.",
    "Check every bounds or size test the input has to pass.",
    "Walk through the parsing logic one step at a time before writing the script.",
)


def feedback_message(output_block: str, problem: str, coverage_block: Optional[str]) -> str:
    parts = ["Harness output:", output_block, "", problem, "Points worth weighing:"]
    parts += [f"{i}. {p}" for i, p in enumerate(RETRY_POINTS, 1)]
    if coverage_block:
        parts += ["", coverage_block]
    return "\n".join(parts)


RANK_SYSTEM = (
    "You review source code for security defects and rate each function on how likely it is "
    "to contain one."
)

RUBRICS = {
    "memory": (
        "Rate memory-safety risk: off-by-one indexing, integer overflow in size arithmetic, "
        "copies without a bounds check, use of freed or uninitialised memory. "
        "10 means a certain violation, 7 to 9 strong signs, 2 to 6 weak or indirect signs, 1 none."
    ),
    "malicious": (
        "Rate the chance the function carries deliberately harmful logic such as a backdoor, a "
        "hidden command channel, data exfiltration, privilege escalation or a kill switch. "
        "10 means clear intent, 7 to 9 strong signs, 2 to 6 weak signs, 1 none."
    ),
    "deserialization": (
        "Rate the chance the function deserializes untrusted data without filtering, for example "
        "a bare ObjectInputStream, XMLDecoder or an unrestricted YAML loader. "
        "10 means certain, 7 to 9 strong signs, 2 to 6 weak signs, 1 none."
    ),
}


def rubrics_for(language: Language) -> tuple[str, ...]:
    return ("memory",) if language is Language.C_CPP else ("malicious", "deserialization")


def ranking_request(rubric: str, listing: str) -> str:
    return (
        RUBRICS[rubric]
        + "\n\nFunctions:\n" + listing
        + '\n\nReturn a JSON array such as [{"function": "name", "score": 8, "reason": "..."}], '
        "highest score first."
    )
