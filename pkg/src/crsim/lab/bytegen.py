"""A five-command byte-emitting language used by scripted providers.

One command per line, ``#`` starts a comment.  Commands append to a buffer
that ``write`` flushes to a file in the working directory::

    literal b"GET /"        # emit literal bytes (Python bytes-literal syntax)
    repeat b"A" 200         # emit a literal N times
    range 0 255             # emit every byte value lo..hi inclusive
    concat x1.bin           # emit the content of files written earlier
    write x.bin             # write the buffer to a file and clear it
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from pathlib import Path

MAX_OUTPUT = 16 * 1024 * 1024

_TOKEN = re.compile(r"""\s*(?:(#.*)|(b?"(?:[^"\\]|\\.)*"|b?'(?:[^'\\]|\\.)*'|[^\s#]+))""")


class BytegenError(Exception):
    pass


def _tokens(line: str) -> list[str]:
    words = []
    pos = 0
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if not m or m.end() == pos:
            break
        if m.group(1) is not None:
            break
        words.append(m.group(2))
        pos = m.end()
    return words


def _literal(token: str) -> bytes:
    try:
        value = ast.literal_eval(token)
    except (ValueError, SyntaxError) as exc:
        raise BytegenError(f"bad literal {token!r}") from exc
    if isinstance(value, str):
        value = value.encode("latin-1")
    if not isinstance(value, bytes):
        raise BytegenError(f"literal {token!r} is not bytes")
    return value


def _int(token: str) -> int:
    try:
        return int(token, 0)
    except ValueError as exc:
        raise BytegenError(f"bad integer {token!r}") from exc


def _filename(token: str) -> str:
    if "/" in token or "\\" in token or token in ("", ".", ".."):
        raise BytegenError(f"file name {token!r} must be a plain name")
    return token


def run_bytegen(source: str, workdir: Path) -> list[str]:
    """Execute ``source`` inside ``workdir``; returns the names written."""
    buf = bytearray()
    written: list[str] = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        words = _tokens(raw)
        if not words:
            continue
        line = raw.strip()
        cmd, args = words[0], words[1:]
        try:
            if cmd == "literal" and len(args) == 1:
                buf += _literal(args[0])
            elif cmd == "repeat" and len(args) == 2:
                count = _int(args[1])
                if count < 0:
                    raise BytegenError("negative repeat count")
                buf += _literal(args[0]) * count
            elif cmd == "range" and len(args) == 2:
                lo, hi = _int(args[0]), _int(args[1])
                if not 0 <= lo <= hi <= 255:
                    raise BytegenError("range bounds must satisfy 0 <= lo <= hi <= 255")
                buf += bytes(range(lo, hi + 1))
            elif cmd == "concat" and args:
                for name in args:
                    p = workdir / _filename(name)
                    if not p.exists():
                        raise BytegenError(f"concat of unwritten file {name}")
                    buf += p.read_bytes()
            elif cmd == "write" and len(args) == 1:
                name = _filename(args[0])
                (workdir / name).write_bytes(bytes(buf))
                written.append(name)
                buf.clear()
            else:
                raise BytegenError(f"unknown command or arity: {line!r}")
        except BytegenError as exc:
            raise BytegenError(f"line {lineno}: {exc}") from None
        if len(buf) > MAX_OUTPUT:
            raise BytegenError(f"line {lineno}: output exceeds {MAX_OUTPUT} bytes")
    return written


@dataclass
class ExecResult:
    returncode: int
    stdout: str = ""
    stderr: str = ""


class BytegenExecutor:
    """Script executor for the lab: deterministic, in-process, no I/O outside workdir."""

    language = "bytegen"

    def __init__(self, clock=None, cost_ms: int = 0):
        self.clock = clock
        self.cost_ms = cost_ms

    def execute(self, source: str, workdir: Path, timeout_s: float = 60.0) -> ExecResult:
        if self.clock is not None:
            self.clock.spend(self.cost_ms)
        try:
            names = run_bytegen(source, Path(workdir))
        except BytegenError as exc:
            return ExecResult(1, "", f"bytegen error: {exc}")
        return ExecResult(0, "wrote " + " ".join(names), "")
