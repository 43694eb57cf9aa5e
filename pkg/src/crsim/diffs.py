"""Unified diff generation, parsing and strict application.

Lines are split on ``\\n`` only; ``\\r`` and other separators are content.
A missing final newline is carried with the standard
``\\ No newline at end of file`` marker so diffs round-trip byte-exactly.
"""

from __future__ import annotations

import difflib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

NO_NEWLINE = "\\ No newline at end of file"
DEV_NULL = "/dev/null"

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$")

# (text, ends_with_newline)
Line = tuple[str, bool]


class DiffParseError(ValueError):
    pass


class PatchApplyError(ValueError):
    pass


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    section: str = ""
    # (tag, text, has_newline) with tag in " -+"
    lines: list[tuple[str, str, bool]] = field(default_factory=list)


@dataclass
class FilePatch:
    old_path: str | None
    new_path: str | None
    hunks: list[Hunk] = field(default_factory=list)

    @property
    def path(self) -> str:
        """Repository-relative path the patch operates on."""
        raw = self.new_path if self.new_path is not None else self.old_path
        assert raw is not None
        return _strip_prefix(raw)


def split_lines(text: str) -> list[Line]:
    if not text:
        return []
    parts = text.split("\n")
    if parts[-1] == "":
        return [(p, True) for p in parts[:-1]]
    return [(p, True) for p in parts[:-1]] + [(parts[-1], False)]


def join_lines(lines: list[Line]) -> str:
    return "".join(t + ("\n" if nl else "") for t, nl in lines)


def _strip_prefix(path: str) -> str:
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def _format_range(start: int, stop: int) -> str:
    # same convention as difflib.unified_diff
    beginning = start + 1
    length = stop - start
    if length == 1:
        return f"{beginning}"
    if not length:
        beginning -= 1
    return f"{beginning},{length}"


def _emit(out: list[str], tag: str, line: Line) -> None:
    text, nl = line
    out.append(f"{tag}{text}\n")
    if not nl:
        out.append(NO_NEWLINE + "\n")


def diff_text(old: str | None, new: str | None, path: str, context: int = 3) -> str:
    """Diff of one file. ``None`` means the file does not exist on that side."""
    if old == new:
        return ""
    a = split_lines(old or "")
    b = split_lines(new or "")
    out = [
        f"--- {DEV_NULL if old is None else 'a/' + path}\n",
        f"+++ {DEV_NULL if new is None else 'b/' + path}\n",
    ]
    matcher = difflib.SequenceMatcher(None, a, b, autojunk=False)
    for group in matcher.get_grouped_opcodes(context):
        first, last = group[0], group[-1]
        out.append(
            f"@@ -{_format_range(first[1], last[2])} +{_format_range(first[3], last[4])} @@\n"
        )
        for tag, i1, i2, j1, j2 in group:
            if tag == "equal":
                for line in a[i1:i2]:
                    _emit(out, " ", line)
                continue
            if tag in ("replace", "delete"):
                for line in a[i1:i2]:
                    _emit(out, "-", line)
            if tag in ("replace", "insert"):
                for line in b[j1:j2]:
                    _emit(out, "+", line)
    return "".join(out)


def _read_tree(root: Path) -> dict[str, str]:
    files: dict[str, str] = {}
    if not root.exists():
        return files
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d != ".git")
        for name in filenames:
            full = Path(dirpath) / name
            rel = full.relative_to(root).as_posix()
            files[rel] = full.read_bytes().decode("utf-8", "surrogateescape")
    return files


def make_diff(original_root: str | os.PathLike, modified_root: str | os.PathLike, context: int = 3) -> str:
    """Unified diff (``a/``/``b/`` prefixes) turning one tree into the other."""
    old = _read_tree(Path(original_root))
    new = _read_tree(Path(modified_root))
    chunks = []
    for path in sorted(set(old) | set(new)):
        chunks.append(diff_text(old.get(path), new.get(path), path, context))
    return "".join(chunks)


def parse_diff(text: str) -> list[FilePatch]:
    """Parse unified diff text; raises DiffParseError on malformed headers or hunks."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    patches: list[FilePatch] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        if not line.startswith("--- "):
            if line.startswith("@@"):
                raise DiffParseError(f"line {i + 1}: hunk outside a file section")
            # git extended headers and free text
            i += 1
            continue
        if i + 1 >= len(lines) or not lines[i + 1].startswith("+++ "):
            raise DiffParseError(f"line {i + 1}: '---' header without '+++'")
        old = lines[i][4:].split("\t")[0].rstrip()
        new = lines[i + 1][4:].split("\t")[0].rstrip()
        fp = FilePatch(None if old == DEV_NULL else old, None if new == DEV_NULL else new)
        if fp.old_path is None and fp.new_path is None:
            raise DiffParseError(f"line {i + 1}: both sides are {DEV_NULL}")
        i += 2
        while i < len(lines) and lines[i].startswith("@@"):
            m = _HUNK_RE.match(lines[i])
            if not m:
                raise DiffParseError(f"line {i + 1}: malformed hunk header {lines[i]!r}")
            hunk = Hunk(
                int(m.group(1)),
                int(m.group(2)) if m.group(2) is not None else 1,
                int(m.group(3)),
                int(m.group(4)) if m.group(4) is not None else 1,
                m.group(5).strip(),
            )
            i += 1
            old_left, new_left = hunk.old_len, hunk.new_len
            while old_left > 0 or new_left > 0:
                if i >= len(lines):
                    raise DiffParseError("unexpected end of diff inside a hunk")
                body = lines[i]
                tag, content = (body[0], body[1:]) if body else (" ", "")
                if tag == " ":
                    old_left -= 1
                    new_left -= 1
                elif tag == "-":
                    old_left -= 1
                elif tag == "+":
                    new_left -= 1
                else:
                    raise DiffParseError(f"line {i + 1}: unexpected hunk line {body!r}")
                if old_left < 0 or new_left < 0:
                    raise DiffParseError(f"line {i + 1}: hunk longer than its header")
                hunk.lines.append((tag, content, True))
                i += 1
                if i < len(lines) and lines[i].startswith("\\"):
                    t, c, _ = hunk.lines[-1]
                    hunk.lines[-1] = (t, c, False)
                    i += 1
            fp.hunks.append(hunk)
        patches.append(fp)
    return patches


def validate_diff(text: str) -> None:
    """Raise DiffParseError unless ``text`` holds at least one well-formed file section."""
    if not parse_diff(text):
        raise DiffParseError("no file sections in diff")


def apply_file_patch(original: str | None, fp: FilePatch) -> str | None:
    """Apply one file's hunks strictly (no offset search, no fuzz)."""
    if fp.old_path is None and original is not None:
        raise PatchApplyError(f"{fp.path}: file already exists")
    if fp.old_path is not None and original is None:
        raise PatchApplyError(f"{fp.path}: file does not exist")
    src = split_lines(original or "")
    out: list[Line] = []
    pos = 0
    for hunk in fp.hunks:
        start = hunk.old_start if hunk.old_len == 0 else hunk.old_start - 1
        if start < pos or start > len(src):
            raise PatchApplyError(f"{fp.path}: hunk at line {hunk.old_start} out of range")
        out.extend(src[pos:start])
        pos = start
        for tag, text, nl in hunk.lines:
            if tag in " -":
                if pos >= len(src) or src[pos] != (text, nl):
                    raise PatchApplyError(
                        f"{fp.path}: hunk at line {hunk.old_start} does not match at line {pos + 1}"
                    )
                pos += 1
            if tag in " +":
                out.append((text, nl))
    out.extend(src[pos:])
    if fp.new_path is None:
        if out:
            raise PatchApplyError(f"{fp.path}: deletion leaves content behind")
        return None
    return join_lines(out)


def _safe_join(root: Path, rel: str) -> Path:
    p = Path(rel)
    if p.is_absolute() or ".." in p.parts:
        raise PatchApplyError(f"refusing path outside the tree: {rel}")
    return root / p


def apply_diff(diff: str, root: str | os.PathLike) -> list[str]:
    """Apply ``diff`` to the tree at ``root``; all-or-nothing. Returns touched paths."""
    root = Path(root)
    try:
        patches = parse_diff(diff)
    except DiffParseError as exc:
        raise PatchApplyError(str(exc)) from exc
    results: dict[str, str | None] = {}
    for fp in patches:
        target = _safe_join(root, fp.path)
        if fp.path in results:
            original = results[fp.path]
        elif target.exists():
            original = target.read_bytes().decode("utf-8", "surrogateescape")
        else:
            original = None
        results[fp.path] = apply_file_patch(original, fp)
    for rel, content in results.items():
        target = _safe_join(root, rel)
        if content is None:
            target.unlink()
        else:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(content.encode("utf-8", "surrogateescape"))
    return sorted(results)


def changed_lines(diff: str) -> dict[str, set[int]]:
    """New-side line numbers touched per file; pure deletions mark the line at the cut."""
    touched: dict[str, set[int]] = {}
    for fp in parse_diff(diff):
        if fp.new_path is None:
            continue
        lines = touched.setdefault(fp.path, set())
        for hunk in fp.hunks:
            new_no = hunk.new_start if hunk.new_len else hunk.new_start + 1
            for tag, _text, _nl in hunk.lines:
                if tag == " ":
                    new_no += 1
                elif tag == "+":
                    lines.add(new_no)
                    new_no += 1
                else:
                    lines.add(max(new_no, 1))
    return touched
