"""Queries over precomputed call graphs: metadata, reachability, call paths.

Graph documents look like::

    {"functions": [{"name": ..., "file": ..., "start_line": ..., "end_line": ...,
                    "source": ..., "parameters": [...]}, ...],
     "edges": [[caller_index, callee_index], ...],
     "entrypoints": {"harness_name": function_index_or_null}}
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .clock import MINUTE
from .domain import CallGraph, CallPath, FunctionRecord, InvariantError, Language

log = logging.getLogger(__name__)

DEFAULT_MAX_PATHS = 20
DEFAULT_DEPTH = {Language.C_CPP: 50, Language.JAVA: 10}
QUERY_BUDGET_MS = 10 * MINUTE
BATCH_SIZE = 1_000


class GraphSchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class PathQueryLimits:
    max_paths: int = DEFAULT_MAX_PATHS
    max_depth: int = DEFAULT_DEPTH[Language.C_CPP]

    def __post_init__(self):
        if self.max_paths < 1 or self.max_depth < 1:
            raise InvariantError("path limits must be >= 1")

    @classmethod
    def for_language(cls, language: Language, max_paths: int = DEFAULT_MAX_PATHS) -> "PathQueryLimits":
        return cls(max_paths=max_paths, max_depth=DEFAULT_DEPTH[language])


@dataclass
class PathQueryResult:
    paths: list[CallPath] = field(default_factory=list)
    warning: Optional[str] = None
    timed_out: bool = False


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise GraphSchemaError(path, message)


def load_graph(document: str | bytes | dict) -> CallGraph:
    """Validate a graph document and build a CallGraph."""
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    _expect(isinstance(doc, dict), "$", "graph document must be an object")
    funcs = doc.get("functions")
    _expect(isinstance(funcs, list), "$.functions", "must be a list")
    records = []
    for i, f in enumerate(funcs):
        where = f"$.functions[{i}]"
        _expect(isinstance(f, dict), where, "must be an object")
        for key in ("name", "file"):
            _expect(isinstance(f.get(key), str) and f[key], f"{where}.{key}", "must be a non-empty string")
        for key in ("start_line", "end_line"):
            _expect(isinstance(f.get(key), int) and f[key] >= 1, f"{where}.{key}", "must be a positive integer")
        _expect(f["start_line"] <= f["end_line"], where, "start_line exceeds end_line")
        src = f.get("source")
        _expect(src is None or isinstance(src, str), f"{where}.source", "must be a string")
        params = f.get("parameters")
        _expect(params is None or isinstance(params, list), f"{where}.parameters", "must be a list")
        records.append(
            FunctionRecord(
                f["name"], f["file"], f["start_line"], f["end_line"], src,
                tuple(params) if params is not None else None,
            )
        )
    n = len(records)
    edges = set()
    for i, e in enumerate(doc.get("edges", [])):
        where = f"$.edges[{i}]"
        _expect(isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e), where, "must be [caller, callee]")
        _expect(0 <= e[0] < n and 0 <= e[1] < n, where, f"dangling edge {e} with {n} functions")
        edges.add((e[0], e[1]))
    entry = doc.get("entrypoints", {})
    _expect(isinstance(entry, dict), "$.entrypoints", "must be an object")
    for h, idx in entry.items():
        where = f"$.entrypoints.{h}"
        _expect(idx is None or isinstance(idx, int), where, "must be an index or null")
        _expect(idx is None or 0 <= idx < n, where, f"entrypoint index {idx} with {n} functions")
    seen = set()
    for i, r in enumerate(records):
        _expect(r.ident not in seen, f"$.functions[{i}]", "duplicate (name, file, start_line)")
        seen.add(r.ident)
    return CallGraph(tuple(records), frozenset(edges), dict(entry))


def function_metadata(graph: CallGraph, name: str, file_hint: Optional[str] = None) -> list[FunctionRecord]:
    out = [f for f in graph.functions if f.name == name]
    if file_hint:
        hint = file_hint.lstrip("./")
        out = [f for f in out if f.file == hint or f.file.endswith("/" + hint)]
    return out


def _entry(graph: CallGraph, harness: str) -> int:
    if harness not in graph.entrypoints or graph.entrypoints[harness] is None:
        raise KeyError(f"unknown or unresolved harness {harness!r}")
    return graph.entrypoints[harness]  # type: ignore[return-value]


def reachable_indices(graph: CallGraph, harness: str) -> list[int]:
    start = _entry(graph, harness)
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in graph.successors(node):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return sorted(seen)


def reachable(graph: CallGraph, harness: str) -> set[FunctionRecord]:
    """Every function reachable from the harness entrypoint, entrypoint included."""
    return {graph.functions[i] for i in reachable_indices(graph, harness)}


def query_paths(
    graph: CallGraph,
    harness: str,
    target: FunctionRecord,
    limits: PathQueryLimits = PathQueryLimits(),
    *,
    deadline: Optional[float] = None,
    now: Optional[Callable[[], float]] = None,
) -> PathQueryResult:
    """Breadth-first enumeration of entry->target paths.

    Intermediate nodes are never the entry or the target and appear at most
    once per path; successors are explored in ascending index order, so the
    first ``max_paths`` paths are well defined.  Depth counts nodes.
    """
    try:
        src = _entry(graph, harness)
    except KeyError as exc:
        log.warning("%s", exc)
        return PathQueryResult(warning=str(exc))
    dst = graph.index_of(target)
    if dst is None:
        msg = f"target {target.name} ({target.file}) not in graph"
        log.warning(msg)
        return PathQueryResult(warning=msg)
    if src == dst:
        return PathQueryResult([CallPath((graph.functions[src],))])

    found: list[tuple[int, ...]] = []
    queue: deque[tuple[int, ...]] = deque([(src,)])
    steps = 0
    while queue and len(found) < limits.max_paths:
        steps += 1
        if deadline is not None and now is not None and steps % 256 == 0 and now() > deadline:
            return PathQueryResult(warning="query exceeded its time budget", timed_out=True)
        path = queue.popleft()
        if len(path) >= limits.max_depth:
            continue
        for nxt in graph.successors(path[-1]):
            if nxt == dst:
                found.append(path + (nxt,))
                if len(found) >= limits.max_paths:
                    break
            elif nxt != src and nxt not in path:
                queue.append(path + (nxt,))
    paths = [CallPath(tuple(graph.functions[i] for i in p)) for p in found]
    return PathQueryResult(paths)


def call_paths(
    graph: CallGraph,
    harness: str,
    target: FunctionRecord,
    limits: PathQueryLimits = PathQueryLimits(),
) -> list[CallPath]:
    return query_paths(graph, harness, target, limits).paths


@dataclass(frozen=True)
class PathQuery:
    harness: str
    target: FunctionRecord


def call_paths_batch(
    graph: CallGraph,
    queries: Iterable[PathQuery],
    limits: PathQueryLimits = PathQueryLimits(),
    *,
    batch_size: int = BATCH_SIZE,
    clock=None,
    budget_ms: int = QUERY_BUDGET_MS,
) -> list[PathQueryResult]:
    """Run queries in batches against one graph snapshot, each under the query budget."""
    queries = list(queries)
    results: list[PathQueryResult] = []
    for start in range(0, len(queries), batch_size):
        for q in queries[start:start + batch_size]:
            deadline = clock.now() + budget_ms if clock is not None else None
            results.append(
                query_paths(graph, q.harness, q.target, limits, deadline=deadline,
                            now=clock.now if clock is not None else None)
            )
    return results


def functions_touching(graph: CallGraph, touched: dict[str, set[int]]) -> list[FunctionRecord]:
    """Graph functions whose span overlaps any touched line, in graph order."""
    out = []
    for f in graph.functions:
        for path, lines in touched.items():
            if f.file == path or f.file.endswith("/" + path) or path.endswith("/" + f.file):
                if any(f.start_line <= ln <= f.end_line for ln in lines):
                    out.append(f)
                    break
    return out
