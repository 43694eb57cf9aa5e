"""Command line front end.

Exit codes: 0 success, 1 internal error or failed scenario expectations,
2 usage or input error.  Settings come from flags, then ``CRSIM_*``
environment variables, then the manifest.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .callgraph import GraphSchemaError, PathQueryLimits, function_metadata, load_graph, query_paths, reachable_indices
from .clock import make_clock
from .domain import InvariantError, Language, serialize
from .scoring import score_ledger

log = logging.getLogger("crsim")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _setting(flag, env: str, manifest_value=None, default=None):
    if flag is not None:
        return flag
    if os.environ.get(env):
        return os.environ[env]
    if manifest_value is not None:
        return manifest_value
    return default


def _emit(doc, out: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    from .lab.scenario import ManifestError, run_scenario

    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise InputError(f"{manifest}: no such manifest")
    mdoc = _load_json(str(manifest))
    clock_mode = _setting(args.clock, "CRSIM_CLOCK", mdoc.get("clock"), "simulated")
    try:
        seed = int(_setting(args.seed, "CRSIM_SEED", mdoc.get("seed"), 0))
    except ValueError:
        raise InputError("seed must be an integer") from None
    providers_arg = _setting(args.providers, "CRSIM_PROVIDERS")
    router = provider_doc = None
    if providers_arg == "live":
        from .providers import router_from_config

        cfg = os.environ.get("CRSIM_PROVIDER_CONFIG")
        if not cfg:
            raise InputError("--providers live needs CRSIM_PROVIDER_CONFIG pointing at a provider config file")
        router = router_from_config(cfg)
    elif providers_arg:
        provider_doc = _load_json(providers_arg)
    try:
        clock = make_clock(clock_mode)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        report, problems = run_scenario(manifest, clock=clock, seed=seed, providers=router,
                                        provider_doc=provider_doc)
    except ManifestError as exc:
        raise InputError(str(exc)) from None
    _emit(report, args.out)
    if args.figures:
        from .figures import render_figures

        for p in render_figures(report, args.figures):
            log.info("wrote %s", p)
    for p in problems:
        print(f"scenario check failed: {p}", file=sys.stderr)
    return EXIT_INTERNAL if problems else EXIT_OK


# ---------------------------------------------------------------------------
# score


def cmd_score(args) -> int:
    doc = _load_json(args.ledger)
    if isinstance(doc, dict) and "ledger" in doc and "events" not in doc:
        doc = doc["ledger"]  # a full task report
    try:
        score = score_ledger(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.ledger}: not a ledger document ({exc})") from None
    _emit(serialize(score), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# callgraph


def cmd_callgraph(args) -> int:
    try:
        graph = load_graph(_load_json(args.graph))
    except GraphSchemaError as exc:
        raise InputError(f"{args.graph}: {exc}") from None
    if args.query == "metadata":
        found = function_metadata(graph, args.name, args.file)
        _emit({"name": args.name, "functions": [serialize(f) for f in found]}, args.out)
        return EXIT_OK
    if args.harness not in graph.entrypoints or graph.entrypoints[args.harness] is None:
        log.warning("unknown or unresolved harness %r", args.harness)
        empty = {"harness": args.harness, "warning": f"unknown harness {args.harness}"}
        _emit(dict(empty, functions=[]) if args.query == "reachable" else dict(empty, paths=[]), args.out)
        return EXIT_OK
    if args.query == "reachable":
        fns = [serialize(graph.functions[i]) for i in reachable_indices(graph, args.harness)]
        _emit({"harness": args.harness, "functions": fns}, args.out)
        return EXIT_OK
    targets = function_metadata(graph, args.target, args.file)
    if not targets:
        log.warning("target %r not in graph", args.target)
        _emit({"harness": args.harness, "target": args.target, "paths": [],
               "warning": f"unknown target {args.target}"}, args.out)
        return EXIT_OK
    limits = PathQueryLimits.for_language(Language(args.language), args.max_paths)
    if args.max_depth:
        limits = PathQueryLimits(args.max_paths, args.max_depth)
    res = query_paths(graph, args.harness, targets[0], limits)
    doc = {"harness": args.harness, "target": args.target,
           "paths": [[f.name for f in p.functions] for p in res.paths]}
    if res.warning:
        doc["warning"] = res.warning
    _emit(doc, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    port = int(_setting(args.port, "CRSIM_PORT", None, 8080))
    uvicorn.run(create_app(), host=args.host, port=port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crsim", description="Run lab scenarios, score ledgers, query call graphs.")
    p.add_argument("--version", action="version", version=f"crsim {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario manifest end to end")
    r.add_argument("manifest")
    r.add_argument("--out", help="write the report here instead of stdout")
    r.add_argument("--clock", choices=("system", "simulated"))
    r.add_argument("--seed", type=int)
    r.add_argument("--providers", help="provider script JSON, or 'live'")
    r.add_argument("--figures", metavar="DIR", help="also write score.png, timeline.png and timeline.csv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="score a ledger document or task report")
    s.add_argument("ledger")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    c = sub.add_parser("callgraph", help="query a call graph document")
    c.add_argument("query", choices=("reachable", "paths", "metadata"))
    c.add_argument("--graph", required=True)
    c.add_argument("--harness")
    c.add_argument("--target", help="target function name (paths)")
    c.add_argument("--name", help="function name (metadata)")
    c.add_argument("--file", help="file hint to disambiguate functions")
    c.add_argument("--language", default=Language.C_CPP.value, choices=[l.value for l in Language])
    c.add_argument("--max-paths", type=int, default=20)
    c.add_argument("--max-depth", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_callgraph)

    v = sub.add_parser("serve", help="serve the HTTP API")
    v.add_argument("--port", type=int)
    v.add_argument("--host", default="127.0.0.1")
    v.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "callgraph":
        need = {"reachable": ("harness",), "paths": ("harness", "target"), "metadata": ("name",)}[args.query]
        missing = [f"--{n}" for n in need if getattr(args, n) is None]
        if missing:
            print(f"crsim callgraph {args.query}: missing {', '.join(missing)}", file=sys.stderr)
            return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"crsim: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"crsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
