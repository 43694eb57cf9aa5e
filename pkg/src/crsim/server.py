"""HTTP service exposing submissions, call-graph queries and scenario runs.

Request and response bodies use the domain serial forms from
:func:`crsim.domain.serialize`.  One process keeps everything in memory.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request

from .callgraph import (GraphSchemaError, PathQuery, PathQueryLimits, call_paths_batch, function_metadata,
                        load_graph, reachable_indices)
from .clock import SystemClock
from .domain import (ChallengeTask, InvariantError, Language, PatchSubmission, PovSubmission, SarifRecord,
                     Verdict, deserialize, serialize)
from .sarif import SarifParseError, SarifStore, parse_sarif_results
from .scoring import score_ledger
from .submission import ScriptedCompetitionClient, SubmissionService

log = logging.getLogger(__name__)


class ServiceState:
    """Everything the endpoints share."""

    def __init__(self, client=None, clock=None, evaluators=(), threaded: Optional[bool] = None):
        self.clock = clock or SystemClock()
        self.submission = SubmissionService(client or ScriptedCompetitionClient(), clock=self.clock,
                                            evaluators=evaluators, threaded=threaded)
        self.sarifs = SarifStore()
        self.graphs = {}
        self.reports: dict[str, dict] = {}
        self.lock = threading.Lock()


async def _body(request: Request) -> dict:
    try:
        doc = await request.json()
    except ValueError:
        raise HTTPException(400, "body is not JSON") from None
    if not isinstance(doc, dict):
        raise HTTPException(400, "body must be a JSON object")
    return doc


def _parse(cls, doc):
    try:
        return deserialize(cls, doc)
    except (InvariantError, KeyError, TypeError, ValueError) as exc:
        raise HTTPException(422, f"invalid {cls.__name__}: {exc}") from None


def create_app(state: Optional[ServiceState] = None) -> FastAPI:
    state = state or ServiceState()
    app = FastAPI(title="crsim")
    app.state.crsim = state

    def submit(fn, *args):
        try:
            return fn(*args)
        except KeyError as exc:
            raise HTTPException(404, str(exc).strip("'\"")) from None
        except (InvariantError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None

    def graph(graph_id: str):
        g = state.graphs.get(graph_id)
        if g is None:
            raise HTTPException(404, f"unknown graph {graph_id}")
        return g

    # ------------------------------------------------------------ tasks

    @app.post("/tasks")
    async def post_task(request: Request):
        """Register a task, or run a scenario when the body names a manifest."""
        doc = await _body(request)
        if "manifest" in doc:
            from .lab.scenario import ManifestError, run_scenario

            path = Path(doc["manifest"])
            if not path.is_file():
                raise HTTPException(404, f"no manifest at {path}")
            try:
                report, problems = run_scenario(path, seed=int(doc.get("seed", 0)))
            except ManifestError as exc:
                raise HTTPException(422, str(exc)) from None
            task_id = report["task"]["task_id"]
            with state.lock:
                state.reports[task_id] = report
            return {"task_id": task_id, "problems": problems}
        task = _parse(ChallengeTask, doc)
        state.submission.register_task(task)
        return {"task_id": task.task_id}

    @app.get("/tasks/{task_id}/report")
    def get_report(task_id: str):
        with state.lock:
            report = state.reports.get(task_id)
        if report is not None:
            return report
        ledger = submit(state.submission.ledger_document, task_id)
        return {"task_id": task_id, "ledger": ledger, "score": serialize(score_ledger(ledger)),
                "bundles": serialize(state.submission.bundles(task_id))}

    # ------------------------------------------------------- submissions

    @app.post("/povs")
    async def post_pov(request: Request):
        pov = _parse(PovSubmission, await _body(request))
        return serialize(submit(state.submission.submit_pov, pov))

    @app.post("/patches")
    async def post_patch(request: Request):
        patch = _parse(PatchSubmission, await _body(request))
        return serialize(submit(state.submission.submit_patch, patch))

    @app.post("/sarif")
    async def post_sarif(request: Request):
        doc = await _body(request)
        task_id = doc.get("task_id")
        if not task_id or "document" not in doc:
            raise HTTPException(422, "expected task_id and document")
        try:
            records = parse_sarif_results(doc["document"], task_id, id_prefix=doc.get("id_prefix", "sarif"))
        except SarifParseError as exc:
            raise HTTPException(422, str(exc)) from None
        for rec in records:
            state.sarifs.add(rec)
            submit(state.submission.register_sarif, rec)
        return {"records": serialize(records)}

    @app.post("/sarif-assessments")
    async def post_assessment(request: Request):
        doc = await _body(request)
        try:
            verdict = Verdict(doc.get("verdict"))
        except ValueError:
            raise HTTPException(422, f"unknown verdict {doc.get('verdict')!r}") from None
        if "record" in doc:
            record = _parse(SarifRecord, doc["record"])
        else:
            try:
                record = state.sarifs.get(doc.get("sarif_id", ""))
            except KeyError:
                raise HTTPException(404, f"unknown SARIF record {doc.get('sarif_id')}") from None
        return serialize(submit(state.submission.submit_sarif_assessment, record, verdict))

    @app.get("/bundles/{task_id}")
    def get_bundles(task_id: str):
        return serialize(submit(state.submission.bundles, task_id))

    @app.get("/ledger/{task_id}")
    def get_ledger(task_id: str):
        return submit(state.submission.ledger_document, task_id)

    @app.get("/score/{task_id}")
    def get_score(task_id: str):
        with state.lock:
            report = state.reports.get(task_id)
        ledger = report["ledger"] if report is not None else submit(state.submission.ledger_document, task_id)
        return serialize(score_ledger(ledger))

    # -------------------------------------------------------- call graph

    @app.post("/graphs")
    async def post_graph(request: Request):
        doc = await _body(request)
        graph_id = doc.pop("graph_id", "default")
        try:
            g = load_graph(doc)
        except GraphSchemaError as exc:
            raise HTTPException(422, str(exc)) from None
        state.graphs[graph_id] = g
        return {"graph_id": graph_id, "functions": len(g.functions), "edges": len(g.edges)}

    @app.get("/functions")
    def get_functions(name: str, file: Optional[str] = None, graph_id: str = "default"):
        return {"functions": serialize(function_metadata(graph(graph_id), name, file))}

    @app.get("/reachable")
    def get_reachable(harness: str, graph_id: str = "default"):
        g = graph(graph_id)
        if harness not in g.entrypoints or g.entrypoints[harness] is None:
            return {"harness": harness, "functions": [], "warning": f"unknown harness {harness}"}
        return {"harness": harness, "functions": serialize([g.functions[i] for i in reachable_indices(g, harness)])}

    @app.post("/callpaths:batch")
    async def post_callpaths(request: Request):
        doc = await _body(request)
        g = graph(doc.get("graph_id", "default"))
        try:
            limits = PathQueryLimits.for_language(Language(doc.get("language", Language.C_CPP.value)),
                                                  int(doc.get("max_paths", 20)))
        except (InvariantError, ValueError) as exc:
            raise HTTPException(422, str(exc)) from None
        queries, results = [], []
        for q in doc.get("queries", []):
            targets = function_metadata(g, q.get("target", ""), q.get("file"))
            queries.append(PathQuery(q.get("harness", ""), targets[0]) if targets else None)
        answered = iter(call_paths_batch(g, [q for q in queries if q is not None], limits, clock=state.clock))
        for q in queries:
            if q is None:
                results.append({"paths": [], "warning": "unknown target", "timed_out": False})
                continue
            r = next(answered)
            out = {"paths": [[f.name for f in p.functions] for p in r.paths], "timed_out": r.timed_out}
            if r.warning:
                out["warning"] = r.warning
            results.append(out)
        return {"results": results}

    return app
