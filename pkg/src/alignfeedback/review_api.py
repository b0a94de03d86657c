"""HTTP surface of the review service.

Endpoints (all JSON; errors are ``{"error": {"code", "message"}}`` with a
matching status code):

* ``GET  /api/next?rater=ID``      — next assignable instance or null
* ``POST /api/verdicts``           — submit a ReviewVerdict, returns the aggregate
* ``GET  /api/agreement?question=feedback|text|visual`` — level histogram
* ``GET  /api/export``             — unanimously approved instances + rate
* ``GET  /api/instances/{id}``     — single instance lookup
* ``GET  /``                       — the review UI bundle, when one is built

Request bodies are parsed by hand rather than through framework models so
that every failure mode produces the same error envelope.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .review import (
    QUESTIONS,
    ReviewStore,
    ReviewVerdict,
    UnknownInstance,
    UnknownRater,
)

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>review service</title></head>
<body>
<h1>Review service is running</h1>
<p>No UI bundle is installed. Build the frontend package and point the
server at its output directory, or drive the JSON API directly:</p>
<ul>
<li><code>GET /api/next?rater=ID</code></li>
<li><code>POST /api/verdicts</code></li>
<li><code>GET /api/agreement?question=feedback|text|visual</code></li>
<li><code>GET /api/export</code></li>
<li><code>GET /api/instances/{id}</code></li>
</ul>
</body></html>
"""


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}},
                        status_code=status)


def create_review_app(store: ReviewStore,
                      static_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="alignfeedback review service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "n_instances": len(store.instances),
                "raters": store.raters}

    @app.get("/api/next")
    def api_next(rater: Optional[str] = None):
        if not rater:
            return _error(400, "BadRequest", "missing ?rater=ID query parameter")
        try:
            instance = store.assign_next(rater)
        except UnknownRater:
            return _error(403, "UnknownRater",
                          f"rater {rater!r} is not registered")
        if instance is None:
            return {"instance": None}
        return {"instance": instance.to_dict()}

    @app.post("/api/verdicts")
    async def api_verdicts(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return _error(400, "BadRequest", "body is not JSON")
        if not isinstance(payload, dict):
            return _error(400, "BadRequest", "body must be a JSON object")
        try:
            verdict = ReviewVerdict.from_dict(payload)
        except KeyError as exc:
            return _error(400, "BadRequest", f"missing field {exc.args[0]!r}")
        except ValueError as exc:
            return _error(400, "BadRequest", str(exc))
        try:
            aggregate = store.submit_verdict(verdict)
        except UnknownInstance:
            return _error(404, "UnknownInstance",
                          f"no instance {verdict.instance_id!r}")
        return aggregate.to_dict()

    @app.get("/api/agreement")
    def api_agreement(question: Optional[str] = None):
        if question is None or question not in QUESTIONS:
            return _error(400, "BadRequest",
                          "?question= must be one of " + ", ".join(QUESTIONS))
        counts, n_complete, incomplete = store.agreement_histogram(question)
        return {
            "question": question,
            "counts": {str(level): counts[level] for level in sorted(counts)},
            "n_complete": n_complete,
            "warning_incomplete": incomplete,
        }

    @app.get("/api/export")
    def api_export():
        accepted, rate, n_total = store.export_benchmark()
        return {
            "accepted": [inst.to_dict() for inst in accepted],
            "rate": rate,
            "n_total": n_total,
        }

    @app.get("/api/instances/{instance_id}")
    def api_instance(instance_id: str):
        try:
            instance = store.get_instance(instance_id)
        except UnknownInstance:
            return _error(404, "UnknownInstance",
                          f"no instance {instance_id!r}")
        return instance.to_dict()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _PLACEHOLDER_PAGE

    return app
