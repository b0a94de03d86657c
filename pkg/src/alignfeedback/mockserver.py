"""HTTP front-end for the deterministic mock backends.

Exposes the standard wire protocol — POST ``{"role","inputs",
"params"}`` returning ``{"output":…, "error":null|{code,message}}`` — over
the in-process fixture mocks, so runs configured with real HTTP endpoints
(or env-var URL overrides) can be exercised offline.  One server handles
every role; requests are dispatched on the ``role`` field of the payload,
so the same base URL can be configured for all of them.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .candidates import default_tagger
from .clients import (
    MockNli,
    NoDetection,
    ScriptedFixtureMiss,
    load_grounding_fixtures,
    load_llm_fixtures,
    load_nli_fixtures,
    load_vlm_fixtures,
)
from .core import ImageKind, ImageRef


def _image_from_uri(uri: str) -> ImageRef:
    # Fixture mocks key on the URI alone; dimensions are not on the wire.
    return ImageRef(uri=uri, width_px=1, height_px=1, kind=ImageKind.NATURAL)


class MockDispatcher:
    """Pure request -> response mapping over a role->backend table."""

    def __init__(self, backends: dict):
        self.backends = dict(backends)

    def dispatch(self, payload: dict) -> dict:
        try:
            return {"output": self._output(payload), "error": None}
        except NoDetection as exc:
            return _error("NoDetection", str(exc))
        except ScriptedFixtureMiss as exc:
            return _error("ScriptedFixtureMiss", str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return _error("BadRequest", f"{type(exc).__name__}: {exc}")

    def _output(self, payload: dict) -> dict:
        role = payload.get("role")
        if role not in self.backends:
            raise ValueError(f"role {role!r} not served (have: "
                             f"{', '.join(sorted(self.backends)) or 'none'})")
        backend = self.backends[role]
        inputs = payload.get("inputs") or {}
        if role == "llm":
            return {"text": backend.complete_chat(inputs["prompt"])}
        if role == "nli":
            return {"entailment": backend.score_entailment(
                inputs["premise"], inputs["hypothesis"])}
        if role == "grounding":
            boxes = backend.detect_grounded_boxes(
                _image_from_uri(inputs["image_uri"]), inputs["label"])
            return {"boxes": [
                {"x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2,
                 "confidence": b.confidence}
                for b in boxes
            ]}
        if role == "vlm":
            return {"answer": backend.query_vlm(
                _image_from_uri(inputs["image_uri"]), inputs["question"])}
        if role == "tagger":
            return {"tokens": [
                {"text": t.text, "pos": t.pos.value,
                 "char_start": t.char_start, "char_end": t.char_end}
                for t in backend.tag(inputs["caption"])
            ]}
        raise ValueError(f"unhandled role {role!r}")


def _error(code: str, message: str) -> dict:
    return {"output": None, "error": {"code": code, "message": message}}


def build_mock_backends(*,
                        llm_fixtures: Optional[Path] = None,
                        nli_fixtures: Optional[Path] = None,
                        grounding_fixtures: Optional[Path] = None,
                        vlm_fixtures: Optional[Path] = None,
                        with_tagger: bool = True) -> dict:
    """Assemble the role table for the server.

    NLI defaults to the Jaccard mock when no fixture file is given; the
    tagger role serves the built-in lexicon tagger.  LLM / grounding / VLM
    are only served when a fixture file is supplied.
    """
    backends = {}
    if llm_fixtures is not None:
        backends["llm"] = load_llm_fixtures(Path(llm_fixtures))
    backends["nli"] = (MockNli() if nli_fixtures is None
                       else load_nli_fixtures(Path(nli_fixtures)))
    if grounding_fixtures is not None:
        backends["grounding"] = load_grounding_fixtures(Path(grounding_fixtures))
    if vlm_fixtures is not None:
        backends["vlm"] = load_vlm_fixtures(Path(vlm_fixtures))
    if with_tagger:
        backends["tagger"] = default_tagger()
    return backends


def create_mock_app(backends: dict) -> FastAPI:
    app = FastAPI(title="alignfeedback mock backends")
    dispatcher = MockDispatcher(backends)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "roles": sorted(dispatcher.backends)}

    @app.post("/{_path:path}")
    async def handle(request: Request, _path: str):
        try:
            payload = await request.json()
        except Exception:
            return JSONResponse(_error("BadRequest", "body is not JSON"),
                                status_code=400)
        if not isinstance(payload, dict):
            return JSONResponse(_error("BadRequest", "body must be an object"),
                                status_code=400)
        return JSONResponse(dispatcher.dispatch(payload))

    return app
