"""Backend clients for the four external model roles (LLM, NLI, grounding,
VLM-under-test) plus deterministic in-process mocks.

Wire protocol, shared by every role:

    POST <endpoint>   {"role": ..., "inputs": {...}, "params": {...}}
    response          {"output": ..., "error": null | {"code", "message"}}

Role-specific inputs/outputs:

    llm        inputs {"prompt"}                 output {"text"}
    nli        inputs {"premise", "hypothesis"}  output {"entailment"}
    grounding  inputs {"image_uri", "label"}     output {"boxes": [{x1,y1,x2,y2,confidence}]}
    vlm        inputs {"image_uri", "question"}  output {"answer"}
    tagger     inputs {"caption"}                output {"tokens": [{text,pos,char_start,char_end}]}

Endpoint URLs can be overridden per role via MQ_LLM_URL, MQ_NLI_URL,
MQ_GROUND_URL, MQ_VLM_URL.  Mock backends are selected with mock:// URLs
(see build_backend).
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple

import requests

from .candidates import Pos, TaggedToken
from .core import ImageRef, PixelBox


class ClientError(RuntimeError):
    pass


class BackendUnavailable(ClientError):
    pass


class Timeout(ClientError):
    pass


class RateLimited(ClientError):
    pass


class NoDetection(ClientError):
    """Grounding produced no box for the label."""


class ScriptedFixtureMiss(ClientError):
    """A scripted mock was asked for an input it has no entry for."""


ROLE_ENV_VARS = {
    "llm": "MQ_LLM_URL",
    "nli": "MQ_NLI_URL",
    "grounding": "MQ_GROUND_URL",
    "vlm": "MQ_VLM_URL",
}

_ROLES = ("llm", "nli", "grounding", "vlm", "tagger")


@dataclass(frozen=True)
class BackendConfig:
    role: str
    endpoint_url: str
    auth_token: Optional[str] = None
    timeout_ms: int = 10_000
    max_in_flight: int = 4
    retries: int = 2

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown backend role {self.role!r}")
        if self.timeout_ms < 1:
            raise ValueError("timeout_ms must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.4
    max_tokens: int = 700
    top_p: float = 0.95
    top_k: int = 30

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens,
                "top_p": self.top_p, "top_k": self.top_k}


# ---------------------------------------------------------------------------
# backend protocols (spec op names)

class LlmBackend(Protocol):
    def complete_chat(self, prompt: str,
                      params: Optional[DecodingParams] = None) -> str: ...


class NliBackend(Protocol):
    def score_entailment(self, premise: str, hypothesis: str) -> float: ...


class GroundingBackend(Protocol):
    def detect_grounded_boxes(self, image: ImageRef, label: str) -> List[PixelBox]: ...


class VlmBackend(Protocol):
    def query_vlm(self, image: ImageRef, question: str) -> str: ...


# ---------------------------------------------------------------------------
# HTTP clients

def _requests_transport(url: str, payload: dict, timeout_s: float,
                        headers: dict) -> Tuple[int, dict]:
    resp = requests.post(url, json=payload, timeout=timeout_s, headers=headers)
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


class HttpClient:
    """Shared request machinery: bounded concurrency, retries with
    exponential backoff on transient failures (connect errors, 5xx, 429,
    timeouts)."""

    def __init__(self, config: BackendConfig, transport=None,
                 backoff_base_s: float = 0.1):
        self.config = config
        self._transport = transport or _requests_transport
        self._backoff_base_s = backoff_base_s
        self._sem = threading.BoundedSemaphore(config.max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        return headers

    def _call(self, inputs: dict, params: Optional[dict] = None) -> dict:
        payload = {"role": self.config.role, "inputs": inputs,
                   "params": params or {}}
        attempts = self.config.retries + 1
        last_error: Optional[ClientError] = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self._backoff_base_s * (2 ** (attempt - 1)))
            with self._sem:
                try:
                    status, body = self._transport(
                        self.config.endpoint_url, payload,
                        self.config.timeout_ms / 1000.0, self._headers())
                except requests.Timeout:
                    last_error = Timeout(f"{self.config.role} backend timed out")
                    continue
                except requests.RequestException as exc:
                    last_error = BackendUnavailable(
                        f"{self.config.role} backend unreachable: {exc}")
                    continue
            if status == 429:
                last_error = RateLimited(f"{self.config.role} backend rate limited")
                continue
            if status >= 500:
                last_error = BackendUnavailable(
                    f"{self.config.role} backend error HTTP {status}")
                continue
            if status != 200:
                raise BackendUnavailable(
                    f"{self.config.role} backend HTTP {status}: {body}")
            err = body.get("error")
            if err:
                code = err.get("code", "")
                if code == "NoDetection":
                    raise NoDetection(err.get("message", "no detection"))
                if code == "RateLimited":
                    last_error = RateLimited(err.get("message", "rate limited"))
                    continue
                raise BackendUnavailable(f"{self.config.role} backend error: {err}")
            output = body.get("output")
            if output is None:
                raise BackendUnavailable(
                    f"{self.config.role} backend returned no output")
            return output
        raise last_error if last_error is not None else BackendUnavailable("no attempts made")


class HttpLlmClient(HttpClient):
    def complete_chat(self, prompt: str,
                      params: Optional[DecodingParams] = None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        out = self._call({"prompt": prompt},
                         (params or DecodingParams()).to_dict())
        return out["text"]


class HttpNliClient(HttpClient):
    def score_entailment(self, premise: str, hypothesis: str) -> float:
        if not premise or not hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")
        out = self._call({"premise": premise, "hypothesis": hypothesis})
        return float(out["entailment"])


class HttpGroundingClient(HttpClient):
    def detect_grounded_boxes(self, image: ImageRef, label: str) -> List[PixelBox]:
        if not label:
            raise ValueError("label must be non-empty")
        out = self._call({"image_uri": image.uri, "label": label})
        boxes = [PixelBox(b["x1"], b["y1"], b["x2"], b["y2"], b["confidence"])
                 for b in out.get("boxes", [])]
        if not boxes:
            raise NoDetection(f"no detection for label {label!r}")
        return boxes


class HttpVlmClient(HttpClient):
    def query_vlm(self, image: ImageRef, question: str) -> str:
        if not question:
            raise ValueError("question must be non-empty")
        out = self._call({"image_uri": image.uri, "question": question})
        return out["answer"]


class HttpTaggerClient(HttpClient):
    def tag(self, caption: str) -> List[TaggedToken]:
        out = self._call({"caption": caption})
        return [TaggedToken(t["text"], Pos(t["pos"]),
                            t["char_start"], t["char_end"])
                for t in out["tokens"]]


# ---------------------------------------------------------------------------
# deterministic mocks

def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockLlm:
    """Fixture-table completion backend.

    Completions are keyed by sha256(prompt).  Unregistered prompts produce
    the fallback template rendered with the digest prefix -- deliberately NOT
    parseable as a generation, so unscripted prompts surface as parse
    failures instead of silently fabricating records.
    """

    FALLBACK = "UNSCRIPTED RESPONSE FOR PROMPT {digest}"

    def __init__(self, fixtures: Optional[Dict[str, str]] = None,
                 fallback: Optional[str] = None):
        self._fixtures = dict(fixtures or {})
        self._fallback = fallback if fallback is not None else self.FALLBACK

    def register(self, prompt: str, completion: str) -> None:
        self._fixtures[prompt_digest(prompt)] = completion

    def register_digest(self, digest: str, completion: str) -> None:
        self._fixtures[digest] = completion

    def complete_chat(self, prompt: str,
                      params: Optional[DecodingParams] = None) -> str:
        digest = prompt_digest(prompt)
        if digest in self._fixtures:
            return self._fixtures[digest]
        return self._fallback.format(digest=digest[:12])


def _normalize_text(s: str) -> str:
    return " ".join(s.lower().split())


class MockNli:
    """Deterministic entailment stand-in.

    Contract: score = Jaccard similarity of lowercase token sets, except 1.0
    when the whitespace-normalized lowercase strings are equal.
    """

    def score_entailment(self, premise: str, hypothesis: str) -> float:
        if not premise or not hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")
        if _normalize_text(premise) == _normalize_text(hypothesis):
            return 1.0
        a = set(premise.lower().split())
        b = set(hypothesis.lower().split())
        union = a | b
        if not union:
            return 0.0
        return len(a & b) / len(union)


class ScriptedNli:
    """Exact-lookup entailment table for engineered pipeline fixtures."""

    def __init__(self, pairs: Optional[Dict[Tuple[str, str], float]] = None,
                 default: Optional[float] = None):
        self._pairs = dict(pairs or {})
        self._default = default

    def register(self, premise: str, hypothesis: str, score: float) -> None:
        self._pairs[(premise, hypothesis)] = score

    def score_entailment(self, premise: str, hypothesis: str) -> float:
        key = (premise, hypothesis)
        if key in self._pairs:
            return self._pairs[key]
        if self._default is not None:
            return self._default
        raise ScriptedFixtureMiss(
            f"no scripted NLI score for hypothesis {hypothesis[:60]!r}")


class MockGrounding:
    """Fixture-table grounding backend keyed by (image uri, label)."""

    def __init__(self, fixtures: Optional[Dict[Tuple[str, str], List[PixelBox]]] = None):
        self._fixtures = dict(fixtures or {})

    def register(self, image_uri: str, label: str, boxes: List[PixelBox]) -> None:
        self._fixtures[(image_uri, label)] = list(boxes)

    def detect_grounded_boxes(self, image: ImageRef, label: str) -> List[PixelBox]:
        if not label:
            raise ValueError("label must be non-empty")
        boxes = self._fixtures.get((image.uri, label))
        if not boxes:
            raise NoDetection(f"no fixture boxes for ({image.uri!r}, {label!r})")
        return list(boxes)


class MockVlm:
    """Scripted per-(image, question) answers for harness tests."""

    def __init__(self, script: Optional[Dict[Tuple[str, str], str]] = None,
                 default: Optional[str] = None):
        self._script = dict(script or {})
        self._default = default

    def register(self, image_uri: str, question: str, answer: str) -> None:
        self._script[(image_uri, question)] = answer

    def query_vlm(self, image: ImageRef, question: str) -> str:
        if not question:
            raise ValueError("question must be non-empty")
        key = (image.uri, question)
        if key in self._script:
            return self._script[key]
        if self._default is not None:
            return self._default
        raise ScriptedFixtureMiss(
            f"no scripted answer for ({image.uri!r}, {question[:60]!r})")


# ---------------------------------------------------------------------------
# fixture files + factory

def load_llm_fixtures(path: Path) -> MockLlm:
    data = json.loads(Path(path).read_text("utf-8"))
    mock = MockLlm(fallback=data.get("fallback"))
    for entry in data.get("completions", []):
        if "sha256" in entry:
            mock.register_digest(entry["sha256"], entry["completion"])
        else:
            mock.register(entry["prompt"], entry["completion"])
    return mock


def load_nli_fixtures(path: Path) -> ScriptedNli:
    data = json.loads(Path(path).read_text("utf-8"))
    mock = ScriptedNli(default=data.get("default"))
    for entry in data.get("pairs", []):
        mock.register(entry["premise"], entry["hypothesis"], entry["score"])
    return mock


def load_grounding_fixtures(path: Path) -> MockGrounding:
    data = json.loads(Path(path).read_text("utf-8"))
    mock = MockGrounding()
    for entry in data.get("detections", []):
        boxes = [PixelBox(b["x1"], b["y1"], b["x2"], b["y2"],
                          b.get("confidence", 1.0))
                 for b in entry["boxes"]]
        mock.register(entry["image_uri"], entry["label"], boxes)
    return mock


def load_vlm_fixtures(path: Path) -> MockVlm:
    data = json.loads(Path(path).read_text("utf-8"))
    mock = MockVlm(default=data.get("default"))
    for entry in data.get("answers", []):
        mock.register(entry["image_uri"], entry["question"], entry["answer"])
    return mock


_FIXTURE_LOADERS = {
    "llm": load_llm_fixtures,
    "nli": load_nli_fixtures,
    "grounding": load_grounding_fixtures,
    "vlm": load_vlm_fixtures,
}

_HTTP_CLIENTS = {
    "llm": HttpLlmClient,
    "nli": HttpNliClient,
    "grounding": HttpGroundingClient,
    "vlm": HttpVlmClient,
    "tagger": HttpTaggerClient,
}


def build_backend(config: BackendConfig, base_dir: Optional[Path] = None,
                  transport=None):
    """Instantiate the backend a config describes.

    mock://jaccard        -> MockNli (nli role only)
    mock://<path.json>    -> fixture-table mock, path relative to base_dir
    anything else         -> HTTP client; MQ_*_URL env vars override the URL
    """
    url = config.endpoint_url
    env_var = ROLE_ENV_VARS.get(config.role)
    if env_var and os.environ.get(env_var):
        url = os.environ[env_var]
        config = BackendConfig(config.role, url, config.auth_token,
                               config.timeout_ms, config.max_in_flight,
                               config.retries)
    if url.startswith("mock://"):
        spec = url[len("mock://"):]
        if spec == "jaccard":
            if config.role != "nli":
                raise ValueError("mock://jaccard is only valid for the nli role")
            return MockNli()
        loader = _FIXTURE_LOADERS.get(config.role)
        if loader is None:
            raise ValueError(f"no mock fixture loader for role {config.role!r}")
        path = Path(spec)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise FileNotFoundError(f"mock fixture file not found: {path}")
        return loader(path)
    cls = _HTTP_CLIENTS[config.role]
    return cls(config, transport=transport)
