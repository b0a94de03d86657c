"""Pipeline configuration: a single YAML file with a fixed key schema.

Example::

    backends:
      llm:      {endpoint_url: "mock://fixtures/mocks/llm.json"}
      nli:      {endpoint_url: "mock://jaccard"}
      grounding: {endpoint_url: "mock://fixtures/mocks/grounding.json"}
      vlm:      {endpoint_url: "mock://fixtures/mocks/vlm.json"}
    thresholds: {tau_c: 0.25, tau_f: 0.75}
    decoding:   {temperature: 0.4, max_tokens: 700, top_p: 0.95, top_k: 30}
    sampling_seed: 7
    grounding:  {max_boxes: 1, min_conf: 0.35}
    queries:
      binary: "Does this image entail the description {text}?"
      feedback: "Describe the misalignments between the image and the text: {text}"
    concurrency: {workers: 1}
    generation: {parse_retries: 2}
    # templates_dir: prompts/   # optional override of the packaged templates

Every section is optional except ``backends`` entries needed by the command
being run.  Relative ``mock://`` fixture paths and ``templates_dir`` resolve
against the config file's directory.  Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .clients import BackendConfig, DecodingParams, build_backend
from .core import DEFAULT_TAU_C, DEFAULT_TAU_F
from .evaluation import EvalQueries
from .generation import (
    DEFAULT_RETRIES,
    PromptTemplate,
    TemplateRegistry,
    template_key_for_filename,
    load_default_templates,
    parse_template_text,
)
from .grounding import DEFAULT_MAX_BOXES, DEFAULT_MIN_CONF


class ConfigError(ValueError):
    """The configuration file is missing, malformed, or inconsistent."""


@dataclass
class PipelineConfig:
    backends: dict = field(default_factory=dict)
    tau_c: float = DEFAULT_TAU_C
    tau_f: float = DEFAULT_TAU_F
    decoding: DecodingParams = field(default_factory=DecodingParams)
    sampling_seed: int = 0
    grounding_max_boxes: int = DEFAULT_MAX_BOXES
    grounding_min_conf: float = DEFAULT_MIN_CONF
    queries: EvalQueries = field(default_factory=EvalQueries)
    workers: int = 1
    parse_retries: int = DEFAULT_RETRIES
    templates_dir: Optional[Path] = None
    base_dir: Path = field(default_factory=Path.cwd)

    def template_registry(self) -> TemplateRegistry:
        if self.templates_dir is None:
            return load_default_templates()
        return load_templates_from_dir(self.templates_dir)

    def backend(self, role: str, transport=None):
        """Instantiate the client for one role; ConfigError when absent."""
        if role not in self.backends:
            raise ConfigError(f"config declares no {role!r} backend")
        return build_backend(self.backends[role], base_dir=self.base_dir,
                             transport=transport)

    def has_backend(self, role: str) -> bool:
        return role in self.backends


def load_templates_from_dir(directory: Union[str, Path]) -> TemplateRegistry:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"templates_dir does not exist: {directory}")
    templates = {}
    for path in sorted(directory.glob("*.txt")):
        dataset, category = template_key_for_filename(path.name)
        context, fewshot, tail = parse_template_text(
            path.read_text(encoding="utf-8")
        )
        templates[(dataset, category)] = PromptTemplate(
            dataset=dataset, category=category,
            context_block=context, fewshot_block=fewshot, tail_format=tail,
        )
    if not templates:
        raise ConfigError(f"templates_dir contains no template files: {directory}")
    return TemplateRegistry(templates)


_TOP_LEVEL_KEYS = {
    "backends", "thresholds", "decoding", "sampling_seed", "grounding",
    "queries", "concurrency", "generation", "templates_dir",
}
_ROLE_KEYS = {"llm", "nli", "grounding", "vlm", "tagger"}
_BACKEND_KEYS = {"endpoint_url", "auth_token", "timeout_ms", "max_in_flight",
                 "retries"}


def _section(raw: dict, name: str, allowed: set) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) in {name!r}: {', '.join(sorted(unknown))}"
        )
    return value


def load_config(path: Union[str, Path]) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    base_dir = path.resolve().parent

    backends = {}
    backends_raw = raw.get("backends") or {}
    if not isinstance(backends_raw, dict):
        raise ConfigError("'backends' must be a mapping of role -> settings")
    for role, settings in backends_raw.items():
        if role not in _ROLE_KEYS:
            raise ConfigError(f"unknown backend role {role!r}")
        if not isinstance(settings, dict):
            raise ConfigError(f"backend {role!r} settings must be a mapping")
        unknown = set(settings) - _BACKEND_KEYS
        if unknown:
            raise ConfigError(
                f"unknown key(s) for backend {role!r}: {', '.join(sorted(unknown))}"
            )
        if "endpoint_url" not in settings:
            raise ConfigError(f"backend {role!r} needs an endpoint_url")
        try:
            backends[role] = BackendConfig(role=role, **settings)
        except ValueError as exc:
            raise ConfigError(f"backend {role!r}: {exc}") from None

    thresholds = _section(raw, "thresholds", {"tau_c", "tau_f"})
    decoding_raw = _section(raw, "decoding",
                            {"temperature", "max_tokens", "top_p", "top_k"})
    grounding_raw = _section(raw, "grounding", {"max_boxes", "min_conf"})
    queries_raw = _section(raw, "queries", {"binary", "feedback"})
    concurrency = _section(raw, "concurrency", {"workers"})
    generation_raw = _section(raw, "generation", {"parse_retries"})

    templates_dir = raw.get("templates_dir")
    if templates_dir is not None:
        templates_dir = Path(templates_dir)
        if not templates_dir.is_absolute():
            templates_dir = base_dir / templates_dir

    config = PipelineConfig(
        backends=backends,
        tau_c=float(thresholds.get("tau_c", DEFAULT_TAU_C)),
        tau_f=float(thresholds.get("tau_f", DEFAULT_TAU_F)),
        decoding=DecodingParams(**decoding_raw) if decoding_raw else DecodingParams(),
        sampling_seed=int(raw.get("sampling_seed", 0)),
        grounding_max_boxes=int(grounding_raw.get("max_boxes", DEFAULT_MAX_BOXES)),
        grounding_min_conf=float(grounding_raw.get("min_conf", DEFAULT_MIN_CONF)),
        queries=EvalQueries(
            binary=queries_raw.get("binary", EvalQueries.binary),
            feedback=queries_raw.get("feedback", EvalQueries.feedback),
        ),
        workers=int(concurrency.get("workers", 1)),
        parse_retries=int(generation_raw.get("parse_retries", DEFAULT_RETRIES)),
        templates_dir=templates_dir,
        base_dir=base_dir,
    )
    if config.workers < 1:
        raise ConfigError("concurrency.workers must be >= 1")
    if config.sampling_seed < 0:
        raise ConfigError("sampling_seed must be a non-negative integer")
    if not 0.0 <= config.tau_c <= 1.0 or not 0.0 <= config.tau_f <= 1.0:
        raise ConfigError("thresholds must lie in [0, 1]")
    # template files must exist and parse at load time
    config.template_registry()
    return config
