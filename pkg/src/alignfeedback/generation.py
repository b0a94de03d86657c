"""Few-shot prompt construction, LLM invocation, and response parsing.

Prompt templates ship as data files under ``data/prompts/``.  Each file has
three sections delimited by the lines ``--CONTEXT--``, ``--FEWSHOT--`` and
``--TAIL--``; anything before ``--CONTEXT--`` is a free-form preamble the
loader ignores.  A prompt is the byte-exact concatenation of the context
block, the few-shot block, and the rendered tail.  Tails substitute
``{caption}`` (and ``{category}`` for misalignment prompts, ``{feedbacks}``
for the feedback-merge prompt) via literal replacement, so captions may
contain any characters including braces.

Expected completion grammar for misalignment generation::

    CONTRADICTION: <contradictory caption>
    MISALIGNMENT: <feedback with (CAPTION: ...) and (CONTRADICTION: ...) cues>
    MISALIGNMENT TYPE: <one of Object/Noun, Attribute/Adjective, Action/Verb, Relation>

An echoed ``CAPTION:`` line before the three keys is tolerated.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence, Union

from .candidates import MisalignmentCandidate
from .clients import DecodingParams, LlmBackend
from .core import (
    TYPE_DISPLAY,
    AlignedPair,
    GenerationRecord,
    MisalignmentType,
)

# Non-category template roles.
SUMMARIZE = "summarize"
SEETRUE_MERGE = "seetrue_merge"

DEFAULT_RETRIES = 2

_CONTEXT_DELIM = "--CONTEXT--"
_FEWSHOT_DELIM = "--FEWSHOT--"
_TAIL_DELIM = "--TAIL--"

_DISPLAY_TO_TYPE = {v: k for k, v in TYPE_DISPLAY.items()}

_CAPTION_CUE_RE = re.compile(r"\(CAPTION:\s*([^)]*)\)")
_CONTRADICTION_CUE_RE = re.compile(r"\(CONTRADICTION:\s*([^)]*)\)")
_PARENTHETICAL_RE = re.compile(r"\s*\([^()]*\)")


class TemplateError(Exception):
    """Problem with a prompt-template file or lookup."""


class UnknownTemplate(TemplateError, LookupError):
    def __init__(self, dataset: str, category) -> None:
        self.dataset = dataset
        self.category = category
        super().__init__(f"no prompt template for ({dataset!r}, {_category_name(category)!r})")


class GenerationParseError(ValueError):
    """A completion did not follow the expected grammar."""


class MissingKey(GenerationParseError):
    def __init__(self, key: str) -> None:
        self.key = key
        super().__init__(f"completion lacks a {key}: line")


class MissingCue(GenerationParseError):
    def __init__(self, side: str) -> None:
        self.side = side
        super().__init__(f"MISALIGNMENT line lacks a ({side.upper()}: ...) cue")


class UnknownType(GenerationParseError):
    def __init__(self, value: str) -> None:
        self.value = value
        super().__init__(f"unrecognized MISALIGNMENT TYPE {value!r}")


class ParseFailed(Exception):
    """All parse attempts for one generation call were exhausted."""


class CategoryMismatch(Exception):
    """The completion's MISALIGNMENT TYPE differs from the requested category."""

    def __init__(self, requested: MisalignmentType, got: MisalignmentType) -> None:
        self.requested = requested
        self.got = got
        super().__init__(
            f"requested {TYPE_DISPLAY[requested]} but completion is typed {TYPE_DISPLAY[got]}"
        )


Category = Union[MisalignmentType, str]


def _category_name(category: Category) -> str:
    return category.value if isinstance(category, MisalignmentType) else str(category)


@dataclass(frozen=True)
class PromptTemplate:
    dataset: str
    category: Category
    context_block: str
    fewshot_block: str
    tail_format: str

    def __post_init__(self) -> None:
        if self.tail_format.count("{caption}") != 1:
            raise TemplateError(
                f"template ({self.dataset}, {_category_name(self.category)}): "
                "tail must contain {caption} exactly once"
            )
        if isinstance(self.category, MisalignmentType):
            if "Create a MISALIGNMENT of type: {category}" not in self.tail_format:
                raise TemplateError(
                    f"template ({self.dataset}, {self.category.value}): "
                    "misalignment tail must contain the category line"
                )


def parse_template_text(text: str) -> tuple[str, str, str]:
    """Split a template file's text into (context, fewshot, tail) blocks.

    Each returned block is newline-terminated so that plain concatenation
    reproduces the full prompt layout, including blank separator lines kept
    at the end of a section.
    """
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        if line == _CONTEXT_DELIM:
            current = "context"
            sections[current] = []
        elif line == _FEWSHOT_DELIM:
            current = "fewshot"
            sections[current] = []
        elif line == _TAIL_DELIM:
            current = "tail"
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        # lines before --CONTEXT-- are preamble: ignored
    missing = [name for name in ("context", "fewshot", "tail") if not sections.get(name)]
    if missing:
        raise TemplateError(f"template missing section(s): {', '.join(missing)}")
    return tuple("\n".join(sections[name]) + "\n" for name in ("context", "fewshot", "tail"))


# Data files whose names do not follow the ``<dataset>_<category>`` pattern.
_SPECIAL_FILES = {
    "narrative_summarize.txt": ("narrative", SUMMARIZE),
    "seetrue_merge.txt": ("seetrue", SEETRUE_MERGE),
}

_CATEGORY_SUFFIXES = {t.value: t for t in MisalignmentType}


def template_key_for_filename(name: str) -> tuple[str, Category]:
    if name in _SPECIAL_FILES:
        return _SPECIAL_FILES[name]
    stem = name[: -len(".txt")]
    dataset, _, suffix = stem.rpartition("_")
    if not dataset or suffix not in _CATEGORY_SUFFIXES:
        raise TemplateError(f"cannot derive (dataset, category) from file name {name!r}")
    return dataset, _CATEGORY_SUFFIXES[suffix]


class TemplateRegistry:
    """Lookup table from (dataset, category) to a loaded PromptTemplate."""

    def __init__(self, templates: dict[tuple[str, Category], PromptTemplate]) -> None:
        self._templates = dict(templates)

    def get(self, dataset: str, category: Category) -> PromptTemplate:
        try:
            return self._templates[(dataset, category)]
        except KeyError:
            raise UnknownTemplate(dataset, category) from None

    def has(self, dataset: str, category: Category) -> bool:
        return (dataset, category) in self._templates

    def datasets(self) -> set[str]:
        return {dataset for dataset, _ in self._templates}

    def __len__(self) -> int:
        return len(self._templates)


@lru_cache(maxsize=1)
def load_default_templates() -> TemplateRegistry:
    """Load every packaged template file into a registry."""
    root = resources.files("alignfeedback") / "data" / "prompts"
    templates: dict[tuple[str, Category], PromptTemplate] = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if not entry.name.endswith(".txt"):
            continue
        dataset, category = template_key_for_filename(entry.name)
        context, fewshot, tail = parse_template_text(entry.read_text(encoding="utf-8"))
        templates[(dataset, category)] = PromptTemplate(
            dataset=dataset,
            category=category,
            context_block=context,
            fewshot_block=fewshot,
            tail_format=tail,
        )
    return TemplateRegistry(templates)


def build_prompt(template: PromptTemplate, caption: str) -> str:
    """Render the full prompt for one caption.  Deterministic; byte-exact
    concatenation of context + few-shot + rendered tail."""
    tail = template.tail_format
    if "{feedbacks}" in tail:
        raise TemplateError(
            "template expects a feedback list; use merge_human_feedbacks()"
        )
    rendered = tail.replace("{caption}", caption)
    if isinstance(template.category, MisalignmentType):
        rendered = rendered.replace("{category}", TYPE_DISPLAY[template.category])
    return template.context_block + template.fewshot_block + rendered


def parse_misalignment_line(line: str) -> tuple[str, str, str]:
    """Extract (feedback, caption_cue, contradiction_cue) from one
    MISALIGNMENT line.  The first cue of each kind wins; the feedback is the
    line with every parenthetical (and the whitespace just before it)
    removed and remaining whitespace collapsed."""
    caption_m = _CAPTION_CUE_RE.search(line)
    if caption_m is None:
        raise MissingCue("caption")
    contradiction_m = _CONTRADICTION_CUE_RE.search(line)
    if contradiction_m is None:
        raise MissingCue("contradiction")
    feedback = _PARENTHETICAL_RE.sub("", line)
    feedback = re.sub(r"\s+", " ", feedback).strip()
    return feedback, caption_m.group(1).strip(), contradiction_m.group(1).strip()


def _find_keyed_line(raw: str, key: str) -> Optional[str]:
    """Return the text after ``key:`` on the first line that starts with it
    (case-sensitive).  ``MISALIGNMENT`` never matches ``MISALIGNMENT TYPE``
    because the trailing colon is part of the match."""
    prefix = key + ":"
    for line in raw.splitlines():
        stripped = line.strip()
        if stripped.startswith(prefix):
            return stripped[len(prefix):].strip()
    return None


def parse_generation(raw: str) -> GenerationRecord:
    """Parse one misalignment-generation completion.

    Keyed lines are matched case-sensitively, first occurrence wins, and an
    echoed ``CAPTION:`` line (some completions restate the input) is simply
    never matched by the three keys.
    """
    contradiction = _find_keyed_line(raw, "CONTRADICTION")
    if contradiction is None:
        raise MissingKey("CONTRADICTION")
    mis_line = _find_keyed_line(raw, "MISALIGNMENT")
    if mis_line is None:
        raise MissingKey("MISALIGNMENT")
    type_text = _find_keyed_line(raw, "MISALIGNMENT TYPE")
    if type_text is None:
        raise MissingKey("MISALIGNMENT TYPE")
    mis_type = _DISPLAY_TO_TYPE.get(type_text)
    if mis_type is None:
        raise UnknownType(type_text)
    feedback, caption_cue, contradiction_cue = parse_misalignment_line(mis_line)
    return GenerationRecord(
        contradiction_caption=contradiction,
        feedback=feedback,
        caption_cue=caption_cue,
        contradiction_cue=contradiction_cue,
        misalignment_type=mis_type,
        raw_llm_text=raw,
    )


def generate_misalignment(
    pair: AlignedPair,
    cand: MisalignmentCandidate,
    llm: LlmBackend,
    *,
    registry: Optional[TemplateRegistry] = None,
    params: Optional[DecodingParams] = None,
    retries: int = DEFAULT_RETRIES,
) -> GenerationRecord:
    """Build the (dataset, category) prompt, call the LLM, parse the result.

    Parse failures are retried with the same prompt up to ``retries`` extra
    attempts, then raised as ParseFailed.  A completion whose contradiction
    merely restates the input caption counts as a parse failure.  A
    completion typed with a different category than requested raises
    CategoryMismatch immediately.
    """
    registry = registry or load_default_templates()
    template = registry.get(pair.source_dataset, cand.category)
    prompt = build_prompt(template, pair.caption)
    params = params or DecodingParams()
    last_error: Optional[Exception] = None
    for _ in range(retries + 1):
        text = llm.complete_chat(prompt, params)
        try:
            record = parse_generation(text)
        except GenerationParseError as exc:
            last_error = exc
            continue
        if record.contradiction_caption.strip() == pair.caption.strip():
            last_error = GenerationParseError(
                "contradiction restates the input caption"
            )
            continue
        if record.misalignment_type is not cand.category:
            raise CategoryMismatch(cand.category, record.misalignment_type)
        return record
    raise ParseFailed(
        f"no parseable completion after {retries + 1} attempt(s): {last_error}"
    ) from last_error


def summarize_narrative(
    narrative: str,
    llm: LlmBackend,
    *,
    registry: Optional[TemplateRegistry] = None,
    params: Optional[DecodingParams] = None,
) -> str:
    """Condense a long-form narrative into a caption via the summarization
    prompt.  Returns the text after the final ``CAPTION:`` key, trimmed."""
    if not narrative.strip():
        raise ValueError("narrative must be non-empty")
    registry = registry or load_default_templates()
    template = registry.get("narrative", SUMMARIZE)
    prompt = build_prompt(template, narrative)
    text = llm.complete_chat(prompt, params or DecodingParams())
    idx = text.rfind("CAPTION:")
    if idx < 0:
        raise MissingKey("CAPTION")
    return text[idx + len("CAPTION:"):].strip()


def render_feedback_list(feedbacks: Sequence[Optional[str]]) -> str:
    """Render rater feedbacks as a bracketed list of double-quoted strings,
    with a bare ``NaN`` for each absent entry."""
    parts = [
        "NaN" if fb is None else json.dumps(fb, ensure_ascii=False)
        for fb in feedbacks
    ]
    return "[" + ", ".join(parts) + "]"


@dataclass(frozen=True)
class MergedFeedback:
    """Condensed multi-rater feedback with its two source cues."""
    feedback: str
    caption_cue: str
    contradiction_cue: str
    raw_llm_text: str


def merge_human_feedbacks(
    caption: str,
    feedbacks: Sequence[Optional[str]],
    llm: LlmBackend,
    *,
    registry: Optional[TemplateRegistry] = None,
    params: Optional[DecodingParams] = None,
) -> MergedFeedback:
    """Merge 1-3 rater feedback strings (None marks an absent rating) into a
    single feedback statement with caption/contradiction cues."""
    if not 1 <= len(feedbacks) <= 3:
        raise ValueError("expected between 1 and 3 feedback entries")
    if all(fb is None for fb in feedbacks):
        raise ValueError("at least one feedback entry must be present")
    registry = registry or load_default_templates()
    template = registry.get("seetrue", SEETRUE_MERGE)
    rendered_tail = (
        template.tail_format
        .replace("{caption}", caption)
        .replace("{feedbacks}", render_feedback_list(feedbacks))
    )
    prompt = template.context_block + template.fewshot_block + rendered_tail
    text = llm.complete_chat(prompt, params or DecodingParams())
    mis_line = _find_keyed_line(text, "MISALIGNMENT")
    if mis_line is None:
        raise MissingKey("MISALIGNMENT")
    feedback, caption_cue, contradiction_cue = parse_misalignment_line(mis_line)
    return MergedFeedback(
        feedback=feedback,
        caption_cue=caption_cue,
        contradiction_cue=contradiction_cue,
        raw_llm_text=text,
    )
