"""Manifest ingestion and JSONL persistence.

A manifest is a JSONL file whose first line is a header object::

    {"dataset_name": "coco", "caption_style": "human_multi"}

followed by one record object per line.  Records always carry ``id`` and
``image`` (uri/width_px/height_px/kind); depending on the caption style they
carry either ``captions`` (a non-empty list of strings) or ``narrative`` (a
single long-form string):

* ``human_multi`` — several human captions; the longest one is selected.
* ``predicted`` — exactly one model-written caption, taken as-is.
* ``localized_narrative`` — a narrative, condensed to a caption through the
  summarization prompt (needs an LLM backend).

Training records and benchmark instances persist as plain JSONL, one object
per line, in the schema fixed by their ``to_dict`` methods.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, Union

from .candidates import select_positive_caption
from .clients import LlmBackend
from .core import (
    AlignedPair,
    BenchmarkInstance,
    CaptionProvenance,
    ImageRef,
    TrainingRecord,
)
from .generation import TemplateRegistry, summarize_narrative


class SchemaError(ValueError):
    """A JSONL line does not satisfy the expected schema."""

    def __init__(self, line: int, message: str) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class CaptionStyle(str, Enum):
    HUMAN_MULTI = "human_multi"
    PREDICTED = "predicted"
    LOCALIZED_NARRATIVE = "localized_narrative"


_STYLE_PROVENANCE = {
    CaptionStyle.HUMAN_MULTI: CaptionProvenance.HUMAN_ANNOTATED,
    CaptionStyle.PREDICTED: CaptionProvenance.MODEL_PREDICTED,
    CaptionStyle.LOCALIZED_NARRATIVE: CaptionProvenance.NARRATIVE_SUMMARIZED,
}


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image: ImageRef
    captions: Optional[tuple] = None
    narrative: Optional[str] = None
    line: int = 0


@dataclass(frozen=True)
class Manifest:
    dataset_name: str
    caption_style: CaptionStyle
    records: tuple

    def __len__(self) -> int:
        return len(self.records)


def _parse_json_line(line: str, lineno: int) -> dict:
    try:
        value = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(value, dict):
        raise SchemaError(lineno, "expected a JSON object")
    return value


def _require(d: dict, key: str, lineno: int):
    if key not in d:
        raise SchemaError(lineno, f"missing required field {key!r}")
    return d[key]


def load_manifest(path: Union[str, Path]) -> Manifest:
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        lines = [ln for ln in (raw.rstrip("\n") for raw in f)]
    # skip trailing blank lines, keep line numbers 1-based and stable
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not numbered:
        raise SchemaError(1, "empty manifest")
    header_no, header_line = numbered[0]
    header = _parse_json_line(header_line, header_no)
    dataset_name = _require(header, "dataset_name", header_no)
    style_raw = _require(header, "caption_style", header_no)
    try:
        style = CaptionStyle(style_raw)
    except ValueError:
        raise SchemaError(header_no, f"unknown caption_style {style_raw!r}") from None

    records = []
    for lineno, line in numbered[1:]:
        d = _parse_json_line(line, lineno)
        rec_id = _require(d, "id", lineno)
        image_d = _require(d, "image", lineno)
        try:
            image = ImageRef.from_dict(image_d)
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(lineno, f"bad image object: {exc}") from None
        if style is CaptionStyle.LOCALIZED_NARRATIVE:
            narrative = _require(d, "narrative", lineno)
            if not isinstance(narrative, str) or not narrative.strip():
                raise SchemaError(lineno, "narrative must be a non-empty string")
            records.append(ManifestRecord(id=rec_id, image=image,
                                          narrative=narrative, line=lineno))
        else:
            captions = _require(d, "captions", lineno)
            if (not isinstance(captions, list) or not captions
                    or not all(isinstance(c, str) and c.strip() for c in captions)):
                raise SchemaError(
                    lineno, "captions must be a non-empty list of non-empty strings"
                )
            if style is CaptionStyle.PREDICTED and len(captions) != 1:
                raise SchemaError(
                    lineno, f"predicted style expects exactly one caption, got {len(captions)}"
                )
            records.append(ManifestRecord(id=rec_id, image=image,
                                          captions=tuple(captions), line=lineno))
    return Manifest(dataset_name=dataset_name, caption_style=style,
                    records=tuple(records))


def ingest(manifest_path: Union[str, Path],
           llm: Optional[LlmBackend] = None,
           registry: Optional[TemplateRegistry] = None) -> list:
    """Turn a manifest into AlignedPair values, resolving each record's
    caption according to the manifest's caption style."""
    manifest = load_manifest(manifest_path)
    provenance = _STYLE_PROVENANCE[manifest.caption_style]
    pairs = []
    for record in manifest.records:
        if manifest.caption_style is CaptionStyle.LOCALIZED_NARRATIVE:
            if llm is None:
                raise ValueError(
                    "localized_narrative manifests require an LLM backend"
                )
            caption = summarize_narrative(record.narrative, llm, registry=registry)
        elif manifest.caption_style is CaptionStyle.HUMAN_MULTI:
            caption = select_positive_caption(list(record.captions))
        else:
            caption = record.captions[0]
        pairs.append(AlignedPair(
            id=record.id,
            image=record.image,
            caption=caption,
            caption_provenance=provenance,
            source_dataset=manifest.dataset_name,
        ))
    return pairs


# ---------------------------------------------------------------------------
# JSONL persistence

def write_jsonl(rows: Iterable[dict], path: Union[str, Path]) -> int:
    """Write one JSON object per line; returns the number of lines."""
    path = Path(path)
    n = 0
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False))
            f.write("\n")
            n += 1
    return n


def read_jsonl(path: Union[str, Path],
               parse: Callable[[dict], object]) -> list:
    """Read JSONL applying ``parse`` per line; schema problems surface as
    SchemaError with the 1-based line number."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            d = _parse_json_line(line, lineno)
            try:
                out.append(parse(d))
            except (KeyError, ValueError, TypeError) as exc:
                raise SchemaError(lineno, str(exc)) from exc
    return out


def write_training_records(records: Sequence[TrainingRecord],
                           path: Union[str, Path]) -> int:
    return write_jsonl((r.to_dict() for r in records), path)


def read_training_records(path: Union[str, Path]) -> list:
    return read_jsonl(path, TrainingRecord.from_dict)


def write_benchmark_instances(instances: Sequence[BenchmarkInstance],
                              path: Union[str, Path]) -> int:
    return write_jsonl((i.to_dict() for i in instances), path)


def read_benchmark_instances(path: Union[str, Path]) -> list:
    return read_jsonl(path, BenchmarkInstance.from_dict)


def iter_jsonl_dicts(path: Union[str, Path]) -> Iterator[dict]:
    """Raw dict-per-line iterator with line-numbered schema errors."""
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            yield _parse_json_line(line, lineno)
