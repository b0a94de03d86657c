"""Shared domain types and the fine-tuning target-string grammar.

Everything here is an immutable value type; instances are safe to share
between worker threads.  The JSONL field names and the target-string format
are external contracts consumed by the CLI, the evaluation harness and the
review service -- change them only with a migration plan.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


# ---------------------------------------------------------------------------
# errors

class BoxError(ValueError):
    pass


class OutOfRange(BoxError):
    """A box coordinate falls outside the allowed range."""


class Degenerate(BoxError):
    """A box has zero or negative extent along some axis."""


class TargetFormatError(ValueError):
    pass


class SeparatorInField(TargetFormatError):
    """A target-string field contains the reserved ' | ' delimiter."""


class MalformedSeparators(TargetFormatError):
    """A target string does not split into exactly three fields."""


class MalformedBox(TargetFormatError):
    """The box section of a target string violates the box grammar."""


# ---------------------------------------------------------------------------
# enums

class MisalignmentType(str, Enum):
    OBJECT = "object"
    ATTRIBUTE = "attribute"
    ACTION = "action"
    RELATION = "relation"


class ImageKind(str, Enum):
    NATURAL = "natural"
    SYNTHETIC = "synthetic"


class CaptionProvenance(str, Enum):
    HUMAN_ANNOTATED = "human_annotated"
    MODEL_PREDICTED = "model_predicted"
    NARRATIVE_SUMMARIZED = "narrative_summarized"


class Verdict(str, Enum):
    KEEP = "keep"
    REJECT_CONTRADICTION = "reject_contradiction"
    REJECT_FEEDBACK = "reject_feedback"
    REJECT_BOTH = "reject_both"


class ReviewStatus(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


# Display names used in prompt tails and LLM output ("MISALIGNMENT TYPE:" lines).
TYPE_DISPLAY = {
    MisalignmentType.OBJECT: "Object/Noun",
    MisalignmentType.ATTRIBUTE: "Attribute/Adjective",
    MisalignmentType.ACTION: "Action/Verb",
    MisalignmentType.RELATION: "Relation",
}


# ---------------------------------------------------------------------------
# images and pairs

@dataclass(frozen=True)
class ImageRef:
    uri: str
    width_px: int
    height_px: int
    kind: ImageKind = ImageKind.NATURAL

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"image extent must be positive, got "
                             f"{self.width_px}x{self.height_px}")

    def to_dict(self) -> dict:
        return {
            "uri": self.uri,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(uri=d["uri"], width_px=d["width_px"],
                   height_px=d["height_px"], kind=ImageKind(d["kind"]))


@dataclass(frozen=True)
class AlignedPair:
    id: str
    image: ImageRef
    caption: str
    caption_provenance: CaptionProvenance
    source_dataset: str

    def __post_init__(self):
        if not self.caption.strip():
            raise ValueError("caption must be non-empty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image.to_dict(),
            "caption": self.caption,
            "caption_provenance": self.caption_provenance.value,
            "source_dataset": self.source_dataset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlignedPair":
        return cls(
            id=d["id"],
            image=ImageRef.from_dict(d["image"]),
            caption=d["caption"],
            caption_provenance=CaptionProvenance(d["caption_provenance"]),
            source_dataset=d["source_dataset"],
        )


# ---------------------------------------------------------------------------
# boxes

NORM_EXTENT = 1000


@dataclass(frozen=True)
class NormBox:
    """Closed rectangle [x1,x2]x[y1,y2] on the 0..1000 integer grid.

    Area is (x2-x1)*(y2-y1); zero-area boxes cannot be constructed.
    """
    x1: int
    y1: int
    x2: int
    y2: int

    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]


def make_norm_box(x1: int, y1: int, x2: int, y2: int) -> NormBox:
    for v in (x1, y1, x2, y2):
        if not isinstance(v, int) or isinstance(v, bool):
            raise OutOfRange(f"coordinates must be integers, got {v!r}")
        if v < 0 or v > NORM_EXTENT:
            raise OutOfRange(f"coordinate {v} outside [0, {NORM_EXTENT}]")
    if x1 >= x2 or y1 >= y2:
        raise Degenerate(f"degenerate box ({x1},{y1},{x2},{y2})")
    return NormBox(x1, y1, x2, y2)


@dataclass(frozen=True)
class PixelBox:
    """Raw grounding output in pixel space, with detector confidence."""
    x1: float
    y1: float
    x2: float
    y2: float
    confidence: float = 1.0


@dataclass(frozen=True)
class LabeledBox:
    box: NormBox
    label: str

    def __post_init__(self):
        if not self.label:
            raise ValueError("box label must be non-empty")


@dataclass(frozen=True)
class VisualAnnotation:
    """Ordered, non-empty list of labeled normalized boxes."""
    boxes: tuple

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("VisualAnnotation requires at least one box")
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def to_list(self) -> list:
        return [{"box": lb.box.as_list(), "label": lb.label} for lb in self.boxes]

    @classmethod
    def from_list(cls, items: list) -> "VisualAnnotation":
        boxes = []
        for item in items:
            x1, y1, x2, y2 = item["box"]
            boxes.append(LabeledBox(make_norm_box(x1, y1, x2, y2), item["label"]))
        return cls(tuple(boxes))


# ---------------------------------------------------------------------------
# generation and validation records

@dataclass(frozen=True)
class GenerationRecord:
    """Parsed output of one misalignment-generation call."""
    contradiction_caption: str
    feedback: str
    caption_cue: str          # "(CAPTION: ...)" content -- actual image content
    contradiction_cue: str    # "(CONTRADICTION: ...)" content -- offending phrase
    misalignment_type: MisalignmentType
    raw_llm_text: str


DEFAULT_TAU_C = 0.25
DEFAULT_TAU_F = 0.75


def decide_verdict(contradiction_score: float, feedback_score: float,
                   tau_c: float = DEFAULT_TAU_C,
                   tau_f: float = DEFAULT_TAU_F) -> Verdict:
    """Keep/reject rule.  Strict comparisons on both thresholds; scores
    landing exactly on a threshold are rejected."""
    c_ok = contradiction_score < tau_c
    f_ok = feedback_score > tau_f
    if c_ok and f_ok:
        return Verdict.KEEP
    if not c_ok and f_ok:
        return Verdict.REJECT_CONTRADICTION
    if c_ok and not f_ok:
        return Verdict.REJECT_FEEDBACK
    return Verdict.REJECT_BOTH


@dataclass(frozen=True)
class ValidationScores:
    contradiction_score: float
    feedback_score: float
    verdict: Verdict

    @classmethod
    def from_scores(cls, contradiction_score: float, feedback_score: float,
                    tau_c: float = DEFAULT_TAU_C,
                    tau_f: float = DEFAULT_TAU_F) -> "ValidationScores":
        return cls(contradiction_score, feedback_score,
                   decide_verdict(contradiction_score, feedback_score,
                                  tau_c, tau_f))

    def to_dict(self) -> dict:
        # verdict is derived, not serialized
        return {
            "contradiction_score": self.contradiction_score,
            "feedback_score": self.feedback_score,
        }

    @classmethod
    def from_dict(cls, d: dict, tau_c: float = DEFAULT_TAU_C,
                  tau_f: float = DEFAULT_TAU_F) -> "ValidationScores":
        return cls.from_scores(d["contradiction_score"], d["feedback_score"],
                               tau_c, tau_f)


# ---------------------------------------------------------------------------
# dataset records

@dataclass(frozen=True)
class TrainingRecord:
    id: str
    source_dataset: str
    image: ImageRef
    positive_caption: str
    negative_caption: str
    misalignment_type: MisalignmentType
    feedback: str
    misalignment_in_text: str   # contradiction-side cue (offending phrase)
    visual: VisualAnnotation    # labels are image content (positive side)
    validation: ValidationScores

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_dataset": self.source_dataset,
            "image": self.image.to_dict(),
            "positive_caption": self.positive_caption,
            "negative_caption": self.negative_caption,
            "misalignment_type": self.misalignment_type.value,
            "feedback": self.feedback,
            "misalignment_in_text": self.misalignment_in_text,
            "visual": self.visual.to_list(),
            "validation": self.validation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingRecord":
        return cls(
            id=d["id"],
            source_dataset=d["source_dataset"],
            image=ImageRef.from_dict(d["image"]),
            positive_caption=d["positive_caption"],
            negative_caption=d["negative_caption"],
            misalignment_type=MisalignmentType(d["misalignment_type"]),
            feedback=d["feedback"],
            misalignment_in_text=d["misalignment_in_text"],
            visual=VisualAnnotation.from_list(d["visual"]),
            validation=ValidationScores.from_dict(d["validation"]),
        )


@dataclass(frozen=True)
class BenchmarkInstance:
    """One human-reviewable evaluation instance.

    For misaligned instances (alignment_label=False) the gt_* fields hold the
    expected feedback, the offending caption phrase, and the image-content
    boxes; aligned instances carry no gt_* fields at all.
    """
    id: str
    image: ImageRef
    caption: str
    alignment_label: bool
    gt_feedback: Optional[str] = None
    gt_misalignment_in_text: Optional[str] = None
    gt_visual: Optional[VisualAnnotation] = None
    review_status: ReviewStatus = ReviewStatus.PENDING

    def __post_init__(self):
        if self.alignment_label:
            if (self.gt_feedback is not None
                    or self.gt_misalignment_in_text is not None
                    or self.gt_visual is not None):
                raise ValueError("aligned instances must not carry gt_* fields")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "image": self.image.to_dict(),
            "caption": self.caption,
            "alignment_label": self.alignment_label,
        }
        if self.gt_feedback is not None:
            d["gt_feedback"] = self.gt_feedback
        if self.gt_misalignment_in_text is not None:
            d["gt_misalignment_in_text"] = self.gt_misalignment_in_text
        if self.gt_visual is not None:
            d["gt_visual"] = self.gt_visual.to_list()
        d["review_status"] = self.review_status.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkInstance":
        gt_visual = d.get("gt_visual")
        return cls(
            id=d["id"],
            image=ImageRef.from_dict(d["image"]),
            caption=d["caption"],
            alignment_label=d["alignment_label"],
            gt_feedback=d.get("gt_feedback"),
            gt_misalignment_in_text=d.get("gt_misalignment_in_text"),
            gt_visual=VisualAnnotation.from_list(gt_visual) if gt_visual else None,
            review_status=ReviewStatus(d.get("review_status", "pending")),
        )

    def with_status(self, status: ReviewStatus) -> "BenchmarkInstance":
        return BenchmarkInstance(
            id=self.id, image=self.image, caption=self.caption,
            alignment_label=self.alignment_label, gt_feedback=self.gt_feedback,
            gt_misalignment_in_text=self.gt_misalignment_in_text,
            gt_visual=self.gt_visual, review_status=status)


# ---------------------------------------------------------------------------
# target-string grammar
#
#   "<feedback> | <text cue> | [x1, y1, x2, y2] label and [x1, ...] label"
#
# ' | ' is a reserved delimiter and is rejected in field content rather than
# escaped.  Labels may contain spaces (even the word "and") but never '[',
# which is what keeps the entry grammar regular.

SEPARATOR = " | "
_ENTRY_RE = re.compile(r"^\[(\d+), (\d+), (\d+), (\d+)\] ([^\[]+)$")
_ENTRY_SPLIT_RE = re.compile(r" and (?=\[)")


def _check_field(name: str, value: str) -> None:
    if not value:
        raise ValueError(f"{name} must be non-empty")
    if SEPARATOR in value:
        raise SeparatorInField(f"{name} contains the reserved {SEPARATOR!r}")


def render_box_string(visual: VisualAnnotation) -> str:
    parts = []
    for lb in visual.boxes:
        _check_field("label", lb.label)
        if "[" in lb.label:
            raise MalformedBox(f"label may not contain '[': {lb.label!r}")
        b = lb.box
        parts.append(f"[{b.x1}, {b.y1}, {b.x2}, {b.y2}] {lb.label}")
    return " and ".join(parts)


def render_target(feedback: str, text_cue: str, visual: VisualAnnotation) -> str:
    _check_field("feedback", feedback)
    _check_field("text_cue", text_cue)
    return SEPARATOR.join([feedback, text_cue, render_box_string(visual)])


def parse_box_string(s: str) -> VisualAnnotation:
    entries = _ENTRY_SPLIT_RE.split(s)
    boxes = []
    for entry in entries:
        m = _ENTRY_RE.match(entry)
        if not m:
            raise MalformedBox(f"bad box entry: {entry!r}")
        x1, y1, x2, y2 = (int(g) for g in m.groups()[:4])
        label = m.group(5)
        boxes.append(LabeledBox(make_norm_box(x1, y1, x2, y2), label))
    return VisualAnnotation(tuple(boxes))


def parse_target(s: str):
    """Inverse of render_target.  Returns (feedback, text_cue, VisualAnnotation)."""
    parts = s.split(SEPARATOR)
    if len(parts) != 3:
        raise MalformedSeparators(
            f"expected exactly 2 {SEPARATOR!r} separators, found {len(parts) - 1}")
    feedback, text_cue, box_string = parts
    if not feedback or not text_cue:
        raise MalformedSeparators("empty field")
    return feedback, text_cue, parse_box_string(box_string)
