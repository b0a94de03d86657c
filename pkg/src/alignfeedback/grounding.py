"""Grounding of textual cues into normalized bounding boxes.

Pixel-space detections from a grounding backend are filtered by confidence,
truncated, and normalized onto the 0-1000 coordinate system with
round-half-up.  If rounding collapses a side of a box, the far edge is
expanded by one unit; when that is impossible (already at the extent) the
box is Degenerate.
"""
from __future__ import annotations

import math
from typing import Sequence

from .clients import GroundingBackend, NoDetection
from .core import (
    NORM_EXTENT,
    Degenerate,
    ImageRef,
    LabeledBox,
    NormBox,
    PixelBox,
    VisualAnnotation,
    make_norm_box,
)

DEFAULT_MAX_BOXES = 1
DEFAULT_MIN_CONF = 0.35


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def normalize_box(box: PixelBox, img: ImageRef) -> NormBox:
    """Map a pixel box onto the 0-1000 grid with round-half-up."""
    if not (0 <= box.x1 < box.x2 <= img.width_px):
        raise ValueError(
            f"pixel box x-range ({box.x1}, {box.x2}) invalid for width {img.width_px}"
        )
    if not (0 <= box.y1 < box.y2 <= img.height_px):
        raise ValueError(
            f"pixel box y-range ({box.y1}, {box.y2}) invalid for height {img.height_px}"
        )
    x1 = _round_half_up(NORM_EXTENT * box.x1 / img.width_px)
    y1 = _round_half_up(NORM_EXTENT * box.y1 / img.height_px)
    x2 = _round_half_up(NORM_EXTENT * box.x2 / img.width_px)
    y2 = _round_half_up(NORM_EXTENT * box.y2 / img.height_px)
    if x1 == x2:
        if x2 >= NORM_EXTENT:
            raise Degenerate(
                f"box collapsed to zero width at the right edge ({x1})"
            )
        x2 += 1
    if y1 == y2:
        if y2 >= NORM_EXTENT:
            raise Degenerate(
                f"box collapsed to zero height at the bottom edge ({y1})"
            )
        y2 += 1
    return make_norm_box(x1, y1, x2, y2)


def ground_label(label: str, img: ImageRef, backend: GroundingBackend,
                 max_boxes: int = DEFAULT_MAX_BOXES,
                 min_conf: float = DEFAULT_MIN_CONF) -> VisualAnnotation:
    """Query the backend for one label and return its normalized boxes.

    Boxes below min_conf are dropped; survivors are ordered by confidence
    descending (stable) and truncated to max_boxes.  Every returned box
    carries the queried label.
    """
    if not label.strip():
        raise ValueError("grounding label must be non-empty")
    if max_boxes < 1:
        raise ValueError("max_boxes must be >= 1")
    detections = backend.detect_grounded_boxes(img, label)
    kept = [b for b in detections if b.confidence >= min_conf]
    if not kept:
        raise NoDetection(f"no detection for label {label!r} above {min_conf}")
    kept = sorted(kept, key=lambda b: b.confidence, reverse=True)[:max_boxes]
    return VisualAnnotation(
        tuple(LabeledBox(normalize_box(b, img), label) for b in kept)
    )


def ground_cues(cues: Sequence[str], img: ImageRef, backend: GroundingBackend,
                max_boxes: int = DEFAULT_MAX_BOXES,
                min_conf: float = DEFAULT_MIN_CONF) -> VisualAnnotation:
    """Ground several cue labels and concatenate their boxes in cue order."""
    if not cues:
        raise ValueError("at least one cue required")
    entries: list[LabeledBox] = []
    for cue in cues:
        entries.extend(ground_label(cue, img, backend, max_boxes, min_conf))
    return VisualAnnotation(tuple(entries))
