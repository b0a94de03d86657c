"""Shared test fixtures and helpers."""
from __future__ import annotations

import socket
import sys
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"
DATA = Path(__file__).resolve().parent / "data"
ORACLES = Path(__file__).resolve().parent / "oracles"

sys.path.insert(0, str(ORACLES))

from alignfeedback.core import (  # noqa: E402
    AlignedPair,
    BenchmarkInstance,
    CaptionProvenance,
    ImageKind,
    ImageRef,
    LabeledBox,
    PixelBox,
    ReviewStatus,
    VisualAnnotation,
    make_norm_box,
)


def make_image(uri: str = "img://test/0", width: int = 640,
               height: int = 480) -> ImageRef:
    return ImageRef(uri=uri, width_px=width, height_px=height,
                    kind=ImageKind.NATURAL)


def make_pair(pair_id: str = "p0", caption: str = "A red car parked near the tree.",
              dataset: str = "coco", image: ImageRef = None) -> AlignedPair:
    return AlignedPair(
        id=pair_id,
        image=image or make_image(f"img://{dataset}/{pair_id}"),
        caption=caption,
        caption_provenance=CaptionProvenance.HUMAN_ANNOTATED,
        source_dataset=dataset,
    )


def make_instance(iid: str = "b0", caption: str = "A blue car parked near the tree.",
                  aligned: bool = False,
                  feedback: str = "The car is red, not blue",
                  cue: str = "blue car",
                  label: str = "red car",
                  box: tuple = (100, 100, 500, 500),
                  image: ImageRef = None) -> BenchmarkInstance:
    visual = None
    if not aligned and box is not None:
        visual = VisualAnnotation(boxes=(LabeledBox(make_norm_box(*box), label),))
    return BenchmarkInstance(
        id=iid,
        image=image or make_image(f"img://bench/{iid}"),
        caption=caption,
        alignment_label=aligned,
        gt_feedback=None if aligned else feedback,
        gt_misalignment_in_text=None if aligned else cue,
        gt_visual=visual,
        review_status=ReviewStatus.PENDING,
    )


class FakeLlm:
    """Answers every category prompt with a parseable scripted contradiction."""

    def __init__(self, completion: str = None):
        self.completion = completion
        self.prompts = []

    def complete_chat(self, prompt: str, params=None) -> str:
        self.prompts.append(prompt)
        if self.completion is not None:
            return self.completion
        for cat in ("Object/Noun", "Attribute/Adjective", "Action/Verb",
                    "Relation"):
            if f"Create a MISALIGNMENT of type: {cat}" in prompt:
                return ("CONTRADICTION: A blue car parked near the tree.\n"
                        "MISALIGNMENT: The car is red (CAPTION: red car), "
                        "not blue (CONTRADICTION: blue car)\n"
                        f"MISALIGNMENT TYPE: {cat}\n")
        return "no category line found"


class FakeNli:
    """Constant scores: pass both filter tests by default."""

    def __init__(self, contradiction_score: float = 0.02,
                 feedback_score: float = 0.97):
        self.c = contradiction_score
        self.f = feedback_score

    def score_entailment(self, premise: str, hypothesis: str) -> float:
        if premise.startswith("EXPECTED CAPTION:"):
            return self.f
        return self.c


class FakeGrounding:
    def __init__(self, boxes=None):
        self.boxes = boxes if boxes is not None else [
            PixelBox(64, 48, 320, 240, confidence=0.9)]
        self.calls = []

    def detect_grounded_boxes(self, image, label):
        self.calls.append((image.uri, label))
        return list(self.boxes)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture()
def tmp_jsonl(tmp_path):
    def _path(name: str) -> Path:
        return tmp_path / name
    return _path
