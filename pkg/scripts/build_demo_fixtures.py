#!/usr/bin/env python3
"""Build the committed demo fixture set under fixtures/.

Everything here is deterministic: rerunning the script rewrites the same
bytes.  The LLM fixture is captured by running the real pipeline once with
a recording backend, so the stored prompt digests always match what the
pipeline actually sends for the committed config (sampling seed included).

Engineered shape of the 50-pair run (seed 7, thresholds 0.25/0.75):
  indices  0-39  validation scores (0.02, 0.97) -> keep
  indices 40-44  validation scores (0.70, 0.95) -> reject_contradiction
  indices 45-49  validation scores (0.06, 0.01) -> reject_feedback
  keeps 7 and 23 have no grounding fixture      -> grounded_failed
  => emitted 38, rejected 5+5, grounded_failed 2, parse_failed 0
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from alignfeedback import datasets
from alignfeedback.candidates import default_tagger, extract_candidates, tag_caption
from alignfeedback.clients import prompt_digest
from alignfeedback.config import PipelineConfig, load_config
from alignfeedback.core import (
    AlignedPair,
    BenchmarkInstance,
    ImageKind,
    ImageRef,
    LabeledBox,
    MisalignmentType,
    ReviewStatus,
    VisualAnnotation,
    make_norm_box,
    render_target,
)
from alignfeedback.evaluation import EvalQueries
from alignfeedback.generation import TYPE_DISPLAY
from alignfeedback.pipeline import generate_pending, run_pipeline
from alignfeedback.review import ReviewStore
from alignfeedback.validation import feedback_premise

OUT = ROOT / "fixtures"

SEED = 7
KEEP = range(0, 40)
REJECT_CONTRA = range(40, 45)
REJECT_FEEDBACK = range(45, 50)
UNGROUNDED_KEEPS = (7, 23)
KEEP_SCORES = (0.02, 0.97)
REJECT_CONTRA_SCORES = (0.70, 0.95)
REJECT_FEEDBACK_SCORES = (0.06, 0.01)

PIPELINE_BOX = {"x1": 64, "y1": 48, "x2": 320, "y2": 240, "confidence": 0.9}

ADJS = ["red", "blue", "green", "brown", "black", "small",
        "large", "old", "shiny", "fresh"]
NOUNS = ["car", "dog", "bird", "boat", "chair", "horse",
         "bottle", "bicycle", "bench", "basket", "balloon", "bridge"]
VERBS = ["parked", "standing", "resting", "floating",
         "hanging", "waiting", "spinning"]
PREPS = ["near", "under", "above", "behind", "between"]
NOUNS2 = ["tree", "fence", "river", "house", "door", "window",
          "wall", "table", "mountain", "garden", "road"]

ALT_RING = {
    MisalignmentType.OBJECT: ["piano", "statue", "lantern", "kite"],
    MisalignmentType.ATTRIBUTE: ["purple", "golden", "heavy"],
    MisalignmentType.ACTION: ["sleeping", "melting", "dancing"],
    MisalignmentType.RELATION: ["beneath", "atop", "below"],
}

DISPLAY_TO_TYPE = {v: k for k, v in TYPE_DISPLAY.items()}

NARRATIVE = (
    "In this picture we can see a flower vase and a name board on the "
    "platform and here we can see four people are standing on the floor. "
    "In the background we can see the name on the wall and we can see "
    "plants, roof and lights."
)
NARRATIVE_CAPTION = ("People standing on the floor near a flower vase "
                     "and a name board.")

FIXED_TIMESTAMP = "2026-08-20T12:00:00+00:00"


def _jdump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n",
                    "utf-8")


def make_captions() -> list:
    captions = []
    for i in range(50):
        adj = ADJS[i % len(ADJS)]
        noun = NOUNS[i % len(NOUNS)]
        verb = VERBS[i % len(VERBS)]
        prep = PREPS[i % len(PREPS)]
        noun2 = NOUNS2[(i * 3 + 1) % len(NOUNS2)]
        captions.append(f"A {adj} {noun} {verb} {prep} the {noun2}.")
    return captions


def check_caption_coverage(captions) -> None:
    tagger = default_tagger()
    for caption in captions:
        cands = extract_candidates(caption, tag_caption(caption, tagger))
        missing = [t.value for t in MisalignmentType if not cands.get(t)]
        assert not missing, f"caption {caption!r} lacks candidates: {missing}"


def scripted_completion(caption: str, category: MisalignmentType) -> tuple:
    """Deterministic contradiction for the first candidate of the category.

    Returns (completion_text, contradiction, feedback, caption_cue,
    contradiction_cue)."""
    cands = extract_candidates(caption, tag_caption(caption, default_tagger()))
    cand = cands[category][0]
    surface = cand.surface
    alt = next(a for a in ALT_RING[category] if a != surface)
    s, e = cand.span
    contradiction = caption[:s] + alt + caption[e:]
    feedback = f"The image shows {surface}, not {alt}"
    completion = (
        f"CONTRADICTION: {contradiction}\n"
        f"MISALIGNMENT: The image shows {surface} (CAPTION: {surface}), "
        f"not {alt} (CONTRADICTION: {alt})\n"
        f"MISALIGNMENT TYPE: {TYPE_DISPLAY[category]}\n"
    )
    return completion, contradiction, feedback, surface, alt


class RecordingLlm:
    """Answers prompts with the scripted completion and keeps every
    (digest, completion) pair for the fixture file."""

    def __init__(self):
        self.fixtures = []
        self._seen = set()

    def _record(self, prompt: str, completion: str) -> None:
        digest = prompt_digest(prompt)
        if digest not in self._seen:
            self._seen.add(digest)
            self.fixtures.append({"sha256": digest, "completion": completion})

    def complete_chat(self, prompt: str, params=None) -> str:
        lines = prompt.splitlines()
        caption = next(
            line[len("CAPTION: "):] for line in reversed(lines)
            if line.startswith("CAPTION: "))
        category = None
        for line in lines:
            if line.startswith("Create a MISALIGNMENT of type: "):
                display = line[len("Create a MISALIGNMENT of type: "):]
                category = DISPLAY_TO_TYPE[display]
        assert category is not None, "prompt has no category line"
        completion = scripted_completion(caption, category)[0]
        self._record(prompt, completion)
        return completion


class RecordingSummarizer:
    def __init__(self, answer: str):
        self.answer = answer
        self.fixtures = []

    def complete_chat(self, prompt: str, params=None) -> str:
        completion = f"CAPTION: {self.answer}"
        self.fixtures.append({"sha256": prompt_digest(prompt),
                              "completion": completion})
        return completion


def build_pipeline_fixtures() -> None:
    captions = make_captions()
    check_caption_coverage(captions)

    manifest_rows = [{"dataset_name": "coco", "caption_style": "human_multi"}]
    for i, caption in enumerate(captions):
        short = f"{caption.split()[1]} photo."
        assert len(short) < len(caption)
        manifest_rows.append({
            "id": f"pair-{i:03d}",
            "image": {"uri": f"img://coco/pair-{i:03d}", "width_px": 640,
                      "height_px": 480, "kind": "natural"},
            "captions": [short, caption],
        })
    datasets.write_jsonl(manifest_rows, OUT / "manifest_coco.jsonl")

    narrative_rows = [
        {"dataset_name": "narrative", "caption_style": "localized_narrative"},
        {"id": "narr-000",
         "image": {"uri": "img://narrative/narr-000", "width_px": 640,
                   "height_px": 480, "kind": "natural"},
         "narrative": NARRATIVE},
    ]
    datasets.write_jsonl(narrative_rows, OUT / "manifest_narrative.jsonl")

    pairs = datasets.ingest(OUT / "manifest_coco.jsonl")
    assert [p.caption for p in pairs] == captions
    datasets.write_jsonl((p.to_dict() for p in pairs), OUT / "pairs50.jsonl")

    # capture the LLM prompts the committed config will actually send
    recorder = RecordingLlm()
    config = PipelineConfig(sampling_seed=SEED)
    pending, stats = generate_pending(pairs, config,
                                      backends={"llm": recorder})
    assert stats.emitted == 50 and stats.parse_failed == 0, stats.to_dict()

    summarizer = RecordingSummarizer(NARRATIVE_CAPTION)
    narr_pairs = datasets.ingest(OUT / "manifest_narrative.jsonl",
                                 llm=summarizer)
    assert narr_pairs[0].caption == NARRATIVE_CAPTION

    _jdump({"completions": recorder.fixtures + summarizer.fixtures},
           OUT / "llm_fixtures.json")

    nli_pairs = []
    grounding = []
    for index, record in enumerate(pending):
        g = record.generation
        caption = record.pair.caption
        if index in KEEP:
            c_score, f_score = KEEP_SCORES
        elif index in REJECT_CONTRA:
            c_score, f_score = REJECT_CONTRA_SCORES
        else:
            c_score, f_score = REJECT_FEEDBACK_SCORES
        nli_pairs.append({"premise": caption,
                          "hypothesis": g.contradiction_caption,
                          "score": c_score})
        nli_pairs.append({"premise": feedback_premise(
                              caption, g.contradiction_caption),
                          "hypothesis": g.feedback,
                          "score": f_score})
        if index in KEEP and index not in UNGROUNDED_KEEPS:
            grounding.append({"image_uri": record.pair.image.uri,
                              "label": g.caption_cue,
                              "boxes": [dict(PIPELINE_BOX)]})
    _jdump({"pairs": nli_pairs}, OUT / "nli_fixtures.json")

    # the duck entry backs the two-step evaluation baseline
    grounding.append({"image_uri": "img://openimages/duck",
                      "label": "duck swimming",
                      "boxes": [{"x1": 339, "y1": 245, "x2": 581, "y2": 834,
                                 "confidence": 0.9}]})
    _jdump({"detections": grounding}, OUT / "grounding_fixtures.json")


def _bench_instance(iid: str, uri: str, caption: str, aligned: bool,
                    feedback: str = None, cue: str = None,
                    label: str = None, box: tuple = None,
                    size: tuple = (640, 480)) -> BenchmarkInstance:
    visual = None
    if box is not None:
        visual = VisualAnnotation(
            boxes=(LabeledBox(make_norm_box(*box), label),))
    return BenchmarkInstance(
        id=iid,
        image=ImageRef(uri=uri, width_px=size[0], height_px=size[1],
                       kind=ImageKind.NATURAL),
        caption=caption,
        alignment_label=aligned,
        gt_feedback=feedback,
        gt_misalignment_in_text=cue,
        gt_visual=visual,
        review_status=ReviewStatus.PENDING,
    )


_MISALIGNED_EVAL = [
    # caption shown to the model, feedback, textual cue, box label, NormBox
    ("A blue car parked near the tree.", "The car is red, not blue",
     "blue car", "red car", (100, 100, 500, 500)),
    ("A cat chasing the ball.", "The animal is a dog, not a cat",
     "cat", "dog", (120, 260, 700, 940)),
    ("A man jumping over the fence.", "The man is walking, not jumping",
     "man jumping", "man walking", (40, 60, 420, 980)),
    ("Two ducks flying over the lake.", "The ducks are swimming, not flying",
     "ducks flying", "ducks swimming", (210, 380, 820, 760)),
    ("A green bus behind the station.", "The bus is in front of the station, "
     "not behind it", "bus behind", "bus in front", (0, 150, 660, 890)),
    ("A bowl of oranges under the table.", "The bowl is on the table, "
     "not under it", "under the table", "bowl on table", (330, 90, 640, 400)),
    ("A small child holding a purple balloon.", "The balloon is red, "
     "not purple", "purple balloon", "red balloon", (540, 20, 780, 350)),
]

_ALIGNED_EVAL = [
    "A brown horse standing near the river.",
    "A bird resting above the window.",
    "Fresh bread waiting on the table.",
]


def build_eval_fixtures() -> None:
    queries = EvalQueries()
    instances = []
    perfect = []
    for i, caption in enumerate(_ALIGNED_EVAL):
        inst = _bench_instance(f"ev-{i:03d}", f"img://eval/ev-{i:03d}",
                               caption, True)
        instances.append(inst)
        answer = "Yes." if i % 2 else "yes"
        perfect.append({"image_uri": inst.image.uri,
                        "question": queries.binary.format(text=caption),
                        "answer": answer})
    for j, (caption, feedback, cue, label, box) in enumerate(_MISALIGNED_EVAL):
        i = len(_ALIGNED_EVAL) + j
        inst = _bench_instance(f"ev-{i:03d}", f"img://eval/ev-{i:03d}",
                               caption, False, feedback, cue, label, box)
        instances.append(inst)
        perfect.append({"image_uri": inst.image.uri,
                        "question": queries.binary.format(text=caption),
                        "answer": "No." if j % 2 else "no"})
        perfect.append({"image_uri": inst.image.uri,
                        "question": queries.feedback.format(text=caption),
                        "answer": render_target(feedback, cue, inst.gt_visual)})
    datasets.write_jsonl((inst.to_dict() for inst in instances),
                         OUT / "bench10.jsonl")
    _jdump({"answers": perfect}, OUT / "vlm_perfect.json")
    _jdump({"answers": [],
            "default": "THIS ANSWER HAS NO RECOGNIZABLE STRUCTURE"},
           OUT / "vlm_garbage.json")

    duck = _bench_instance(
        "duck-000", "img://openimages/duck", "A duck flying over the lake.",
        False, "The duck is swimming, not flying", "duck flying",
        "duck swimming", (339, 245, 581, 834), size=(1000, 1000))
    datasets.write_jsonl([duck.to_dict()], OUT / "bench_duck.jsonl")
    _jdump({"answers": [
        {"image_uri": duck.image.uri,
         "question": queries.binary.format(text=duck.caption),
         "answer": "no"},
        {"image_uri": duck.image.uri,
         "question": queries.feedback.format(text=duck.caption),
         "answer": "The duck is swimming, not flying | duck swimming"},
    ]}, OUT / "vlm_twostep.json")


def build_review_fixtures() -> None:
    bench100 = []
    for i in range(100):
        bench100.append(_bench_instance(
            f"rev-{i:03d}", f"img://review/rev-{i:03d}",
            f"A sample caption number {i} under review.", False,
            f"Reviewed misalignment {i}", f"cue {i}", f"object {i}",
            (100, 100, 500, 500)))
    datasets.write_jsonl((inst.to_dict() for inst in bench100),
                         OUT / "bench100.jsonl")

    raters = ["ann-1", "ann-2", "ann-3"]
    verdict_rows = []
    for i, inst in enumerate(bench100):
        for r, rater in enumerate(raters):
            answers = {"feedback_ok": True, "text_ok": True, "visual_ok": True}
            if i >= 66 and r == i % 3:
                question = ("feedback_ok", "text_ok", "visual_ok")[i % 3]
                answers[question] = False
            verdict_rows.append({"instance_id": inst.id, "rater_id": rater,
                                 **answers, "submitted_at": FIXED_TIMESTAMP})
    datasets.write_jsonl(verdict_rows, OUT / "verdicts100.jsonl")

    store = ReviewStore(bench100, log_path=OUT / "verdicts100.jsonl",
                        raters=raters)
    store.close()
    accepted, rate, n_total = store.export_benchmark()
    assert (len(accepted), rate, n_total) == (66, 0.66, 100), (
        len(accepted), rate, n_total)

    agreements = store.human_agreements()
    _jdump([{"instance_id": a.instance_id, "feedback": a.feedback,
             "text": a.text, "visual": a.visual} for a in agreements],
           OUT / "agreements100.json")
    scores = {a.instance_id: round(0.2 + 0.25 * a.feedback
                                   + ((i % 7) - 3) * 0.01, 4)
              for i, a in enumerate(agreements)}
    _jdump(scores, OUT / "scores100.json")

    bench5 = []
    for i, (caption, feedback, cue, label, box) in enumerate(
            _MISALIGNED_EVAL[:5]):
        bench5.append(_bench_instance(
            f"ui-{i:03d}", f"img://review/ui-{i:03d}", caption, False,
            feedback, cue, label, box))
    datasets.write_jsonl((inst.to_dict() for inst in bench5),
                         OUT / "bench5.jsonl")


_CONFIG_COMMON = """\
thresholds:
  tau_c: 0.25
  tau_f: 0.75
decoding:
  temperature: 0.4
  max_tokens: 700
  top_p: 0.95
  top_k: 30
grounding:
  max_boxes: 1
  min_conf: 0.35
concurrency:
  workers: 2
"""


def build_configs() -> None:
    (OUT / "demo.yaml").write_text(
        "# Generation pipeline against the committed mock fixtures.\n"
        "backends:\n"
        "  llm:\n    endpoint_url: mock://llm_fixtures.json\n"
        "  nli:\n    endpoint_url: mock://nli_fixtures.json\n"
        "  grounding:\n    endpoint_url: mock://grounding_fixtures.json\n"
        f"sampling_seed: {SEED}\n" + _CONFIG_COMMON, "utf-8")
    for name, vlm, nli, extra in (
        ("eval_perfect.yaml", "mock://vlm_perfect.json", "mock://jaccard", ""),
        ("eval_garbage.yaml", "mock://vlm_garbage.json", "mock://jaccard", ""),
        ("eval_twostep.yaml", "mock://vlm_twostep.json", "mock://jaccard",
         "  grounding:\n    endpoint_url: mock://grounding_fixtures.json\n"),
        ("eval_unreachable.yaml", "http://127.0.0.1:9/", "mock://jaccard", ""),
    ):
        retries = ("    timeout_ms: 200\n    retries: 0\n"
                   if name == "eval_unreachable.yaml" else "")
        (OUT / name).write_text(
            "# Evaluation harness config.\n"
            "backends:\n"
            f"  vlm:\n    endpoint_url: {vlm}\n{retries}"
            f"  nli:\n    endpoint_url: {nli}\n"
            f"{extra}"
            f"sampling_seed: {SEED}\n" + _CONFIG_COMMON, "utf-8")


def verify() -> None:
    """Run the committed config end to end and check the engineered stats."""
    config = load_config(OUT / "demo.yaml")
    pairs = datasets.read_jsonl(OUT / "pairs50.jsonl", AlignedPair.from_dict)
    records, stats = run_pipeline(pairs, config)
    expected = {"input": 50, "generated": 50, "parse_failed": 0,
                "rejected_contradiction": 5, "rejected_feedback": 5,
                "grounded_failed": 2, "emitted": 38}
    assert stats.to_dict() == expected, stats.to_dict()
    records2, stats2 = run_pipeline(pairs, config)
    assert [r.to_dict() for r in records] == [r.to_dict() for r in records2]
    print(f"pipeline verification ok: {stats.to_dict()}")


def main() -> None:
    OUT.mkdir(exist_ok=True)
    build_pipeline_fixtures()
    build_eval_fixtures()
    build_review_fixtures()
    build_configs()
    verify()
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
