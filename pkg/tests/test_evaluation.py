"""Misalignment-evaluation harness: parsing, matching, metrics, correlation."""
import io
import json
import random

import pytest

import assignment as assignment_oracle
from alignfeedback.clients import BackendUnavailable, MockNli, MockVlm, MockGrounding
from alignfeedback.core import PixelBox, make_norm_box
from alignfeedback.evaluation import (
    EvaluationAborted,
    HumanAgreement,
    binary_accuracy,
    correlate,
    evaluate_model,
    feedback_nli,
    iou,
    match_boxes,
    normalize_binary_answer,
    parse_prediction,
    parse_two_step_answer,
    text_overlap,
    visual_f1,
)

from conftest import DATA, make_instance


class TestAnswerParsing:
    @pytest.mark.parametrize("raw,expected", [
        ("yes", True), ("Yes.", True), ("YES", True), (" yes ", True),
        ("no", False), ("No.", False), ("NO", False),
        ("maybe", None), ("", None), ("yes and no", None),
    ])
    def test_normalize_binary_answer(self, raw, expected):
        assert normalize_binary_answer(raw) == expected

    def test_parse_prediction_well_formed(self):
        parsed = parse_prediction(
            "The duck is swimming, not flying | duck flying | "
            "[339, 245, 581, 834] duck swimming")
        assert parsed.parse_ok
        assert parsed.feedback == "The duck is swimming, not flying"
        assert parsed.text_cue == "duck flying"
        assert [lb.box.as_list() for lb in parsed.visual] == [[339, 245, 581, 834]]

    @pytest.mark.parametrize("raw", [
        "no separators at all",
        "fb | cue | [0, 0, 1, 1]",       # box without label
        "fb | cue | [9, 9, 9, 9] x",     # degenerate box
        "fb | cue | [0, 0, 5000, 1] x",  # out of range
    ])
    def test_parse_prediction_failures_flagged_not_raised(self, raw):
        parsed = parse_prediction(raw)
        assert not parsed.parse_ok
        assert parsed.raw == raw

    def test_parse_two_step(self):
        assert parse_two_step_answer("fb | cue") == ("fb", "cue")
        assert parse_two_step_answer("fb | cue | extra") is None
        assert parse_two_step_answer("no separator") is None


class TestMatching:
    def boxes(self, *coords):
        return [make_norm_box(*c) for c in coords]

    def test_perfect_match(self):
        preds = self.boxes((0, 0, 100, 100), (500, 500, 900, 900))
        tp, fp, fn = match_boxes(preds, list(preds), 0.75)
        assert (tp, fp, fn) == (2, 0, 0)

    def test_unmatched_prediction_is_fp(self):
        tp, fp, fn = match_boxes(self.boxes((0, 0, 100, 100)),
                                 self.boxes((500, 500, 900, 900)), 0.75)
        assert (tp, fp, fn) == (0, 1, 1)

    def test_each_gt_used_once(self):
        gt = self.boxes((0, 0, 100, 100))
        preds = self.boxes((0, 0, 100, 100), (0, 0, 100, 100))
        tp, fp, fn = match_boxes(preds, gt, 0.75)
        assert (tp, fp, fn) == (1, 1, 0)

    def test_threshold_is_strict_minimum(self):
        a = self.boxes((0, 0, 100, 100))
        b = self.boxes((0, 0, 100, 200))  # IoU exactly 0.5
        assert match_boxes(a, b, 0.5)[0] == 1
        assert match_boxes(a, b, 0.500001)[0] == 0

    def test_label_aware_requires_matching_labels(self):
        boxes = self.boxes((0, 0, 100, 100))
        tp, fp, fn = match_boxes(boxes, list(boxes), 0.75,
                                 pred_labels=["cat"], gt_labels=["dog"],
                                 label_aware=True)
        assert (tp, fp, fn) == (0, 1, 1)
        tp, fp, fn = match_boxes(boxes, list(boxes), 0.75,
                                 pred_labels=["cat"], gt_labels=["cat"],
                                 label_aware=True)
        assert (tp, fp, fn) == (1, 0, 0)

    def test_matches_optimal_on_random_small_cases(self):
        rng = random.Random(5)

        def rand_boxes(n):
            out = []
            for _ in range(n):
                x1 = rng.randrange(0, 900)
                y1 = rng.randrange(0, 900)
                out.append(make_norm_box(x1, y1,
                                         x1 + rng.randrange(50, 100),
                                         y1 + rng.randrange(50, 100)))
            return out

        for _ in range(100):
            preds = rand_boxes(rng.randrange(1, 4))
            gts = rand_boxes(rng.randrange(0, 4))
            matrix = [[iou(p, g) for g in gts] for p in preds]
            expected = assignment_oracle.optimal_match_counts(matrix, 0.5)
            assert match_boxes(preds, gts, 0.5) == expected

    def test_visual_f1_micro_aggregates(self):
        a = self.boxes((0, 0, 100, 100))
        b = self.boxes((500, 500, 900, 900))
        precision, recall, f1 = visual_f1([a, []], [a, b], t=0.75)
        # instance 1: tp=1; instance 2: fn=1 → P=1, R=0.5, F1=2/3
        assert precision == 1.0
        assert recall == 0.5
        assert f1 == pytest.approx(2 / 3)


class TestTextMetrics:
    def test_identical_strings_score_one(self):
        assert text_overlap("a b c d", "a b c d", "bleu4") == 1.0
        assert text_overlap("a b c d", "a b c d", "rougeL") == 1.0

    def test_disjoint_strings_score_zero(self):
        assert text_overlap("a b", "c d", "bleu4") == 0.0
        assert text_overlap("a b", "c d", "rougeL") == 0.0

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError):
            text_overlap("a", "a", "meteor")

    def test_case_insensitive_tokens(self):
        assert text_overlap("The Cat", "the cat", "rougeL") == 1.0

    def test_sample_of_frozen_pairs(self):
        pairs = json.loads((DATA / "text_overlap_expected.json").read_text())["pairs"]
        for row in pairs[:5]:
            assert text_overlap(row["reference"], row["candidate"], "bleu4") == \
                pytest.approx(row["bleu4"], abs=1e-9)
            assert text_overlap(row["reference"], row["candidate"], "rougeL") == \
                pytest.approx(row["rouge_l"], abs=1e-9)

    def test_feedback_nli_premise_is_gt(self):
        calls = []

        class Spy:
            def score_entailment(self, premise, hypothesis):
                calls.append((premise, hypothesis))
                return 0.8

        assert feedback_nli("gold feedback", "model feedback", Spy()) == 0.8
        assert calls == [("gold feedback", "model feedback")]

    def test_binary_accuracy(self):
        assert binary_accuracy(["yes", "no", "maybe"],
                               [True, True, False]) == pytest.approx(1 / 3)


def binary_q(inst):
    return f"Does this image entail the description {inst.caption}?"


def feedback_q(inst):
    return ("Describe the misalignments between the image and the text: "
            f"{inst.caption}")


def perfect_vlm_for(instances):
    script = {}
    for inst in instances:
        script[(inst.image.uri, binary_q(inst))] = (
            "yes" if inst.alignment_label else "no")
        if not inst.alignment_label:
            from alignfeedback.core import render_target
            script[(inst.image.uri, feedback_q(inst))] = render_target(
                inst.gt_feedback, inst.gt_misalignment_in_text, inst.gt_visual)
    return MockVlm(script)


class TestEvaluateModel:
    def instances(self):
        return [
            make_instance("b0", "An aligned caption.", aligned=True),
            make_instance("b1"),
            make_instance("b2", caption="A duck flying over the lake.",
                          feedback="The duck is swimming, not flying",
                          cue="duck flying", label="duck swimming",
                          box=(339, 245, 581, 834)),
        ]

    def test_perfect_model_scores_one(self):
        instances = self.instances()
        report = evaluate_model(instances, perfect_vlm_for(instances), MockNli())
        agg = report.aggregate
        assert agg["binary_accuracy"] == 1.0
        assert agg["feedback_nli_mean"] == 1.0
        assert agg["text_nli_mean"] == 1.0
        assert agg["f1_at_075"] == 1.0
        assert agg["parse_failure_rate"] == 0.0
        assert agg["n"] == {"binary": 3, "feedback_nli": 2, "text_nli": 2,
                            "visual": 2, "parsed": 2}

    def test_garbage_model_scores_zero(self):
        vlm = MockVlm({}, default="COMPLETELY UNSTRUCTURED")
        report = evaluate_model(self.instances(), vlm, MockNli())
        agg = report.aggregate
        assert agg["parse_failure_rate"] == 1.0
        assert agg["binary_accuracy"] == 0.0
        # unparseable predictions earn zero credit rather than being excluded
        assert agg["feedback_nli_mean"] == 0.0
        assert agg["text_nli_mean"] == 0.0
        assert agg["f1_at_075"] == 0.0

    def test_aligned_instances_skip_feedback_query(self):
        instances = [make_instance("b0", "An aligned caption.", aligned=True)]
        report = evaluate_model(instances, perfect_vlm_for(instances), MockNli())
        row = report.per_instance[0]
        assert row.binary_correct is True
        assert row.parse_ok is None
        assert row.feedback_nli is None

    def test_two_step_grounds_predicted_cue(self):
        from conftest import make_image
        inst = make_instance("b2", caption="A duck flying over the lake.",
                             feedback="The duck is swimming, not flying",
                             cue="duck flying", label="duck swimming",
                             box=(339, 245, 581, 834),
                             image=make_image("img://bench/b2", 1000, 1000))
        vlm = MockVlm({(inst.image.uri, binary_q(inst)): "no",
                       (inst.image.uri, feedback_q(inst)):
                       "The duck is swimming, not flying | duck swimming"})
        grounding = MockGrounding({(inst.image.uri, "duck swimming"):
                                   [PixelBox(339, 245, 581, 834, 0.9)]})
        report = evaluate_model([inst], vlm, MockNli(), grounding=grounding,
                                mode="two_step")
        assert report.aggregate["f1_at_075"] == 1.0
        assert report.aggregate["feedback_nli_mean"] == 1.0

    def test_two_step_without_grounding_rejected(self):
        with pytest.raises(ValueError):
            evaluate_model(self.instances(), MockVlm({}, default="x"),
                           MockNli(), mode="two_step")

    def test_backend_failure_aborts_with_partial_report(self):
        class Flaky:
            def __init__(self):
                self.n = 0

            def query_vlm(self, image, question):
                self.n += 1
                if self.n > 2:
                    raise BackendUnavailable("gone")
                return "no"

        with pytest.raises(EvaluationAborted) as exc_info:
            evaluate_model(self.instances(), Flaky(), MockNli())
        partial = exc_info.value.partial
        assert partial.aggregate["n"]["binary"] >= 1

    def test_report_json_and_csv_round_trip(self):
        instances = self.instances()
        report = evaluate_model(instances, perfect_vlm_for(instances), MockNli())
        out = io.StringIO()
        report.write_json(out)
        data = json.loads(out.getvalue())
        assert set(data) == {"per_instance", "aggregate"}
        assert [row["id"] for row in data["per_instance"]] == ["b0", "b1", "b2"]
        csv_out = io.StringIO()
        report.write_csv(csv_out)
        lines = csv_out.getvalue().splitlines()
        assert lines[0].startswith("id,binary_correct,parse_ok")
        assert len(lines) == 4


class TestCorrelate:
    def test_monotone_scores_give_perfect_spearman(self):
        ags = [HumanAgreement(f"i{k}", k, 0, 0) for k in range(4)]
        scores = {f"i{k}": k / 10 for k in range(4)}
        res = correlate(ags, scores, "feedback")
        assert res.spearman == pytest.approx(1.0)
        assert res.spearman_defined

    def test_constant_level_has_undefined_spearman(self):
        ags = [HumanAgreement(f"i{k}", 2, 0, 0) for k in range(4)]
        scores = {f"i{k}": k / 10 for k in range(4)}
        res = correlate(ags, scores, "feedback")
        assert not res.spearman_defined

    def test_question_selects_column(self):
        ags = [HumanAgreement("a", 0, 3, 0), HumanAgreement("b", 3, 0, 0)]
        scores = {"a": 0.9, "b": 0.1}
        assert correlate(ags, scores, "text").spearman == pytest.approx(1.0)
        assert correlate(ags, scores, "feedback").spearman == pytest.approx(-1.0)

    def test_unknown_question_rejected(self):
        with pytest.raises(ValueError):
            correlate([HumanAgreement("a", 1, 1, 1)], {"a": 0.5}, "overall")
