"""End-to-end pipeline: seeding, staging, counters, determinism."""
import io
import json

import pytest

from alignfeedback.config import load_config
from alignfeedback.core import Verdict
from alignfeedback.datasets import read_jsonl
from alignfeedback.core import AlignedPair
from alignfeedback.pipeline import (
    PendingRecord,
    RunStats,
    derive_seed,
    export_training_records,
    generate_pending,
    ground_pending,
    run_pipeline,
    validate_pending,
)

from conftest import FIXTURES, FakeGrounding, FakeLlm, FakeNli, make_pair


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, 3) == derive_seed(7, 3)

    def test_distinct_across_indices(self):
        seeds = {derive_seed(7, i) for i in range(1000)}
        assert len(seeds) == 1000

    def test_distinct_across_negatives(self):
        assert derive_seed(7, 3, 0) != derive_seed(7, 3, 1)

    def test_base_seed_changes_everything(self):
        a = [derive_seed(1, i) for i in range(50)]
        b = [derive_seed(2, i) for i in range(50)]
        assert not set(a) & set(b)

    def test_fits_in_64_bits(self):
        assert 0 <= derive_seed(2**63, 2**31, 5) < 2**64


class TestRunStats:
    def test_identity(self):
        stats = RunStats(input=10, generated=9, parse_failed=1,
                         rejected_contradiction=2, rejected_feedback=3,
                         grounded_failed=1, emitted=3)
        assert stats.identity_holds()
        assert stats.failure_fraction() == pytest.approx(0.7)

    def test_empty_run(self):
        stats = RunStats()
        assert stats.identity_holds()
        assert stats.failure_fraction() == 0.0


def demo_config():
    return load_config(FIXTURES / "demo.yaml")


def fake_backends(**overrides):
    backends = {"llm": FakeLlm(), "nli": FakeNli(),
                "grounding": FakeGrounding()}
    backends.update(overrides)
    return backends


class TestRunPipeline:
    def test_single_keep(self):
        records, stats = run_pipeline([make_pair()], demo_config(),
                                      backends=fake_backends())
        assert stats.to_dict() == {
            "input": 1, "generated": 1, "parse_failed": 0,
            "rejected_contradiction": 0, "rejected_feedback": 0,
            "grounded_failed": 0, "emitted": 1}
        rec = records[0]
        assert rec.id == "p0"
        assert rec.positive_caption == "A red car parked near the tree."
        assert rec.negative_caption == "A blue car parked near the tree."
        assert rec.feedback == "The car is red, not blue"
        assert rec.misalignment_in_text == "blue car"
        assert rec.visual.boxes[0].label == "red car"
        assert rec.visual.boxes[0].box.as_list() == [100, 100, 500, 500]
        assert rec.validation.verdict == Verdict.KEEP

    def test_rejections_counted(self):
        records, stats = run_pipeline(
            [make_pair()], demo_config(),
            backends=fake_backends(nli=FakeNli(0.9, 0.97)))
        assert records == []
        assert stats.rejected_contradiction == 1
        assert stats.identity_holds()

    def test_parse_failure_counted(self):
        records, stats = run_pipeline(
            [make_pair()], demo_config(),
            backends=fake_backends(llm=FakeLlm(completion="nonsense")))
        assert records == []
        assert stats.parse_failed == 1
        assert stats.generated == 0
        assert stats.identity_holds()

    def test_negatives_per_pair_get_suffixed_ids(self):
        records, stats = run_pipeline([make_pair()], demo_config(),
                                      negatives_per_pair=2,
                                      backends=fake_backends())
        assert [r.id for r in records] == ["p0-neg0", "p0-neg1"]
        assert stats.input == 2

    def test_workers_do_not_change_output(self):
        import dataclasses
        pairs = [make_pair(f"p{i}", f"A red car parked near the tree number {i}.")
                 for i in range(8)]
        config = demo_config()
        serial = run_pipeline(pairs, dataclasses.replace(config, workers=1),
                              backends=fake_backends())
        threaded = run_pipeline(pairs, dataclasses.replace(config, workers=4),
                                backends=fake_backends())
        assert [r.to_dict() for r in serial[0]] == \
            [r.to_dict() for r in threaded[0]]
        assert serial[1] == threaded[1]


class TestStagedPipeline:
    def pairs(self):
        return [make_pair(f"p{i}", f"A red car parked near the tree number {i}.")
                for i in range(6)]

    def test_staged_equals_full(self):
        config = demo_config()
        full_records, full_stats = run_pipeline(self.pairs(), config,
                                                backends=fake_backends())

        pending, _ = generate_pending(self.pairs(), config,
                                      backends=fake_backends())
        pending, _ = validate_pending(pending, config,
                                      backends=fake_backends())
        pending, _ = ground_pending(pending, config,
                                    backends=fake_backends())
        staged = export_training_records(pending)
        assert [r.to_dict() for r in staged] == \
            [r.to_dict() for r in full_records]

    def test_pending_record_json_round_trip(self):
        config = demo_config()
        pending, _ = generate_pending(self.pairs(), config,
                                      backends=fake_backends())
        pending, _ = validate_pending(pending, config,
                                      backends=fake_backends())
        for rec in pending:
            back = PendingRecord.from_dict(json.loads(json.dumps(rec.to_dict())))
            assert back == rec

    def test_validate_scores_rejected_records_too(self):
        config = demo_config()
        pending, _ = generate_pending(self.pairs(), config,
                                      backends=fake_backends())
        scored, stats = validate_pending(
            pending, config, backends={"nli": FakeNli(0.9, 0.2)})
        assert len(scored) == len(pending)  # nothing dropped at this stage
        assert all(r.validation is not None for r in scored)
        assert all(r.validation.verdict == Verdict.REJECT_BOTH for r in scored)

    def test_ground_applies_verdict(self):
        config = demo_config()
        pending, _ = generate_pending(self.pairs(), config,
                                      backends=fake_backends())
        scored, _ = validate_pending(pending, config,
                                     backends={"nli": FakeNli(0.9, 0.97)})
        grounded, stats = ground_pending(scored, config,
                                         backends=fake_backends())
        assert grounded == []
        assert stats.rejected_contradiction == len(scored)

    def test_export_requires_complete_records(self):
        config = demo_config()
        pending, _ = generate_pending(self.pairs(), config,
                                      backends=fake_backends())
        with pytest.raises(ValueError):
            export_training_records(pending)


class TestFixtureRun:
    """The checked-in 50-pair fixture drives a full deterministic run."""

    def load_pairs(self):
        return read_jsonl(FIXTURES / "pairs50.jsonl", AlignedPair.from_dict)

    def test_expected_bucket_counts(self):
        config = load_config(FIXTURES / "demo.yaml")
        records, stats = run_pipeline(self.load_pairs(), config)
        assert stats.to_dict() == {
            "input": 50, "generated": 50, "parse_failed": 0,
            "rejected_contradiction": 5, "rejected_feedback": 5,
            "grounded_failed": 2, "emitted": 38}
        assert len(records) == 38

    def test_repeat_run_identical(self):
        config = load_config(FIXTURES / "demo.yaml")
        first = run_pipeline(self.load_pairs(), config)
        second = run_pipeline(self.load_pairs(), config)
        assert [r.to_dict() for r in first[0]] == \
            [r.to_dict() for r in second[0]]
        assert first[1] == second[1]
