"""Manifest ingestion, JSONL IO, and YAML config loading."""
import json
import textwrap

import pytest

from alignfeedback.clients import MockNli
from alignfeedback.config import ConfigError, load_config
from alignfeedback.core import CaptionProvenance, ImageKind, ReviewStatus
from alignfeedback.datasets import (
    SchemaError,
    ingest,
    load_manifest,
    read_benchmark_instances,
    read_jsonl,
    write_benchmark_instances,
    write_jsonl,
)

from conftest import FIXTURES, FakeLlm, make_instance


def write_manifest(path, records, dataset="coco", style="human_multi"):
    header = {"dataset_name": dataset, "caption_style": style}
    rows = [header] + records
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


def record(rid="r0", captions=("short", "a much longer caption here"),
           narrative=None, kind="natural"):
    row = {"id": rid,
           "image": {"uri": f"img://t/{rid}", "width_px": 640,
                     "height_px": 480, "kind": kind}}
    if narrative is not None:
        row["narrative"] = narrative
    else:
        row["captions"] = list(captions)
    return row


class TestManifest:
    def test_header_parsed(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl", [record()])
        manifest = load_manifest(p)
        assert manifest.dataset_name == "coco"
        assert manifest.records[0].image.kind == ImageKind.NATURAL
        assert len(manifest.records) == 1

    def test_missing_header_field_rejected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps({"dataset_name": "coco"}) + "\n")
        with pytest.raises(SchemaError):
            load_manifest(p)

    def test_record_missing_required_field_rejected(self, tmp_path):
        row = record()
        del row["image"]
        p = write_manifest(tmp_path / "m.jsonl", [row])
        with pytest.raises(SchemaError):
            load_manifest(p)

    def test_bad_style_rejected(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl", [record()], style="freeform")
        with pytest.raises(SchemaError):
            load_manifest(p)


class TestIngest:
    def test_human_multi_takes_longest_caption(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl", [record()])
        pairs = ingest(p)
        assert len(pairs) == 1
        assert pairs[0].id == "r0"
        assert pairs[0].caption == "a much longer caption here"
        assert pairs[0].caption_provenance == CaptionProvenance.HUMAN_ANNOTATED
        assert pairs[0].source_dataset == "coco"

    def test_predicted_takes_single_caption(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl",
                           [record(captions=("the model caption",))],
                           dataset="ade20k", style="predicted")
        pairs = ingest(p)
        assert pairs[0].caption == "the model caption"
        assert pairs[0].caption_provenance == CaptionProvenance.MODEL_PREDICTED

    def test_predicted_rejects_multiple_captions(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl",
                           [record(captions=("first", "second"))],
                           dataset="ade20k", style="predicted")
        with pytest.raises(SchemaError):
            ingest(p)

    def test_narrative_summarized_through_llm(self, tmp_path):
        narrative = ("In this picture we can see a flower vase and a name "
                     "board on the platform.")
        p = write_manifest(tmp_path / "m.jsonl",
                           [record(narrative=narrative)],
                           dataset="openimages", style="localized_narrative")
        llm = FakeLlm(completion="CAPTION: A flower vase and a name board.")
        pairs = ingest(p, llm=llm)
        assert pairs[0].caption == "A flower vase and a name board."
        assert pairs[0].caption_provenance == \
            CaptionProvenance.NARRATIVE_SUMMARIZED
        assert narrative in llm.prompts[-1]

    def test_narrative_without_llm_rejected(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl",
                           [record(narrative="A long narrative text here.")],
                           style="localized_narrative")
        with pytest.raises(ValueError):
            ingest(p)

    def test_synthetic_image_kind_carried(self, tmp_path):
        p = write_manifest(tmp_path / "m.jsonl",
                           [record(captions=("one caption",),
                                   kind="synthetic")],
                           dataset="pickapic", style="predicted")
        assert ingest(p)[0].image.kind == ImageKind.SYNTHETIC


class TestJsonlIo:
    def test_write_read_round_trip(self, tmp_path):
        p = tmp_path / "rows.jsonl"
        rows = [{"a": 1}, {"b": [1, 2]}]
        assert write_jsonl(rows, p) == 2
        assert read_jsonl(p, dict) == rows

    def test_benchmark_instances_round_trip(self, tmp_path):
        p = tmp_path / "bench.jsonl"
        instances = [make_instance("b0", aligned=True), make_instance("b1")]
        write_benchmark_instances(instances, p)
        back = read_benchmark_instances(p)
        assert back == instances
        assert back[1].review_status == ReviewStatus.PENDING

    def test_malformed_json_line_rejected(self, tmp_path):
        p = tmp_path / "rows.jsonl"
        p.write_text('{"ok": 1}\nnot json\n')
        with pytest.raises(SchemaError):
            read_jsonl(p, dict)


CONFIG_YAML = """
backends:
  nli:
    endpoint_url: mock://jaccard
    timeout_ms: 1000
  llm:
    endpoint_url: http://llm.internal:9000/api
    auth_token: secret
    timeout_ms: 30000
    max_in_flight: 2
    retries: 5
thresholds:
  tau_c: 0.3
  tau_f: 0.7
decoding:
  temperature: 0.5
  max_tokens: 128
sampling_seed: 99
grounding:
  max_boxes: 2
  min_conf: 0.5
concurrency:
  workers: 4
generation:
  parse_retries: 3
"""


class TestConfig:
    def test_full_config_parsed(self, tmp_path):
        p = tmp_path / "config.yaml"
        p.write_text(CONFIG_YAML)
        config = load_config(p)
        assert config.tau_c == 0.3
        assert config.tau_f == 0.7
        assert config.sampling_seed == 99
        assert config.workers == 4
        assert config.parse_retries == 3
        assert config.grounding_max_boxes == 2
        assert config.grounding_min_conf == 0.5
        assert config.decoding.temperature == 0.5
        assert config.decoding.max_tokens == 128
        llm = config.backends["llm"]
        assert llm.endpoint_url == "http://llm.internal:9000/api"
        assert llm.auth_token == "secret"
        assert llm.retries == 5
        assert llm.max_in_flight == 2

    def test_defaults_applied(self, tmp_path):
        p = tmp_path / "config.yaml"
        p.write_text("backends:\n  nli:\n    endpoint_url: mock://jaccard\n")
        config = load_config(p)
        assert config.tau_c == 0.25
        assert config.tau_f == 0.75
        assert config.workers == 1

    def test_mock_path_resolved_relative_to_config(self, tmp_path):
        fixture = {"pairs": [{"premise": "p", "hypothesis": "h", "score": 0.1}]}
        (tmp_path / "nli.json").write_text(json.dumps(fixture))
        p = tmp_path / "config.yaml"
        p.write_text("backends:\n  nli:\n    endpoint_url: mock://nli.json\n")
        config = load_config(p)
        backend = config.backend("nli")
        assert backend.score_entailment("p", "h") == 0.1

    def test_jaccard_mock_built(self, tmp_path):
        p = tmp_path / "config.yaml"
        p.write_text("backends:\n  nli:\n    endpoint_url: mock://jaccard\n")
        assert isinstance(load_config(p).backend("nli"), MockNli)

    def test_unknown_role_rejected(self, tmp_path):
        p = tmp_path / "config.yaml"
        p.write_text("backends:\n  oracle:\n    endpoint_url: mock://jaccard\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_endpoint_rejected(self, tmp_path):
        p = tmp_path / "config.yaml"
        p.write_text("backends:\n  nli:\n    timeout_ms: 5\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_bad_yaml_rejected(self, tmp_path):
        p = tmp_path / "config.yaml"
        p.write_text("backends: [unbalanced")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_demo_fixture_config_loads(self):
        config = load_config(FIXTURES / "demo.yaml")
        assert config.sampling_seed == 7
        assert set(config.backends) >= {"llm", "nli", "grounding"}

    def test_templates_dir_override(self, tmp_path):
        from alignfeedback.core import MisalignmentType
        tdir = tmp_path / "templates"
        tdir.mkdir()
        (tdir / "custom_object.txt").write_text(
            "--CONTEXT--\ncontext text\n"
            "--FEWSHOT--\nexamples\n"
            "--TAIL--\nCreate a MISALIGNMENT of type: {category}\n"
            "CAPTION: {caption}\n")
        p = tmp_path / "config.yaml"
        p.write_text(textwrap.dedent(f"""
            backends:
              nli:
                endpoint_url: mock://jaccard
            templates_dir: {tdir}
        """))
        config = load_config(p)
        registry = config.template_registry()
        assert registry.has("custom", MisalignmentType.OBJECT)
