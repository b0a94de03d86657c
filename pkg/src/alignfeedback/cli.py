"""Command-line surface.

Exit codes: 0 success; 1 when per-record failures exceed ``--fail-threshold``
or a backend aborts a run part-way (partial results are still written);
2 on configuration or usage errors.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional

import click

from . import datasets
from .clients import ClientError
from .config import ConfigError, PipelineConfig, load_config
from .core import AlignedPair
from .datasets import SchemaError
from .evaluation import EvaluationAborted, HumanAgreement, MissingInstance, correlate, evaluate_model, write_correlation_csv
from .pipeline import (
    PendingRecord,
    RunStats,
    export_training_records,
    generate_pending,
    ground_pending,
    run_pipeline,
    validate_pending,
)
from .validation import EmptyInput, sweep_thresholds, write_heatmap_csv

_PATH_IN = click.Path(exists=True, dir_okay=False, path_type=Path)
_PATH_OUT = click.Path(dir_okay=False, path_type=Path)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config_or_exit(path: Path) -> PipelineConfig:
    try:
        return load_config(path)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        _fail(2, str(exc))


def _apply_overrides(config: PipelineConfig, seed: Optional[int],
                     workers: Optional[int]) -> PipelineConfig:
    changes = {}
    if seed is not None:
        if seed < 0:
            _fail(2, "--seed must be >= 0")
        changes["sampling_seed"] = seed
    if workers is not None:
        if workers < 1:
            _fail(2, "--workers must be >= 1")
        changes["workers"] = workers
    return dataclasses.replace(config, **changes) if changes else config


def _write_stats(out: Path, stats: RunStats) -> Path:
    sidecar = Path(str(out) + ".stats.json")
    sidecar.write_text(json.dumps(stats.to_dict(), indent=2) + "\n", "utf-8")
    return sidecar


def _threshold_exit(stats: RunStats, fail_threshold: float) -> None:
    fraction = stats.failure_fraction()
    if fraction > fail_threshold:
        _fail(1, f"failure fraction {fraction:.4f} exceeds "
                 f"--fail-threshold {fail_threshold:g}")


def _load_pairs(config: PipelineConfig, manifest: Optional[Path],
                pairs: Optional[Path]) -> list:
    if (manifest is None) == (pairs is None):
        _fail(2, "provide exactly one of --manifest or --pairs")
    try:
        if manifest is not None:
            llm = config.backend("llm") if config.has_backend("llm") else None
            return datasets.ingest(manifest, llm=llm,
                                   registry=config.template_registry())
        return datasets.read_jsonl(pairs, AlignedPair.from_dict)
    except SchemaError as exc:
        _fail(2, str(exc))
    except ClientError as exc:
        _fail(1, f"backend failure during ingest: {exc}")
    except (ConfigError, ValueError) as exc:
        _fail(2, str(exc))


def _load_pending(path: Path, config: Optional[PipelineConfig] = None) -> list:
    tau_c = config.tau_c if config else 0.25
    tau_f = config.tau_f if config else 0.75
    try:
        return [PendingRecord.from_dict(d, tau_c, tau_f)
                for d in datasets.iter_jsonl_dicts(path)]
    except SchemaError as exc:
        _fail(2, str(exc))
    except (KeyError, TypeError, ValueError) as exc:
        _fail(2, f"{path}: bad pending record: {exc}")


def _write_pending(records, path: Path) -> None:
    datasets.write_jsonl((r.to_dict() for r in records), path)


def _parse_grid(text: str, name: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        _fail(2, f"{name} must be a comma-separated list of numbers")
    if not values:
        _fail(2, f"{name} must contain at least one value")
    return values


@click.group()
def main() -> None:
    """Pipeline, evaluation, and review tooling for image-text
    misalignment feedback data."""


# ---------------------------------------------------------------------------
# data generation

@main.command()
@click.option("--manifest", "manifest_path", required=True, type=_PATH_IN,
              help="Dataset manifest JSONL.")
@click.option("--config", "config_path", type=_PATH_IN, default=None,
              help="Pipeline config; required for narrative manifests "
                   "(caption summarization needs the LLM backend).")
@click.option("--out", "out_path", required=True, type=_PATH_OUT,
              help="Aligned-pair JSONL to write.")
def ingest(manifest_path: Path, config_path: Optional[Path],
           out_path: Path) -> None:
    """Turn a dataset manifest into aligned image-text pairs."""
    llm = None
    registry = None
    if config_path is not None:
        config = _load_config_or_exit(config_path)
        registry = config.template_registry()
        if config.has_backend("llm"):
            llm = config.backend("llm")
    try:
        pairs = datasets.ingest(manifest_path, llm=llm, registry=registry)
    except SchemaError as exc:
        _fail(2, str(exc))
    except ClientError as exc:
        _fail(1, f"backend failure during ingest: {exc}")
    except ValueError as exc:
        _fail(2, str(exc))
    datasets.write_jsonl((p.to_dict() for p in pairs), out_path)
    click.echo(f"ingested {len(pairs)} pairs -> {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=_PATH_IN)
@click.option("--manifest", "manifest_path", type=_PATH_IN, default=None)
@click.option("--pairs", "pairs_path", type=_PATH_IN, default=None,
              help="Aligned-pair JSONL from `ingest` (alternative to --manifest).")
@click.option("--out", "out_path", required=True, type=_PATH_OUT)
@click.option("--seed", type=int, default=None,
              help="Override the config sampling seed.")
@click.option("--workers", type=int, default=None,
              help="Override the config worker count.")
@click.option("--negatives-per-pair", type=int, default=1, show_default=True)
@click.option("--fail-threshold", type=float, default=1.0, show_default=True,
              help="Exit 1 if the failed fraction of inputs exceeds this.")
@click.option("--stop-after", type=click.Choice(["generate", "validate", "full"]),
              default="full", show_default=True,
              help="full: training records; otherwise pending records for "
                   "the staged validate/ground/export-train commands.")
def generate(config_path: Path, manifest_path: Optional[Path],
             pairs_path: Optional[Path], out_path: Path, seed: Optional[int],
             workers: Optional[int], negatives_per_pair: int,
             fail_threshold: float, stop_after: str) -> None:
    """Run the generation pipeline over aligned pairs."""
    config = _apply_overrides(_load_config_or_exit(config_path), seed, workers)
    if negatives_per_pair < 1:
        _fail(2, "--negatives-per-pair must be >= 1")
    pairs = _load_pairs(config, manifest_path, pairs_path)
    try:
        if stop_after == "full":
            records, stats = run_pipeline(
                pairs, config, negatives_per_pair=negatives_per_pair)
            datasets.write_training_records(records, out_path)
        else:
            records, stats = generate_pending(
                pairs, config, negatives_per_pair=negatives_per_pair)
            if stop_after == "validate":
                records, vstats = validate_pending(records, config)
                stats.parse_failed += vstats.parse_failed
                stats.emitted = vstats.emitted
                stats.generated = vstats.generated
            _write_pending(records, out_path)
    except ConfigError as exc:
        _fail(2, str(exc))
    sidecar = _write_stats(out_path, stats)
    click.echo(f"wrote {stats.emitted} records -> {out_path} "
               f"(stats: {sidecar})")
    click.echo(json.dumps(stats.to_dict()))
    _threshold_exit(stats, fail_threshold)


@main.command()
@click.option("--config", "config_path", required=True, type=_PATH_IN)
@click.option("--in", "in_path", required=True, type=_PATH_IN,
              help="Pending-record JSONL with generation blocks.")
@click.option("--out", "out_path", required=True, type=_PATH_OUT)
@click.option("--fail-threshold", type=float, default=1.0, show_default=True)
def validate(config_path: Path, in_path: Path, out_path: Path,
             fail_threshold: float) -> None:
    """Score pending records on both entailment tests (no filtering)."""
    config = _load_config_or_exit(config_path)
    pending = _load_pending(in_path, config)
    try:
        scored, stats = validate_pending(pending, config)
    except ValueError as exc:
        _fail(2, str(exc))
    _write_pending(scored, out_path)
    sidecar = _write_stats(out_path, stats)
    click.echo(f"scored {stats.emitted}/{stats.input} records -> {out_path} "
               f"(stats: {sidecar})")
    _threshold_exit(stats, fail_threshold)


@main.command()
@click.option("--config", "config_path", type=_PATH_IN, default=None)
@click.option("--in", "in_path", required=True, type=_PATH_IN,
              help="Pending-record JSONL with validation blocks.")
@click.option("--out", "out_path", required=True, type=_PATH_OUT,
              help="Kept-fraction heatmap CSV.")
@click.option("--grid-c", default="0.05,0.15,0.25,0.35,0.45",
              show_default=True, help="Ascending contradiction thresholds.")
@click.option("--grid-f", default="0.55,0.65,0.75,0.85,0.95",
              show_default=True, help="Ascending feedback thresholds.")
def sweep(config_path: Optional[Path], in_path: Path, out_path: Path,
          grid_c: str, grid_f: str) -> None:
    """Sweep the filter thresholds over scored records."""
    config = _load_config_or_exit(config_path) if config_path else None
    pending = _load_pending(in_path, config)
    scored = []
    for record in pending:
        if record.validation is None:
            _fail(2, f"record {record.id}: no validation block; "
                     "run `validate` first")
        scored.append(record.validation)
    gc = _parse_grid(grid_c, "--grid-c")
    gf = _parse_grid(grid_f, "--grid-f")
    try:
        matrix = sweep_thresholds(scored, gc, gf)
    except (EmptyInput, ValueError) as exc:
        _fail(2, str(exc))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        write_heatmap_csv(matrix, gc, gf, fh)
    click.echo(f"wrote {len(gc)}x{len(gf)} heatmap -> {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=_PATH_IN)
@click.option("--in", "in_path", required=True, type=_PATH_IN,
              help="Scored pending-record JSONL.")
@click.option("--out", "out_path", required=True, type=_PATH_OUT)
@click.option("--fail-threshold", type=float, default=1.0, show_default=True)
def ground(config_path: Path, in_path: Path, out_path: Path,
           fail_threshold: float) -> None:
    """Apply the keep/reject verdict and ground kept records' cues."""
    config = _load_config_or_exit(config_path)
    pending = _load_pending(in_path, config)
    try:
        grounded, stats = ground_pending(pending, config)
    except ValueError as exc:
        _fail(2, str(exc))
    _write_pending(grounded, out_path)
    sidecar = _write_stats(out_path, stats)
    click.echo(f"kept and grounded {stats.emitted}/{stats.input} records -> "
               f"{out_path} (stats: {sidecar})")
    _threshold_exit(stats, fail_threshold)


@main.command("export-train")
@click.option("--in", "in_path", required=True, type=_PATH_IN,
              help="Fully staged pending-record JSONL.")
@click.option("--out", "out_path", required=True, type=_PATH_OUT)
def export_train(in_path: Path, out_path: Path) -> None:
    """Convert staged pending records into training records."""
    pending = _load_pending(in_path)
    try:
        records = export_training_records(pending)
    except ValueError as exc:
        _fail(2, str(exc))
    datasets.write_training_records(records, out_path)
    click.echo(f"wrote {len(records)} training records -> {out_path}")


# ---------------------------------------------------------------------------
# evaluation

@main.command()
@click.option("--config", "config_path", required=True, type=_PATH_IN)
@click.option("--instances", "instances_path", required=True, type=_PATH_IN,
              help="Benchmark-instance JSONL.")
@click.option("--out", "out_path", required=True, type=_PATH_OUT,
              help="Metric report JSON.")
@click.option("--csv", "csv_path", type=_PATH_OUT, default=None,
              help="Also write the per-instance rows as CSV.")
@click.option("--mode", type=click.Choice(["end-to-end", "two-step"]),
              default="end-to-end", show_default=True)
@click.option("--iou-threshold", type=float, default=0.75, show_default=True)
@click.option("--label-aware", is_flag=True, default=False,
              help="Require matching labels (case-insensitive) for box matches.")
def evaluate(config_path: Path, instances_path: Path, out_path: Path,
             csv_path: Optional[Path], mode: str, iou_threshold: float,
             label_aware: bool) -> None:
    """Evaluate a model under test on benchmark instances."""
    config = _load_config_or_exit(config_path)
    try:
        instances = datasets.read_benchmark_instances(instances_path)
    except SchemaError as exc:
        _fail(2, str(exc))
    for role in ("vlm", "nli"):
        if not config.has_backend(role):
            _fail(2, f"config must declare a {role} backend for evaluate")
    internal_mode = mode.replace("-", "_")
    grounding = None
    if config.has_backend("grounding"):
        grounding = config.backend("grounding")
    if internal_mode == "two_step" and grounding is None:
        _fail(2, "two-step mode needs a grounding backend in the config")

    def _write_report(report) -> None:
        with open(out_path, "w", encoding="utf-8") as fh:
            report.write_json(fh)
        if csv_path is not None:
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                report.write_csv(fh)

    try:
        report = evaluate_model(
            instances, config.backend("vlm"), config.backend("nli"),
            grounding, internal_mode,
            queries=config.queries, iou_threshold=iou_threshold,
            label_aware=label_aware, max_boxes=config.grounding_max_boxes,
            min_conf=config.grounding_min_conf, workers=config.workers)
    except EvaluationAborted as exc:
        _write_report(exc.partial)
        click.echo(f"error: evaluation aborted: {exc.cause}", err=True)
        click.echo(f"partial report ({len(exc.partial.per_instance)} of "
                   f"{len(instances)} instances) -> {out_path}", err=True)
        sys.exit(1)
    _write_report(report)
    click.echo(f"evaluated {len(instances)} instances -> {out_path}")
    click.echo(json.dumps(report.to_dict()["aggregate"]))


_SCORE_FIELDS = {"feedback": "feedback_nli", "text": "text_nli",
                 "visual": "visual_f1"}


def _load_agreements(path: Path) -> list:
    text = Path(path).read_text("utf-8")
    stripped = text.lstrip()
    try:
        if stripped.startswith("["):
            rows = json.loads(text)
        else:
            rows = [json.loads(line) for line in text.splitlines()
                    if line.strip()]
        return [HumanAgreement(instance_id=r["instance_id"],
                               feedback=r["feedback"], text=r["text"],
                               visual=r["visual"])
                for r in rows]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        _fail(2, f"{path}: bad agreements file: {exc}")


def _load_scores(path: Path, question: str) -> dict:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        _fail(2, f"{path}: not JSON: {exc}")
    if isinstance(data, dict) and "per_instance" in data:
        field = _SCORE_FIELDS[question]
        scores = {}
        for row in data["per_instance"]:
            value = row.get(field)
            if value is not None:
                scores[row["id"]] = float(value)
        return scores
    if isinstance(data, dict):
        try:
            return {str(k): float(v) for k, v in data.items()}
        except (TypeError, ValueError) as exc:
            _fail(2, f"{path}: scores must be numbers: {exc}")
    _fail(2, f"{path}: expected a metric report or an id->score object")


@main.command()
@click.option("--agreements", "agreements_path", required=True, type=_PATH_IN,
              help="JSON array or JSONL of per-instance rater agreement "
                   "levels {instance_id, feedback, text, visual}.")
@click.option("--scores", "scores_path", required=True, type=_PATH_IN,
              help="Metric report JSON from `evaluate`, or an id->score map.")
@click.option("--question", type=click.Choice(["feedback", "text", "visual"]),
              default="feedback", show_default=True)
@click.option("--out", "out_path", required=True, type=_PATH_OUT,
              help="Per-level mean CSV (level, mean, n).")
def correlate_cmd(agreements_path: Path, scores_path: Path, question: str,
                  out_path: Path) -> None:
    """Correlate a metric with human agreement levels."""
    agreements = _load_agreements(agreements_path)
    scores = _load_scores(scores_path, question)
    try:
        result = correlate(agreements, scores, question)
    except (MissingInstance, ValueError) as exc:
        _fail(2, str(exc))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        write_correlation_csv(result, fh)
    click.echo(f"wrote per-level means -> {out_path}")
    click.echo(json.dumps({
        "question": result.question,
        "spearman": result.spearman,
        "spearman_defined": result.spearman_defined,
    }))


main.add_command(correlate_cmd, name="correlate")


# ---------------------------------------------------------------------------
# services

@main.command("review-serve")
@click.option("--instances", "instances_path", required=True, type=_PATH_IN,
              help="Benchmark-instance JSONL to review.")
@click.option("--log", "log_path", type=_PATH_OUT, default=None,
              help="Append-only verdict log (enables crash recovery).")
@click.option("--raters", default="r1,r2,r3", show_default=True,
              help="Comma-separated rater ids allowed to draw assignments.")
@click.option("--static", "static_dir",
              type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Built review-UI bundle to serve at /.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8017, show_default=True)
def review_serve(instances_path: Path, log_path: Optional[Path], raters: str,
                 static_dir: Optional[Path], host: str, port: int) -> None:
    """Serve the human review queue."""
    import uvicorn

    from .review import ReviewStore
    from .review_api import create_review_app

    try:
        instances = datasets.read_benchmark_instances(instances_path)
    except SchemaError as exc:
        _fail(2, str(exc))
    rater_ids = [r.strip() for r in raters.split(",") if r.strip()]
    if not rater_ids:
        _fail(2, "--raters must name at least one rater")
    store = ReviewStore(instances, log_path=log_path, raters=rater_ids)
    app = create_review_app(store, static_dir)
    click.echo(f"serving {len(instances)} instances for raters "
               f"{', '.join(rater_ids)} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("serve-mocks")
@click.option("--llm", "llm_fixtures", type=_PATH_IN, default=None,
              help="LLM completion fixture JSON.")
@click.option("--nli", "nli_fixtures", default="jaccard", show_default=True,
              help="'jaccard' or a scripted NLI fixture JSON.")
@click.option("--grounding", "grounding_fixtures", type=_PATH_IN, default=None,
              help="Grounding detection fixture JSON.")
@click.option("--vlm", "vlm_fixtures", type=_PATH_IN, default=None,
              help="Scripted VLM answer fixture JSON.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8018, show_default=True)
def serve_mocks(llm_fixtures: Optional[Path], nli_fixtures: str,
                grounding_fixtures: Optional[Path],
                vlm_fixtures: Optional[Path], host: str, port: int) -> None:
    """Serve deterministic mock backends over the wire protocol."""
    import uvicorn

    from .mockserver import build_mock_backends, create_mock_app

    nli_path: Optional[Path] = None
    if nli_fixtures != "jaccard":
        nli_path = Path(nli_fixtures)
        if not nli_path.is_file():
            _fail(2, f"--nli: no such fixture file: {nli_path}")
    try:
        backends = build_mock_backends(
            llm_fixtures=llm_fixtures, nli_fixtures=nli_path,
            grounding_fixtures=grounding_fixtures, vlm_fixtures=vlm_fixtures)
    except (OSError, ValueError, KeyError) as exc:
        _fail(2, f"bad fixture file: {exc}")
    app = create_mock_app(backends)
    click.echo(f"serving mock roles {', '.join(sorted(backends))} "
               f"on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
