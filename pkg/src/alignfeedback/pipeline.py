"""End-to-end training-data generation: candidate sampling, contradiction
generation, entailment filtering, grounding, and record assembly.

Failures never abort a run (only configuration errors do); each failed pair
is skipped and tallied in RunStats:

* parse_failed — no usable generation: candidate extraction found nothing,
  the LLM output never parsed, the completion restated the caption or came
  back with the wrong category, or a backend failed before a verdict;
* rejected_contradiction / rejected_feedback — the entailment filter said
  no (records failing both tests count under rejected_contradiction);
* grounded_failed — the filter said keep but no box could be produced.

The identity ``input == emitted + parse_failed + rejected_contradiction +
rejected_feedback + grounded_failed`` holds exactly.

The same stages are exposed piecewise over "pending records" — a JSONL
carrier format that accumulates pipeline state per record (see
PendingRecord) — so generation, validation scoring, grounding, and final
export can run as separate commands.
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .candidates import (
    MisalignmentCandidate,
    NoCandidates,
    default_tagger,
    extract_candidates,
    sample_candidate,
    tag_caption,
)
from .clients import ClientError, NoDetection
from .config import ConfigError, PipelineConfig
from .core import (
    AlignedPair,
    BoxError,
    GenerationRecord,
    MisalignmentType,
    TrainingRecord,
    ValidationScores,
    Verdict,
    VisualAnnotation,
)
from .generation import (
    CategoryMismatch,
    ParseFailed,
    TemplateRegistry,
    generate_misalignment,
)
from .grounding import ground_label
from .validation import validate_generation

_MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, index: int, negative: int = 0) -> int:
    """Stable 64-bit per-record seed from (run seed, record index, negative
    index); splitmix64-style finalizer."""
    x = (base_seed * 0x9E3779B97F4A7C15
         + index * 0xBF58476D1CE4E5B9
         + negative * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass
class RunStats:
    input: int = 0
    generated: int = 0
    parse_failed: int = 0
    rejected_contradiction: int = 0
    rejected_feedback: int = 0
    grounded_failed: int = 0
    emitted: int = 0

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "generated": self.generated,
            "parse_failed": self.parse_failed,
            "rejected_contradiction": self.rejected_contradiction,
            "rejected_feedback": self.rejected_feedback,
            "grounded_failed": self.grounded_failed,
            "emitted": self.emitted,
        }

    def identity_holds(self) -> bool:
        return self.input == (self.emitted + self.parse_failed
                              + self.rejected_contradiction
                              + self.rejected_feedback
                              + self.grounded_failed)

    def failure_fraction(self) -> float:
        if self.input == 0:
            return 0.0
        return (self.input - self.emitted) / self.input


@dataclass(frozen=True)
class PendingRecord:
    """A record travelling through the staged pipeline commands.

    ``generation`` is set after the generate stage, ``validation`` after
    the validate stage, ``visual`` after the ground stage.  Serialized
    as one JSON object per line with the optional blocks simply absent
    until their stage has run.
    """
    id: str
    pair: AlignedPair
    candidate: MisalignmentCandidate
    generation: Optional[GenerationRecord] = None
    validation: Optional[ValidationScores] = None
    visual: Optional[VisualAnnotation] = None

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "pair": self.pair.to_dict(),
            "candidate": {
                "category": self.candidate.category.value,
                "span": list(self.candidate.span),
                "surface": self.candidate.surface,
            },
        }
        if self.generation is not None:
            g = self.generation
            d["generation"] = {
                "contradiction_caption": g.contradiction_caption,
                "feedback": g.feedback,
                "caption_cue": g.caption_cue,
                "contradiction_cue": g.contradiction_cue,
                "misalignment_type": g.misalignment_type.value,
                "raw_llm_text": g.raw_llm_text,
            }
        if self.validation is not None:
            d["validation"] = self.validation.to_dict()
        if self.visual is not None:
            d["visual"] = self.visual.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict, tau_c: float = 0.25, tau_f: float = 0.75) -> "PendingRecord":
        cand_d = d["candidate"]
        candidate = MisalignmentCandidate(
            category=MisalignmentType(cand_d["category"]),
            span=tuple(cand_d["span"]),
            surface=cand_d["surface"],
        )
        generation = None
        if "generation" in d:
            g = d["generation"]
            generation = GenerationRecord(
                contradiction_caption=g["contradiction_caption"],
                feedback=g["feedback"],
                caption_cue=g["caption_cue"],
                contradiction_cue=g["contradiction_cue"],
                misalignment_type=MisalignmentType(g["misalignment_type"]),
                raw_llm_text=g["raw_llm_text"],
            )
        validation = None
        if "validation" in d:
            validation = ValidationScores.from_dict(d["validation"], tau_c, tau_f)
        visual = None
        if "visual" in d:
            visual = VisualAnnotation.from_list(d["visual"])
        return cls(id=d["id"], pair=AlignedPair.from_dict(d["pair"]),
                   candidate=candidate, generation=generation,
                   validation=validation, visual=visual)


@dataclass
class _Backends:
    llm: object = None
    nli: object = None
    grounding: object = None
    tagger: object = None


def _resolve_backends(config: PipelineConfig, overrides: Optional[dict],
                      needed: Sequence[str]) -> _Backends:
    overrides = overrides or {}
    resolved = _Backends()
    for role in needed:
        if role in overrides:
            setattr(resolved, role, overrides[role])
        elif role == "tagger" and not config.has_backend("tagger"):
            resolved.tagger = default_tagger()
        else:
            setattr(resolved, role, config.backend(role))
    return resolved


def _record_id(pair: AlignedPair, negative: int, negatives_per_pair: int) -> str:
    if negatives_per_pair == 1:
        return pair.id
    return f"{pair.id}-neg{negative}"


def _check_templates(pairs: Sequence[AlignedPair],
                     registry: TemplateRegistry) -> None:
    missing = []
    for dataset in sorted({p.source_dataset for p in pairs}):
        for category in MisalignmentType:
            if not registry.has(dataset, category):
                missing.append(f"({dataset}, {category.value})")
    if missing:
        raise ConfigError(
            "no prompt template for: " + ", ".join(missing)
        )


def sample_pair_candidate(pair: AlignedPair, seed: int,
                          tagger) -> MisalignmentCandidate:
    tokens = tag_caption(pair.caption, tagger)
    cands = extract_candidates(pair.caption, tokens)
    return sample_candidate(cands, seed)


# Per-record outcomes flow through the reorder buffer as (kind, payload):
# kind is a stats bucket name or "emit".
_SKIP_PARSE = "parse_failed"
_SKIP_CONTRA = "rejected_contradiction"
_SKIP_FEEDBACK = "rejected_feedback"
_SKIP_GROUND = "grounded_failed"


def _generate_one(pair: AlignedPair, record_id: str, seed: int,
                  config: PipelineConfig, backends: _Backends,
                  registry: TemplateRegistry):
    """Candidate + generation stages; returns ("emit", PendingRecord) or a
    skip bucket."""
    try:
        candidate = sample_pair_candidate(pair, seed, backends.tagger)
    except NoCandidates:
        return (_SKIP_PARSE, None)
    try:
        generation = generate_misalignment(
            pair, candidate, backends.llm,
            registry=registry, params=config.decoding,
            retries=config.parse_retries,
        )
    except (ParseFailed, CategoryMismatch, ClientError):
        return (_SKIP_PARSE, None)
    return ("emit", PendingRecord(id=record_id, pair=pair,
                                  candidate=candidate, generation=generation))


def _validate_one(record: PendingRecord, config: PipelineConfig,
                  backends: _Backends):
    try:
        scores = validate_generation(
            record.pair.caption,
            record.generation.contradiction_caption,
            record.generation.feedback,
            backends.nli, config.tau_c, config.tau_f,
        )
    except ClientError:
        return (_SKIP_PARSE, None)
    return ("emit", replace(record, validation=scores))


def _ground_one(record: PendingRecord, config: PipelineConfig,
                backends: _Backends):
    verdict = record.validation.verdict
    if verdict in (Verdict.REJECT_CONTRADICTION, Verdict.REJECT_BOTH):
        return (_SKIP_CONTRA, None)
    if verdict is Verdict.REJECT_FEEDBACK:
        return (_SKIP_FEEDBACK, None)
    try:
        visual = ground_label(
            record.generation.caption_cue, record.pair.image,
            backends.grounding,
            max_boxes=config.grounding_max_boxes,
            min_conf=config.grounding_min_conf,
        )
    except (NoDetection, BoxError, ValueError, ClientError):
        return (_SKIP_GROUND, None)
    return ("emit", replace(record, visual=visual))


def _to_training_record(record: PendingRecord) -> TrainingRecord:
    g = record.generation
    return TrainingRecord(
        id=record.id,
        source_dataset=record.pair.source_dataset,
        image=record.pair.image,
        positive_caption=record.pair.caption,
        negative_caption=g.contradiction_caption,
        misalignment_type=g.misalignment_type,
        feedback=g.feedback,
        misalignment_in_text=g.contradiction_cue,
        visual=record.visual,
        validation=record.validation,
    )


def _run_jobs(jobs: Sequence, worker, workers: int) -> list:
    """Run ``worker`` over ``jobs`` with a thread pool; results come back
    in job order regardless of completion order."""
    if workers <= 1 or len(jobs) <= 1:
        return [worker(job) for job in jobs]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


def run_pipeline(pairs: Sequence[AlignedPair], config: PipelineConfig,
                 *,
                 negatives_per_pair: int = 1,
                 backends: Optional[dict] = None) -> tuple:
    """Full pipeline over aligned pairs -> (TrainingRecords, RunStats).

    Deterministic for a fixed sampling seed and deterministic backends: the
    per-record RNG seed depends only on (seed, pair index, negative index),
    and output order equals input order whatever the worker count.
    """
    if negatives_per_pair < 1:
        raise ValueError("negatives_per_pair must be >= 1")
    registry = config.template_registry()
    _check_templates(pairs, registry)
    resolved = _resolve_backends(config, backends,
                                 ("llm", "nli", "grounding", "tagger"))

    jobs = [
        (index, negative, pair)
        for index, pair in enumerate(pairs)
        for negative in range(negatives_per_pair)
    ]

    def process(job):
        index, negative, pair = job
        seed = derive_seed(config.sampling_seed, index, negative)
        record_id = _record_id(pair, negative, negatives_per_pair)
        kind, record = _generate_one(pair, record_id, seed, config,
                                     resolved, registry)
        if kind != "emit":
            return (kind, None, False)
        kind, record = _validate_one(record, config, resolved)
        if kind != "emit":
            return (kind, None, True)
        kind, record = _ground_one(record, config, resolved)
        if kind != "emit":
            return (kind, None, True)
        return ("emit", _to_training_record(record), True)

    stats = RunStats(input=len(jobs))
    records = []
    for kind, payload, generated in _run_jobs(jobs, process, config.workers):
        if generated:
            stats.generated += 1
        if kind == "emit":
            stats.emitted += 1
            records.append(payload)
        else:
            setattr(stats, kind, getattr(stats, kind) + 1)
    assert stats.identity_holds(), f"stats identity violated: {stats.to_dict()}"
    return records, stats


# ---------------------------------------------------------------------------
# staged variants (pending-record JSONL in, pending-record JSONL out)

def generate_pending(pairs: Sequence[AlignedPair], config: PipelineConfig,
                     *,
                     negatives_per_pair: int = 1,
                     backends: Optional[dict] = None) -> tuple:
    """Stage 1+2 only: sample a candidate and generate a contradiction per
    pair; no validation or grounding."""
    if negatives_per_pair < 1:
        raise ValueError("negatives_per_pair must be >= 1")
    registry = config.template_registry()
    _check_templates(pairs, registry)
    resolved = _resolve_backends(config, backends, ("llm", "tagger"))
    jobs = [
        (index, negative, pair)
        for index, pair in enumerate(pairs)
        for negative in range(negatives_per_pair)
    ]

    def process(job):
        index, negative, pair = job
        seed = derive_seed(config.sampling_seed, index, negative)
        record_id = _record_id(pair, negative, negatives_per_pair)
        return _generate_one(pair, record_id, seed, config, resolved, registry)

    stats = RunStats(input=len(jobs))
    out = []
    for kind, payload in _run_jobs(jobs, process, config.workers):
        if kind == "emit":
            stats.generated += 1
            stats.emitted += 1
            out.append(payload)
        else:
            setattr(stats, kind, getattr(stats, kind) + 1)
    assert stats.identity_holds()
    return out, stats


def validate_pending(records: Sequence[PendingRecord], config: PipelineConfig,
                     *, backends: Optional[dict] = None) -> tuple:
    """Score every generated record on both entailment tests.  Nothing is
    filtered here: the verdict is derivable from the stored scores, and the
    threshold sweep wants rejected records too."""
    for record in records:
        if record.generation is None:
            raise ValueError(f"record {record.id}: no generation block to score")
    resolved = _resolve_backends(config, backends, ("nli",))

    def process(record):
        return _validate_one(record, config, resolved)

    stats = RunStats(input=len(records), generated=len(records))
    out = []
    for kind, payload in _run_jobs(list(records), process, config.workers):
        if kind == "emit":
            stats.emitted += 1
            out.append(payload)
        else:
            setattr(stats, kind, getattr(stats, kind) + 1)
    assert stats.identity_holds()
    return out, stats


def ground_pending(records: Sequence[PendingRecord], config: PipelineConfig,
                   *, backends: Optional[dict] = None) -> tuple:
    """Apply the keep/reject verdict and ground kept records' caption-side
    cues.  Rejected and ungroundable records are dropped and counted."""
    for record in records:
        if record.generation is None or record.validation is None:
            raise ValueError(
                f"record {record.id}: needs generation and validation blocks"
            )
    resolved = _resolve_backends(config, backends, ("grounding",))

    def process(record):
        return _ground_one(record, config, resolved)

    stats = RunStats(input=len(records), generated=len(records))
    out = []
    for kind, payload in _run_jobs(list(records), process, config.workers):
        if kind == "emit":
            stats.emitted += 1
            out.append(payload)
        else:
            setattr(stats, kind, getattr(stats, kind) + 1)
    assert stats.identity_holds()
    return out, stats


def export_training_records(records: Sequence[PendingRecord]) -> list:
    """Convert fully-staged pending records into training records."""
    out = []
    for record in records:
        if (record.generation is None or record.validation is None
                or record.visual is None):
            raise ValueError(
                f"record {record.id}: incomplete — run generate, validate "
                "and ground stages first"
            )
        out.append(_to_training_record(record))
    return out
