"""Benchmark metrics and the model-evaluation harness.

Four headline metrics per evaluated model:

* binary accuracy on the image-text entailment question;
* feedback NLI — entailment of the predicted feedback given the reference
  feedback as premise;
* textual-misalignment NLI — same, over the misaligned-phrase cue;
* visual F1 at an IoU threshold (default 0.75), micro-averaged over the
  corpus with greedy one-to-one box matching.

Plus BLEU-4 / ROUGE-L text overlap and the agreement-correlation analysis
used to compare metric families against human consensus.
"""
from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Mapping, Optional, Sequence, Union

from scipy import stats as _scipy_stats

from .clients import (
    ClientError,
    GroundingBackend,
    NliBackend,
    NoDetection,
    VlmBackend,
)
from .core import (
    BenchmarkInstance,
    BoxError,
    NormBox,
    TargetFormatError,
    VisualAnnotation,
    parse_target,
)
from .grounding import DEFAULT_MAX_BOXES, DEFAULT_MIN_CONF, ground_cues

DEFAULT_IOU_THRESHOLD = 0.75

DEFAULT_BINARY_QUERY = "Does this image entail the description {text}?"
DEFAULT_FEEDBACK_QUERY = "Describe the misalignments between the image and the text: {text}"


class LengthMismatch(ValueError):
    """Parallel lists of unequal length."""


class MissingInstance(KeyError):
    """An agreement row has no matching per-instance score."""


class EvaluationAborted(RuntimeError):
    """A backend error stopped the harness; carries the partial report."""

    def __init__(self, cause: Exception, partial: "MetricReport") -> None:
        self.cause = cause
        self.partial = partial
        super().__init__(f"evaluation aborted: {cause}")


# ---------------------------------------------------------------------------
# box metrics

def iou(a: NormBox, b: NormBox) -> float:
    """Intersection-over-union with area = (x2-x1)(y2-y1); disjoint -> 0."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union


def match_boxes(preds: Sequence[NormBox], gts: Sequence[NormBox], t: float,
                *,
                pred_labels: Optional[Sequence[str]] = None,
                gt_labels: Optional[Sequence[str]] = None,
                label_aware: bool = False) -> tuple:
    """Greedy one-to-one matching by descending IoU.

    A (pred, gt) pair is eligible iff IoU >= t, and, under label_aware,
    additionally has equal lowercase labels.  Ties in IoU break by pred
    index then gt index.  Returns (tp, fp, fn).
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"IoU threshold must be in (0, 1], got {t}")
    if label_aware and (pred_labels is None or gt_labels is None):
        raise ValueError("label_aware matching requires pred and gt labels")
    candidates = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(gts):
            if label_aware and pred_labels[pi].lower() != gt_labels[gi].lower():
                continue
            score = iou(p, g)
            if score >= t:
                candidates.append((-score, pi, gi))
    candidates.sort()
    used_pred: set = set()
    used_gt: set = set()
    tp = 0
    for _, pi, gi in candidates:
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(pi)
        used_gt.add(gi)
        tp += 1
    return tp, len(preds) - tp, len(gts) - tp


def _prf(tp: int, fp: int, fn: int) -> tuple:
    """Precision/recall/F1 with the empty-side conventions."""
    if tp + fp == 0 and tp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def visual_f1(preds: Sequence[Sequence[NormBox]],
              gts: Sequence[Sequence[NormBox]],
              t: float = DEFAULT_IOU_THRESHOLD,
              *,
              pred_labels: Optional[Sequence[Sequence[str]]] = None,
              gt_labels: Optional[Sequence[Sequence[str]]] = None,
              label_aware: bool = False) -> tuple:
    """Micro-averaged corpus precision/recall/F1 over per-instance box lists.

    Conventions: a corpus with no predicted and no reference boxes scores
    1.0; when exactly one side is empty the corresponding metric is 0.
    """
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} pred lists vs {len(gts)} gt lists")
    tp_sum = fp_sum = fn_sum = 0
    for i, (p, g) in enumerate(zip(preds, gts)):
        tp, fp, fn = match_boxes(
            p, g, t,
            pred_labels=pred_labels[i] if pred_labels is not None else None,
            gt_labels=gt_labels[i] if gt_labels is not None else None,
            label_aware=label_aware,
        )
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    return _prf(tp_sum, fp_sum, fn_sum)


# ---------------------------------------------------------------------------
# text metrics

def feedback_nli(gt: str, pred: str, nli: NliBackend) -> float:
    """Entailment of the prediction given the reference as premise."""
    if not gt.strip() or not pred.strip():
        raise ValueError("reference and prediction must be non-empty")
    return nli.score_entailment(gt, pred)


_PUNCT_AND_SPACE = string.punctuation + string.whitespace


def normalize_binary_answer(answer: str) -> Optional[bool]:
    """Map a raw answer to True ("yes") / False ("no") / None (anything else)."""
    token = answer.strip().lower().strip(_PUNCT_AND_SPACE)
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


def binary_accuracy(preds: Sequence[str], labels: Sequence[bool]) -> float:
    """Mean correctness of yes/no answers; unparseable answers count wrong."""
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} answers vs {len(labels)} labels")
    if not preds:
        raise ValueError("binary_accuracy over zero instances")
    correct = sum(
        1 for answer, label in zip(preds, labels)
        if normalize_binary_answer(answer) == label
    )
    return correct / len(preds)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu4(reference: Sequence[str], candidate: Sequence[str]) -> float:
    if not reference or not candidate:
        return 0.0
    # hard zero when not a single unigram overlaps
    if not (Counter(candidate) & Counter(reference)):
        return 0.0
    log_precision_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        clipped = sum((cand_counts & ref_counts).values())
        total = sum(cand_counts.values())
        log_precision_sum += math.log((clipped + 1) / (total + 1))
    geo_mean = math.exp(log_precision_sum / 4)
    c, r = len(candidate), len(reference)
    brevity = 1.0 if c >= r else math.exp(1 - r / c)
    return brevity * geo_mean


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # iterative DP, O(len(a) * len(b)) time, O(len(b)) space
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def _rouge_l(reference: Sequence[str], candidate: Sequence[str]) -> float:
    if not reference or not candidate:
        return 0.0
    lcs = _lcs_length(reference, candidate)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def text_overlap(gt: str, pred: str, metric: str) -> float:
    """Sentence-level BLEU-4 (add-one smoothing on every n-gram order, hard
    zero without unigram overlap) or ROUGE-L F-measure (beta=1).  Tokens are
    lowercased whitespace splits."""
    reference = gt.lower().split()
    candidate = pred.lower().split()
    if metric == "bleu4":
        return _bleu4(reference, candidate)
    if metric == "rougeL":
        return _rouge_l(reference, candidate)
    raise ValueError(f"unknown text-overlap metric {metric!r}")


# ---------------------------------------------------------------------------
# prediction parsing and the two-step protocol

@dataclass(frozen=True)
class ParsedPrediction:
    raw: str
    parse_ok: bool
    feedback: Optional[str] = None
    text_cue: Optional[str] = None
    visual: Optional[VisualAnnotation] = None


def parse_prediction(raw: str) -> ParsedPrediction:
    """Parse a full three-field prediction; failures keep the raw string."""
    try:
        feedback, text_cue, visual = parse_target(raw)
    except (TargetFormatError, BoxError):
        return ParsedPrediction(raw=raw, parse_ok=False)
    return ParsedPrediction(
        raw=raw, parse_ok=True,
        feedback=feedback, text_cue=text_cue, visual=visual,
    )


def parse_two_step_answer(raw: str) -> Optional[tuple]:
    """Parse a two-step answer: either "feedback | cue" or a full
    three-field prediction whose boxes are discarded (the cue is re-grounded
    externally).  Returns (feedback, text_cue) or None."""
    parts = raw.split(" | ")
    if len(parts) == 2:
        feedback, cue = parts
        if feedback and cue:
            return feedback, cue
        return None
    if len(parts) == 3:
        parsed = parse_prediction(raw)
        if parsed.parse_ok:
            return parsed.feedback, parsed.text_cue
    return None


def two_step_ground(text_cue_pred: str, image, grounding: GroundingBackend,
                    max_boxes: int = DEFAULT_MAX_BOXES,
                    min_conf: float = DEFAULT_MIN_CONF) -> VisualAnnotation:
    """Ground a predicted textual cue for models that cannot emit boxes.

    Multi-part cues joined by " and " are grounded per part and
    concatenated.  NoDetection propagates; callers score the instance with
    an empty prediction set.
    """
    if not text_cue_pred.strip():
        raise ValueError("predicted cue must be non-empty")
    cues = [c for c in text_cue_pred.split(" and ") if c.strip()]
    return ground_cues(cues, image, grounding, max_boxes, min_conf)


# ---------------------------------------------------------------------------
# agreement correlation

@dataclass(frozen=True)
class HumanAgreement:
    """Per-instance count of raters agreeing with the majority, one count
    per review question."""
    instance_id: str
    feedback: int
    text: int
    visual: int

    def __post_init__(self):
        for name in ("feedback", "text", "visual"):
            level = getattr(self, name)
            if not 0 <= level <= 3:
                raise ValueError(f"{name} agreement {level} outside 0..3")

    def level(self, question: str) -> int:
        if question not in ("feedback", "text", "visual"):
            raise ValueError(f"unknown agreement question {question!r}")
        return getattr(self, question)


@dataclass(frozen=True)
class CorrelationResult:
    question: str
    levels: tuple          # of (agreement_level, mean_score, n)
    spearman: float
    spearman_defined: bool


Scores = Union[Mapping[str, float], Sequence[float]]


def correlate(agreements: Sequence[HumanAgreement],
              per_instance_scores: Scores,
              question: str = "feedback") -> CorrelationResult:
    """Group instances by agreement level for one question and average the
    metric per level; also the Spearman rank correlation between level and
    score (0 with spearman_defined=False when either side is constant)."""
    if not agreements:
        raise ValueError("no agreement rows")
    if isinstance(per_instance_scores, Mapping):
        try:
            scores = [per_instance_scores[a.instance_id] for a in agreements]
        except KeyError as exc:
            raise MissingInstance(f"no score for instance {exc.args[0]!r}") from None
    else:
        if len(per_instance_scores) != len(agreements):
            raise MissingInstance(
                f"{len(agreements)} agreement rows vs "
                f"{len(per_instance_scores)} scores"
            )
        scores = list(per_instance_scores)
    levels = [a.level(question) for a in agreements]
    by_level: dict = {}
    for level, score in zip(levels, scores):
        by_level.setdefault(level, []).append(score)
    level_rows = tuple(
        (level, sum(vals) / len(vals), len(vals))
        for level, vals in sorted(by_level.items())
    )
    if len(set(levels)) < 2 or len(set(scores)) < 2:
        return CorrelationResult(question, level_rows, 0.0, False)
    rho = _scipy_stats.spearmanr(levels, scores).statistic
    if math.isnan(rho):
        return CorrelationResult(question, level_rows, 0.0, False)
    return CorrelationResult(question, level_rows, float(rho), True)


def write_correlation_csv(result: CorrelationResult, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["level", "mean", "n"])
    for level, mean, n in result.levels:
        writer.writerow([level, f"{mean:.6f}", n])


# ---------------------------------------------------------------------------
# the harness

@dataclass(frozen=True)
class EvalQueries:
    binary: str = DEFAULT_BINARY_QUERY
    feedback: str = DEFAULT_FEEDBACK_QUERY


@dataclass
class InstanceResult:
    id: str
    binary_correct: Optional[bool] = None
    parse_ok: Optional[bool] = None
    feedback_nli: Optional[float] = None
    text_nli: Optional[float] = None
    visual_prec: Optional[float] = None
    visual_rec: Optional[float] = None
    visual_f1: Optional[float] = None
    # matched counts feed the micro-averaged corpus F1
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "binary_correct": self.binary_correct,
            "parse_ok": self.parse_ok,
            "feedback_nli": self.feedback_nli,
            "text_nli": self.text_nli,
            "visual_prec": self.visual_prec,
            "visual_rec": self.visual_rec,
            "visual_f1": self.visual_f1,
        }


_CSV_COLUMNS = ["id", "binary_correct", "parse_ok", "feedback_nli",
                "text_nli", "visual_prec", "visual_rec", "visual_f1"]


@dataclass
class MetricReport:
    per_instance: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_instance": [row.to_dict() for row in self.per_instance],
            "aggregate": self.aggregate,
        }

    def write_json(self, out: IO[str]) -> None:
        json.dump(self.to_dict(), out, indent=2)
        out.write("\n")

    def write_csv(self, out: IO[str]) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for row in self.per_instance:
            d = row.to_dict()
            writer.writerow(["" if d[c] is None else d[c] for c in _CSV_COLUMNS])


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def _assemble_report(rows: Sequence[InstanceResult]) -> MetricReport:
    rows = sorted(rows, key=lambda r: r.id)
    binary = [r.binary_correct for r in rows if r.binary_correct is not None]
    fnli = [r.feedback_nli for r in rows if r.feedback_nli is not None]
    tnli = [r.text_nli for r in rows if r.text_nli is not None]
    parsed = [r.parse_ok for r in rows if r.parse_ok is not None]
    visual_rows = [r for r in rows if r.visual_f1 is not None]
    tp = sum(r.tp for r in visual_rows)
    fp = sum(r.fp for r in visual_rows)
    fn = sum(r.fn for r in visual_rows)
    if visual_rows:
        precision, recall, f1 = _prf(tp, fp, fn)
    else:
        precision = recall = f1 = None
    aggregate = {
        "feedback_nli_mean": _mean(fnli),
        "text_nli_mean": _mean(tnli),
        "f1_at_075": f1,
        "visual_precision": precision,
        "visual_recall": recall,
        "binary_accuracy": _mean([1.0 if b else 0.0 for b in binary]),
        "parse_failure_rate": (
            (len(parsed) - sum(parsed)) / len(parsed) if parsed else None
        ),
        "n": {
            "binary": len(binary),
            "feedback_nli": len(fnli),
            "text_nli": len(tnli),
            "visual": len(visual_rows),
            "parsed": len(parsed),
        },
    }
    return MetricReport(per_instance=list(rows), aggregate=aggregate)


def _evaluate_instance(instance: BenchmarkInstance, vlm: VlmBackend,
                       nli: NliBackend, grounding: Optional[GroundingBackend],
                       mode: str, queries: EvalQueries, iou_threshold: float,
                       label_aware: bool, max_boxes: int,
                       min_conf: float) -> InstanceResult:
    row = InstanceResult(id=instance.id)
    binary_answer = vlm.query_vlm(
        instance.image, queries.binary.format(text=instance.caption)
    )
    row.binary_correct = (
        normalize_binary_answer(binary_answer) == instance.alignment_label
    )
    if instance.alignment_label:
        return row

    answer = vlm.query_vlm(
        instance.image, queries.feedback.format(text=instance.caption)
    )
    pred_feedback: Optional[str] = None
    pred_cue: Optional[str] = None
    pred_boxes: list = []
    pred_labels: list = []
    if mode == "end_to_end":
        parsed = parse_prediction(answer)
        row.parse_ok = parsed.parse_ok
        if parsed.parse_ok:
            pred_feedback = parsed.feedback
            pred_cue = parsed.text_cue
            pred_boxes = [lb.box for lb in parsed.visual]
            pred_labels = [lb.label for lb in parsed.visual]
    elif mode == "two_step":
        if grounding is None:
            raise ValueError("two_step mode requires a grounding backend")
        two_step = parse_two_step_answer(answer)
        row.parse_ok = two_step is not None
        if two_step is not None:
            pred_feedback, pred_cue = two_step
            try:
                visual = two_step_ground(
                    pred_cue, instance.image, grounding, max_boxes, min_conf
                )
                pred_boxes = [lb.box for lb in visual]
                pred_labels = [lb.label for lb in visual]
            except NoDetection:
                pred_boxes = []
                pred_labels = []
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if pred_feedback is not None and instance.gt_feedback:
        row.feedback_nli = feedback_nli(instance.gt_feedback, pred_feedback, nli)
    elif instance.gt_feedback:
        row.feedback_nli = 0.0
    if pred_cue is not None and instance.gt_misalignment_in_text:
        row.text_nli = feedback_nli(instance.gt_misalignment_in_text, pred_cue, nli)
    elif instance.gt_misalignment_in_text:
        row.text_nli = 0.0

    gt_boxes = [lb.box for lb in instance.gt_visual] if instance.gt_visual else []
    gt_labels = [lb.label for lb in instance.gt_visual] if instance.gt_visual else []
    tp, fp, fn = match_boxes(
        pred_boxes, gt_boxes, iou_threshold,
        pred_labels=pred_labels, gt_labels=gt_labels, label_aware=label_aware,
    )
    row.tp, row.fp, row.fn = tp, fp, fn
    row.visual_prec, row.visual_rec, row.visual_f1 = _prf(tp, fp, fn)
    return row


def evaluate_model(instances: Sequence[BenchmarkInstance], vlm: VlmBackend,
                   nli: NliBackend,
                   grounding: Optional[GroundingBackend] = None,
                   mode: str = "end_to_end",
                   *,
                   queries: Optional[EvalQueries] = None,
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                   label_aware: bool = False,
                   max_boxes: int = DEFAULT_MAX_BOXES,
                   min_conf: float = DEFAULT_MIN_CONF,
                   workers: int = 1) -> MetricReport:
    """Evaluate one model over a benchmark slice.

    Every instance gets the binary entailment question; misaligned
    instances additionally get the feedback question, parsed according to
    ``mode``.  Unparseable predictions score zero on the feedback metrics
    and are tallied in the aggregate parse-failure rate.  A backend error
    aborts the run and raises EvaluationAborted carrying the report over
    the instances completed so far.
    """
    queries = queries or EvalQueries()
    rows: list = []

    def run_one(instance: BenchmarkInstance) -> InstanceResult:
        return _evaluate_instance(
            instance, vlm, nli, grounding, mode, queries,
            iou_threshold, label_aware, max_boxes, min_conf,
        )

    if workers <= 1:
        for instance in instances:
            try:
                rows.append(run_one(instance))
            except ClientError as exc:
                raise EvaluationAborted(exc, _assemble_report(rows)) from exc
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_one, inst): inst for inst in instances}
            abort: Optional[Exception] = None
            for future in concurrent.futures.as_completed(futures):
                try:
                    rows.append(future.result())
                except ClientError as exc:
                    abort = exc
                    for pending in futures:
                        pending.cancel()
                    break
            if abort is not None:
                raise EvaluationAborted(abort, _assemble_report(rows)) from abort
    return _assemble_report(rows)
