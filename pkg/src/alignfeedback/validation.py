"""Entailment-based filtering of generated contradictions.

Two scores per generated record:

* contradiction_score — entailment of the contradiction given the original
  caption as premise.  A *low* score means the contradiction genuinely
  contradicts.
* feedback_score — entailment of the feedback text given a synthetic premise
  juxtaposing both captions.  A *high* score means the feedback accurately
  describes the change.

A record is kept iff contradiction_score < tau_c and feedback_score > tau_f,
both strict; scores landing exactly on a threshold are rejected.
"""
from __future__ import annotations

import csv
from typing import IO, Sequence, Union

from .clients import NliBackend
from .core import (
    DEFAULT_TAU_C,
    DEFAULT_TAU_F,
    ValidationScores,
    Verdict,
    decide_verdict,
)

FEEDBACK_PREMISE_TEMPLATE = "EXPECTED CAPTION: {contradiction} . ACTUAL CAPTION: {original}"


class EmptyInput(ValueError):
    """A sweep was requested over no scored records."""


def score_contradiction(original: str, contradiction: str, nli: NliBackend) -> float:
    """Entailment probability of the contradiction given the original
    caption (premise = original, hypothesis = contradiction)."""
    if not original.strip() or not contradiction.strip():
        raise ValueError("original and contradiction must be non-empty")
    return nli.score_entailment(original, contradiction)


def feedback_premise(original: str, contradiction: str) -> str:
    return FEEDBACK_PREMISE_TEMPLATE.format(
        contradiction=contradiction, original=original
    )


def score_feedback(original: str, contradiction: str, feedback: str,
                   nli: NliBackend) -> float:
    """Entailment probability of the feedback given the expected/actual
    caption juxtaposition as premise."""
    if not original.strip() or not contradiction.strip() or not feedback.strip():
        raise ValueError("original, contradiction and feedback must be non-empty")
    return nli.score_entailment(feedback_premise(original, contradiction), feedback)


def apply_filter(contradiction_score: float, feedback_score: float,
                 tau_c: float = DEFAULT_TAU_C,
                 tau_f: float = DEFAULT_TAU_F) -> Verdict:
    """Keep/reject decision; strict comparisons at both thresholds."""
    for score in (contradiction_score, feedback_score):
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")
    return decide_verdict(contradiction_score, feedback_score, tau_c, tau_f)


def validate_generation(original: str, contradiction: str, feedback: str,
                        nli: NliBackend,
                        tau_c: float = DEFAULT_TAU_C,
                        tau_f: float = DEFAULT_TAU_F) -> ValidationScores:
    """Score one generated record on both tests and attach the verdict."""
    c_score = score_contradiction(original, contradiction, nli)
    f_score = score_feedback(original, contradiction, feedback, nli)
    return ValidationScores.from_scores(c_score, f_score, tau_c, tau_f)


ScorePair = Union[ValidationScores, tuple]


def _as_pair(item: ScorePair) -> tuple:
    if isinstance(item, ValidationScores):
        return (item.contradiction_score, item.feedback_score)
    c, f = item
    return (float(c), float(f))


def sweep_thresholds(scored: Sequence[ScorePair],
                     grid_c: Sequence[float],
                     grid_f: Sequence[float]) -> list:
    """Retention matrix: cell [i][j] = fraction of records kept under
    thresholds (grid_c[i], grid_f[j])."""
    if not scored:
        raise EmptyInput("no scored records to sweep")
    if not grid_c or not grid_f:
        raise ValueError("threshold grids must be non-empty")
    if list(grid_c) != sorted(grid_c) or list(grid_f) != sorted(grid_f):
        raise ValueError("threshold grids must be sorted ascending")
    pairs = [_as_pair(item) for item in scored]
    n = len(pairs)
    matrix = []
    for tau_c in grid_c:
        row = []
        for tau_f in grid_f:
            kept = sum(
                1 for (c, f) in pairs
                if decide_verdict(c, f, tau_c, tau_f) is Verdict.KEEP
            )
            row.append(kept / n)
        matrix.append(row)
    return matrix


def write_heatmap_csv(matrix: Sequence[Sequence[float]],
                      grid_c: Sequence[float],
                      grid_f: Sequence[float],
                      out: IO[str]) -> None:
    """Write the retention heatmap: header row is the tau_f grid, first
    column is the tau_c grid, cells carry 4 decimals."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["tau_c/tau_f"] + [_format_tau(tau) for tau in grid_f])
    for tau_c, row in zip(grid_c, matrix):
        writer.writerow([_format_tau(tau_c)] + [f"{cell:.4f}" for cell in row])


def _format_tau(tau: float) -> str:
    text = f"{tau:g}"
    return text
