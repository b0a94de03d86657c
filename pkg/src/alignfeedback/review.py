"""Benchmark curation by human review: collect three yes/no verdicts per
candidate instance, keep the unanimously approved ones.

State is an append-only JSONL verdict log plus derived in-memory
aggregates.  Every submit is flushed and fsynced before it is
acknowledged, and reopening a store over an existing log replays it, so a
crashed service resumes with identical aggregates.  At most one verdict
per (instance, rater) is effective: resubmission replaces the earlier
one (the log keeps both; the later line wins on replay).
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .core import BenchmarkInstance, ReviewStatus
from .evaluation import HumanAgreement

QUESTIONS = ("feedback", "text", "visual")

REQUIRED_RATERS = 3


class UnknownRater(LookupError):
    pass


class UnknownInstance(LookupError):
    pass


@dataclass(frozen=True)
class ReviewVerdict:
    instance_id: str
    rater_id: str
    feedback_ok: bool
    text_ok: bool
    visual_ok: bool
    submitted_at: str

    def __post_init__(self):
        if not self.instance_id or not isinstance(self.instance_id, str):
            raise ValueError("instance_id must be a non-empty string")
        if not self.rater_id or not isinstance(self.rater_id, str):
            raise ValueError("rater_id must be a non-empty string")
        for q in ("feedback_ok", "text_ok", "visual_ok"):
            if not isinstance(getattr(self, q), bool):
                raise ValueError(f"{q} must be a boolean")

    def answer(self, question: str) -> bool:
        if question not in QUESTIONS:
            raise ValueError(f"unknown question {question!r}")
        return getattr(self, f"{question}_ok")

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "rater_id": self.rater_id,
            "feedback_ok": self.feedback_ok,
            "text_ok": self.text_ok,
            "visual_ok": self.visual_ok,
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewVerdict":
        return cls(
            instance_id=d["instance_id"],
            rater_id=d["rater_id"],
            feedback_ok=d["feedback_ok"],
            text_ok=d["text_ok"],
            visual_ok=d["visual_ok"],
            submitted_at=d.get("submitted_at", ""),
        )


@dataclass(frozen=True)
class ReviewAggregate:
    instance_id: str
    n_raters: int
    yes_counts: Dict[str, int]
    unanimous_all_yes: bool

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "n_raters": self.n_raters,
            "yes_counts": dict(self.yes_counts),
            "unanimous_all_yes": self.unanimous_all_yes,
        }


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _aggregate(instance_id: str,
               verdicts: Sequence[ReviewVerdict]) -> ReviewAggregate:
    yes_counts = {q: sum(1 for v in verdicts if v.answer(q)) for q in QUESTIONS}
    n = len(verdicts)
    unanimous = n >= REQUIRED_RATERS and all(
        yes_counts[q] == n for q in QUESTIONS)
    return ReviewAggregate(instance_id=instance_id, n_raters=n,
                           yes_counts=yes_counts, unanimous_all_yes=unanimous)


class ReviewStore:
    """Instance queue + verdict collection with durable persistence.

    All public methods are safe to call from request-handler threads; a
    single lock serializes mutations and snapshots reads.
    """

    def __init__(self, instances: Sequence[BenchmarkInstance],
                 log_path: Optional[Path] = None,
                 raters: Sequence[str] = ()):
        self._instances: List[BenchmarkInstance] = list(instances)
        self._by_id = {inst.id: inst for inst in self._instances}
        if len(self._by_id) != len(self._instances):
            raise ValueError("duplicate instance ids")
        self._order = {inst.id: i for i, inst in enumerate(self._instances)}
        self._raters: Dict[str, None] = {}
        for rater in raters:
            self._raters[rater] = None
        self._verdicts: Dict[Tuple[str, str], ReviewVerdict] = {}
        self._lock = threading.RLock()
        self._log_path = Path(log_path) if log_path is not None else None
        self._log_file = None
        self.replay_skipped = 0
        self.replay_truncated = False
        if self._log_path is not None:
            self._replay()
            self._log_file = open(self._log_path, "a", encoding="utf-8")

    # -- persistence --------------------------------------------------------

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        lines = self._log_path.read_text("utf-8").splitlines()
        last_content = None
        for i, line in enumerate(lines):
            if line.strip():
                last_content = i
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                verdict = ReviewVerdict.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                if i == last_content:
                    # torn final write from a crash mid-append
                    self.replay_truncated = True
                    return
                raise ValueError(
                    f"{self._log_path}:{i + 1}: bad verdict line: {exc}"
                ) from exc
            if verdict.instance_id not in self._by_id:
                self.replay_skipped += 1
                continue
            self._verdicts[(verdict.instance_id, verdict.rater_id)] = verdict

    def _append(self, verdict: ReviewVerdict) -> None:
        if self._log_file is None:
            return
        self._log_file.write(
            json.dumps(verdict.to_dict(), ensure_ascii=False) + "\n")
        self._log_file.flush()
        os.fsync(self._log_file.fileno())

    def close(self) -> None:
        with self._lock:
            if self._log_file is not None:
                self._log_file.close()
                self._log_file = None

    def __enter__(self) -> "ReviewStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- raters and instances ----------------------------------------------

    def register_rater(self, rater_id: str) -> None:
        if not rater_id:
            raise ValueError("rater_id must be non-empty")
        with self._lock:
            self._raters[rater_id] = None

    @property
    def raters(self) -> List[str]:
        with self._lock:
            return list(self._raters)

    @property
    def instances(self) -> List[BenchmarkInstance]:
        return list(self._instances)

    def get_instance(self, instance_id: str) -> BenchmarkInstance:
        try:
            return self._by_id[instance_id]
        except KeyError:
            raise UnknownInstance(instance_id) from None

    def _verdicts_for(self, instance_id: str) -> List[ReviewVerdict]:
        return [v for (iid, _), v in self._verdicts.items()
                if iid == instance_id]

    def verdict_count(self, instance_id: str) -> int:
        with self._lock:
            self.get_instance(instance_id)
            return len(self._verdicts_for(instance_id))

    # -- core operations ----------------------------------------------------

    def assign_next(self, rater_id: str) -> Optional[BenchmarkInstance]:
        """Next instance for this rater: one they have not judged and that
        still needs verdicts (fewer than three), lowest verdict count first,
        ties broken by queue order.  None when nothing assignable remains."""
        with self._lock:
            if rater_id not in self._raters:
                raise UnknownRater(rater_id)
            candidates = []
            for inst in self._instances:
                if (inst.id, rater_id) in self._verdicts:
                    continue
                count = len(self._verdicts_for(inst.id))
                if count >= REQUIRED_RATERS:
                    continue
                candidates.append((count, self._order[inst.id], inst))
            if not candidates:
                return None
            candidates.sort(key=lambda c: (c[0], c[1]))
            return candidates[0][2]

    def submit_verdict(self, verdict: ReviewVerdict) -> ReviewAggregate:
        with self._lock:
            if verdict.instance_id not in self._by_id:
                raise UnknownInstance(verdict.instance_id)
            if not verdict.submitted_at:
                verdict = replace(verdict, submitted_at=_now_iso())
            self._append(verdict)
            self._verdicts[(verdict.instance_id, verdict.rater_id)] = verdict
            return _aggregate(verdict.instance_id,
                              self._verdicts_for(verdict.instance_id))

    def aggregate(self, instance_id: str) -> ReviewAggregate:
        with self._lock:
            self.get_instance(instance_id)
            return _aggregate(instance_id, self._verdicts_for(instance_id))

    def agreement_histogram(self, question: str):
        """Counts over agreement levels {0,1,2,3} for instances with exactly
        three verdicts; returns (counts, n_complete, n_incomplete) where
        n_incomplete tallies instances excluded for having a different
        verdict count."""
        if question not in QUESTIONS:
            raise ValueError(f"unknown question {question!r}; "
                             f"expected one of {', '.join(QUESTIONS)}")
        with self._lock:
            counts = {0: 0, 1: 0, 2: 0, 3: 0}
            incomplete = 0
            for inst in self._instances:
                verdicts = self._verdicts_for(inst.id)
                if len(verdicts) != REQUIRED_RATERS:
                    incomplete += 1
                    continue
                level = sum(1 for v in verdicts if v.answer(question))
                counts[level] += 1
            n_complete = sum(counts.values())
            return counts, n_complete, incomplete

    def export_benchmark(self):
        """(accepted instances, acceptance rate, total) — unanimously
        approved instances marked accepted, everything else rejected.  Pure
        with respect to the store: statuses are set on copies."""
        with self._lock:
            accepted = []
            for inst in self._instances:
                agg = _aggregate(inst.id, self._verdicts_for(inst.id))
                if agg.unanimous_all_yes:
                    accepted.append(
                        replace(inst, review_status=ReviewStatus.ACCEPTED))
            n_total = len(self._instances)
            rate = len(accepted) / n_total if n_total else 0.0
            return accepted, rate, n_total

    def human_agreements(self) -> List[HumanAgreement]:
        """Per-question agreement levels for instances with exactly three
        verdicts, in queue order — the bridge into metric correlation."""
        with self._lock:
            out = []
            for inst in self._instances:
                verdicts = self._verdicts_for(inst.id)
                if len(verdicts) != REQUIRED_RATERS:
                    continue
                out.append(HumanAgreement(
                    instance_id=inst.id,
                    feedback=sum(1 for v in verdicts if v.feedback_ok),
                    text=sum(1 for v in verdicts if v.text_ok),
                    visual=sum(1 for v in verdicts if v.visual_ok),
                ))
            return out
