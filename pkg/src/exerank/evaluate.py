"""Corpus-level metrics: execution accuracy, calibration, outcome buckets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import canonical
from .corpus import TaskInstance
from .execution import ExecutionOutcome
from .rerank import ScoredCandidate
from .verifier import atomic_value, magnitude_bucket

DEFAULT_PERCENTILES = tuple(range(10, 101, 10))

SCORERS = ("verifier", "generator", "joint")


@dataclass(frozen=True)
class EvaluationReport:
    """Per-strategy execution accuracy plus the per-task selections."""

    accuracies: dict[str, float]
    oracle_accuracy: float
    selections: dict[str, dict[str, dict]]  # strategy -> task_id -> record
    task_count: int
    config_digest: str
    seed: int

    def __post_init__(self) -> None:
        for strategy, accuracy in self.accuracies.items():
            if not 0.0 <= accuracy <= 1.0:
                raise ValueError(f"accuracy out of range for {strategy}")
            if accuracy > self.oracle_accuracy + 1e-12:
                raise ValueError(
                    f"oracle bound violated: {strategy} {accuracy} > {self.oracle_accuracy}"
                )

    def to_dict(self) -> dict:
        return {
            "accuracies": dict(sorted(self.accuracies.items())),
            "oracle_accuracy": self.oracle_accuracy,
            "task_count": self.task_count,
            "selections": {
                strategy: dict(sorted(records.items()))
                for strategy, records in sorted(self.selections.items())
            },
            "config_digest": self.config_digest,
            "seed": self.seed,
        }

    def table_text(self) -> str:
        lines = [f"{'strategy':<12} {'accuracy':>9}   ({self.task_count} tasks)"]
        for strategy in sorted(self.accuracies):
            if strategy != "oracle":
                lines.append(f"{strategy:<12} {self.accuracies[strategy]:>9.4f}")
        lines.append(f"{'oracle':<12} {self.oracle_accuracy:>9.4f}")
        return "\n".join(lines)


def execution_accuracy(
    selections: Mapping[str, ScoredCandidate | None],
    tasks: Sequence[TaskInstance],
) -> float:
    """Fraction of tasks whose selected program yields the gold result."""
    if not tasks:
        raise ValueError("no tasks")
    by_id = {t.task_id: t for t in tasks}
    correct = 0
    for task_id, selection in selections.items():
        if selection is None:
            continue
        task = by_id[task_id]
        correct += canonical.label_candidate(selection.outcome, task)
    return correct / len(tasks)


# ---------------------------------------------------------------------------
# calibration (precision at score percentiles)


@dataclass(frozen=True)
class CalibrationCurve:
    """Precision among candidates at or above each per-task score percentile."""

    thresholds: tuple[int, ...]
    precision: dict[str, tuple[float, ...]]  # scorer -> one point per threshold

    def __post_init__(self) -> None:
        if list(self.thresholds) != sorted(set(self.thresholds)):
            raise ValueError("thresholds must be strictly increasing")
        for scorer, points in self.precision.items():
            for point in points:
                if not 0.0 <= point <= 1.0:
                    raise ValueError(f"precision out of range for {scorer}")

    def to_csv_text(self) -> str:
        scorers = sorted(self.precision)
        lines = ["threshold," + ",".join(scorers)]
        for i, threshold in enumerate(self.thresholds):
            row = [str(threshold)] + [repr(self.precision[s][i]) for s in scorers]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _scorer_value(cand: ScoredCandidate, scorer: str) -> float:
    if scorer == "verifier":
        return cand.verifier_prob
    if scorer == "generator":
        return cand.gen_log_term
    if scorer == "joint":
        return cand.joint_log_score
    raise ValueError(f"unknown scorer {scorer!r}")


def calibration_report(
    corpus: Sequence[tuple[TaskInstance, Sequence[ScoredCandidate]]],
    thresholds: Sequence[int] = DEFAULT_PERCENTILES,
) -> CalibrationCurve:
    """Precision of each scorer's top-ranked candidates per percentile.

    For each task the threshold is the p-th percentile of that task's
    candidate scores; candidates at or above it are pooled across tasks and
    their label mean is the precision. The 100th percentile keeps exactly
    the per-task top-1 candidates.
    """
    if not corpus or all(not cands for _, cands in corpus):
        raise ValueError("no scored candidates")
    labels = {}
    for task, cands in corpus:
        for cand in cands:
            labels[id(cand)] = canonical.label_candidate(cand.outcome, task)

    precision: dict[str, tuple[float, ...]] = {}
    for scorer in SCORERS:
        points = []
        for p in thresholds:
            kept_correct = 0
            kept_total = 0
            for _, cands in corpus:
                if not cands:
                    continue
                values = np.array([_scorer_value(c, scorer) for c in cands])
                cutoff = np.percentile(values, p)
                for cand, value in zip(cands, values):
                    if value >= cutoff:
                        kept_total += 1
                        kept_correct += labels[id(cand)]
            points.append(kept_correct / kept_total if kept_total else 0.0)
        precision[scorer] = tuple(points)
    return CalibrationCurve(thresholds=tuple(thresholds), precision=precision)


# ---------------------------------------------------------------------------
# win/fail outcome analysis against the greedy baseline


@dataclass
class OutcomeBuckets:
    """Why reranking beat greedy (wins) or missed a correct sample (fails)."""

    win_greedy_had_error: int = 0
    win_type_mismatch: int = 0
    win_range_mismatch: int = 0
    win_others: int = 0
    fail_no_correct_in_samples: int = 0
    fail_same_type_and_range: int = 0
    fail_others: int = 0
    wins: list[str] = field(default_factory=list)
    fails: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "wins": {
                "greedy_had_error": self.win_greedy_had_error,
                "type_mismatch_vs_greedy": self.win_type_mismatch,
                "range_mismatch_vs_greedy": self.win_range_mismatch,
                "others": self.win_others,
                "total": len(self.wins),
            },
            "fails": {
                "no_correct_in_samples": self.fail_no_correct_in_samples,
                "same_type_and_range": self.fail_same_type_and_range,
                "others": self.fail_others,
                "total": len(self.fails),
            },
        }


def result_type_of(outcome: ExecutionOutcome) -> str:
    """Coarse result type used for mismatch bucketing."""
    if outcome.status != "success":
        return "error"
    if outcome.scalar is not None:
        return outcome.scalar[0]
    if outcome.per_test is not None:
        return "tests"
    atom = atomic_value(outcome.canonical_repr, "table")
    if atom is not None:
        if canonical.is_integer_text(atom):
            return "int"
        if canonical.parse_number(atom) is not None:
            return "float"
        return "str"
    return "table"


def _atom_of(outcome: ExecutionOutcome) -> str | None:
    if outcome.status != "success":
        return None
    if outcome.scalar is not None:
        return outcome.scalar[1]
    if outcome.per_test is not None:
        return None
    return atomic_value(outcome.canonical_repr, "table")


def outcome_analysis(
    reranked_selections: Mapping[str, ScoredCandidate],
    greedy_selections: Mapping[str, ScoredCandidate],
    tasks: Sequence[TaskInstance],
    all_scored: Mapping[str, Sequence[ScoredCandidate]],
) -> OutcomeBuckets:
    """Bucket tasks where reranking beat greedy, and tasks where it failed.

    Wins compare the greedy outcome to the reranked one: execution error,
    result-type mismatch, magnitude-range mismatch, or others. Fails split
    into: no correct candidate sampled at all; a correct candidate exists
    with the same type and range as the selected wrong one; others.
    """
    by_id = {t.task_id: t for t in tasks}
    buckets = OutcomeBuckets()
    for task_id, task in by_id.items():
        selection = reranked_selections.get(task_id)
        if selection is None:
            continue
        selected_correct = canonical.label_candidate(selection.outcome, task) == 1
        if selected_correct:
            greedy = greedy_selections.get(task_id)
            if greedy is None or canonical.label_candidate(greedy.outcome, task) == 1:
                continue
            buckets.wins.append(task_id)
            if greedy.outcome.status != "success":
                buckets.win_greedy_had_error += 1
            elif result_type_of(greedy.outcome) != result_type_of(selection.outcome):
                buckets.win_type_mismatch += 1
            elif magnitude_bucket(_atom_of(greedy.outcome)) != magnitude_bucket(
                _atom_of(selection.outcome)
            ):
                buckets.win_range_mismatch += 1
            else:
                buckets.win_others += 1
        else:
            buckets.fails.append(task_id)
            correct = [
                c
                for c in all_scored.get(task_id, ())
                if canonical.label_candidate(c.outcome, task) == 1
            ]
            if not correct:
                buckets.fail_no_correct_in_samples += 1
                continue
            selected_type = result_type_of(selection.outcome)
            selected_range = magnitude_bucket(_atom_of(selection.outcome))
            if any(
                result_type_of(c.outcome) == selected_type
                and magnitude_bucket(_atom_of(c.outcome)) == selected_range
                for c in correct
            ):
                buckets.fail_same_type_and_range += 1
            else:
                buckets.fail_others += 1
    return buckets
