"""The learned verifier: training-set creation, features, objective, scoring.

The verifier estimates the probability that a candidate program is correct
given the NL input, the program text, and the canonical execution result.
It is a logistic model over a fixed feature schema capturing what execution
exposes: status, result kind, value type and magnitude, agreement with type
cues in the question, lexical overlap, generation scores, and error-reason
hash buckets.

Training minimizes per-task negative log-likelihood normalized by the number
of candidates in the task's group, so tasks with many unique samples do not
dominate learning. Groups are randomly down-sampled to a cap at the start of
every epoch.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import requests

from . import canonical
from .corpus import DatasetKind, TaskInstance
from .execution import ExecutionOutcome
from .generation import CandidateSet, ProgramCandidate

FEATURE_SPEC_VERSION = "fs-1"

FEATURE_NAMES: tuple[str, ...] = (
    "status_success",
    "status_error",
    "status_timeout",
    "kind_table",
    "kind_scalar",
    "kind_test_suite",
    "kind_error",
    "result_len_log",
    "numeric",
    "numeric_sign",
    "mag_lt_1",
    "mag_1_to_1e3",
    "mag_gt_1e3",
    "cue_present",
    "cue_match",
    "overlap_nl_result",
    "overlap_nl_program",
    "program_len_log",
    "cum_logprob",
    "norm_logprob",
    "dup_count_log",
    *(f"error_bucket_{i}" for i in range(8)),
)

DIMENSION = len(FEATURE_NAMES)

_STATUS_INDEX = {"success": 0, "error": 1, "timeout": 2}
_KIND_INDEX = {"table": 3, "scalar": 4, "test_suite": 5, "error": 6}

_INT_CUES = ("how many", "how much", "count", "number of", "total number")
_FLOAT_CUES = ("average", "ratio", "percent", "fraction", "mean of")
_BOOL_CUES = ("is it", "is there", "are there", "does ", "do they", "whether")

_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class VerificationExample:
    """One (input, program, result, label) training/scoring record."""

    task_id: str
    input_text: str
    program_text: str
    result_text: str
    status: str
    result_kind: str  # "table" | "scalar" | "test_suite" | "error"
    label: int
    cumulative_logprob: float = 0.0
    token_count: int = 1
    duplicate_count: int = 1
    source: str = "sampled"


@dataclass
class TaskGroup:
    """All verification examples of one task; the unit of loss normalization."""

    task_id: str
    examples: list[VerificationExample]
    _features: np.ndarray | None = field(default=None, repr=False)
    _labels: np.ndarray | None = field(default=None, repr=False)

    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = np.stack([featurize(e) for e in self.examples])
        return self._features

    def labels(self) -> np.ndarray:
        if self._labels is None:
            self._labels = np.array([e.label for e in self.examples], dtype=float)
        return self._labels


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 40
    learning_rate: float = 0.5
    l2: float = 1e-4
    downsample_cap: int = 20
    seed: int = 0


@dataclass
class VerifierModel:
    weights: np.ndarray
    bias: float
    feature_spec_version: str = FEATURE_SPEC_VERSION
    config: TrainingConfig = TrainingConfig()
    training_log: list[float] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        payload = {
            "feature_spec_version": self.feature_spec_version,
            "dimension": int(self.weights.size),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "config": {
                "epochs": self.config.epochs,
                "learning_rate": self.config.learning_rate,
                "l2": self.config.l2,
                "downsample_cap": self.config.downsample_cap,
            },
            "seed": self.config.seed,
            "training_log": [float(x) for x in self.training_log],
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VerifierModel":
        payload = json.loads(Path(path).read_text())
        weights = np.array(payload["weights"], dtype=float)
        if int(payload["dimension"]) != weights.size:
            raise ValueError("model file dimension mismatch")
        cfg = payload.get("config", {})
        return cls(
            weights=weights,
            bias=float(payload["bias"]),
            feature_spec_version=payload["feature_spec_version"],
            config=TrainingConfig(
                epochs=int(cfg.get("epochs", 40)),
                learning_rate=float(cfg.get("learning_rate", 0.5)),
                l2=float(cfg.get("l2", 1e-4)),
                downsample_cap=int(cfg.get("downsample_cap", 20)),
                seed=int(payload.get("seed", 0)),
            ),
            training_log=[float(x) for x in payload.get("training_log", [])],
        )


# ---------------------------------------------------------------------------
# features


def _tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def _overlap(reference: set[str], text: str) -> float:
    tokens = _tokens(text)
    if not tokens:
        return 0.0
    return len(tokens & reference) / len(tokens)


_SINGLE_CELL = re.compile(r"^col: [^|]+ \|\| row1: ([^|]*)$")


def atomic_value(result_text: str, result_kind: str) -> str | None:
    """The single scalar a result boils down to, when there is one.

    Scalars are themselves; single-cell table results (bare value or the
    full 1x1 linearization) yield their only cell; everything else has no
    atomic value.
    """
    if result_kind == "scalar":
        return result_text
    if result_kind == "table":
        match = _SINGLE_CELL.match(result_text)
        if match:
            return match.group(1).strip()
        if (
            result_text != canonical.EMPTY_TABLE_REPR
            and " || " not in result_text
            and not result_text.startswith("col: ")
        ):
            return result_text
    return None


def magnitude_bucket(value_text: str | None) -> str | None:
    """Coarse |value| bucket: 'lt_1', '1_to_1e3', or 'gt_1e3'."""
    if value_text is None:
        return None
    parsed = canonical.parse_number(value_text)
    if parsed is None or math.isnan(parsed):
        return None
    magnitude = abs(parsed)
    if magnitude < 1:
        return "lt_1"
    if magnitude <= 1e3:
        return "1_to_1e3"
    return "gt_1e3"


def _cue_expectation(question: str) -> str | None:
    lowered = question.lower()
    if any(cue in lowered for cue in _INT_CUES):
        return "int"
    if any(cue in lowered for cue in _FLOAT_CUES):
        return "float"
    if any(cue in lowered for cue in _BOOL_CUES):
        return "bool"
    return None


def _cue_satisfied(expectation: str, value_text: str | None) -> bool:
    if value_text is None:
        return False
    if expectation == "int":
        return canonical.is_integer_text(value_text)
    if expectation == "float":
        return canonical.parse_number(value_text) is not None
    return value_text.strip().lower() in ("true", "false")


def featurize(example: VerificationExample) -> np.ndarray:
    """Deterministic feature vector for one example (see FEATURE_NAMES)."""
    v = np.zeros(DIMENSION)
    v[_STATUS_INDEX.get(example.status, 1)] = 1.0
    v[_KIND_INDEX.get(example.result_kind, 6)] = 1.0
    v[7] = math.log1p(len(example.result_text))

    atom = atomic_value(example.result_text, example.result_kind)
    parsed = canonical.parse_number(atom) if atom is not None else None
    if parsed is not None and not math.isnan(parsed):
        v[8] = 1.0
        v[9] = 0.0 if parsed == 0 else math.copysign(1.0, parsed)
        bucket = magnitude_bucket(atom)
        v[10] = 1.0 if bucket == "lt_1" else 0.0
        v[11] = 1.0 if bucket == "1_to_1e3" else 0.0
        v[12] = 1.0 if bucket == "gt_1e3" else 0.0

    expectation = _cue_expectation(example.input_text)
    if expectation is not None:
        v[13] = 1.0
        v[14] = 1.0 if _cue_satisfied(expectation, atom) else 0.0

    nl_tokens = _tokens(example.input_text)
    v[15] = _overlap(nl_tokens, example.result_text)
    v[16] = _overlap(nl_tokens, example.program_text)
    v[17] = math.log1p(example.token_count)
    v[18] = max(example.cumulative_logprob, -50.0)
    v[19] = max(example.cumulative_logprob / max(example.token_count, 1), -10.0)
    v[20] = math.log1p(example.duplicate_count)

    if example.status != "success":
        reason = example.result_text
        bucket_index = int(hashlib.sha256(reason.encode("utf-8")).hexdigest(), 16) % 8
        v[21 + bucket_index] = 1.0
    return v


# ---------------------------------------------------------------------------
# training-set creation


def result_kind_for(task: TaskInstance, outcome: ExecutionOutcome) -> str:
    if outcome.status != "success":
        return "error"
    if task.kind is DatasetKind.SQL_QUERY:
        return "table"
    if task.kind is DatasetKind.FUNCTION_WITH_TESTS:
        return "test_suite"
    return "scalar"


def example_from_candidate(
    task: TaskInstance,
    candidate: ProgramCandidate,
    outcome: ExecutionOutcome,
    label: int | None = None,
) -> VerificationExample:
    if label is None:
        label = canonical.label_candidate(outcome, task)
    return VerificationExample(
        task_id=task.task_id,
        input_text=task.nl_input,
        program_text=candidate.program_text,
        result_text=outcome.canonical_repr,
        status=outcome.status,
        result_kind=result_kind_for(task, outcome),
        label=label,
        cumulative_logprob=candidate.cumulative_logprob,
        token_count=candidate.token_count,
        duplicate_count=candidate.duplicate_count,
        source=candidate.source,
    )


def build_training_set(
    tasks: Sequence[TaskInstance],
    executed_sets: Sequence[tuple[CandidateSet, Sequence[ExecutionOutcome]]],
    execute_gold: Callable[[str, TaskInstance], ExecutionOutcome] | None = None,
) -> list[TaskGroup]:
    """Label every executed candidate and group examples by task.

    Fully-supervised tasks (gold_program present) get one extra positive
    example from executing the gold program; weakly-supervised tasks skip
    that step. A gold program that fails to execute, or whose result does
    not match the gold result, is a broken fixture and raises.
    """
    by_id: dict[str, TaskInstance] = {t.task_id: t for t in tasks}
    groups: list[TaskGroup] = []
    for candidate_set, outcomes in executed_sets:
        task = by_id.get(candidate_set.task_id)
        if task is None:
            raise ValueError(f"no task for candidate set {candidate_set.task_id!r}")
        if len(outcomes) != len(candidate_set.candidates):
            raise ValueError(f"task {task.task_id}: every candidate needs an outcome")
        examples = [
            example_from_candidate(task, candidate, outcome)
            for candidate, outcome in zip(candidate_set.candidates, outcomes)
        ]
        if task.gold_program is not None:
            if execute_gold is None:
                raise ValueError("execute_gold required: corpus has gold programs")
            gold_outcome = execute_gold(task.gold_program, task)
            if canonical.label_candidate(gold_outcome, task) != 1:
                raise ValueError(
                    f"invalid gold fixture {task.task_id}: gold program yields "
                    f"{gold_outcome.canonical_repr!r}"
                )
            gold_candidate = ProgramCandidate(
                program_text=task.gold_program,
                cumulative_logprob=0.0,
                token_count=max(len(task.gold_program.split()), 1),
                duplicate_count=1,
                source="gold",
            )
            examples.append(example_from_candidate(task, gold_candidate, gold_outcome, label=1))
        groups.append(TaskGroup(task_id=task.task_id, examples=examples))
    return groups


# ---------------------------------------------------------------------------
# objective and training


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_gradient(
    model: VerifierModel, group: TaskGroup
) -> tuple[float, np.ndarray, float]:
    """Group loss -(1/n) sum log P(v_i) and its analytic gradient.

    Per-group normalization weights every task equally in the corpus loss.
    Probabilities are clamped to [1e-12, 1 - 1e-12] inside the logs only.
    """
    X = group.features()
    y = group.labels()
    n = len(y)
    p = _sigmoid(X @ model.weights + model.bias)
    p_clamped = np.clip(p, 1e-12, 1.0 - 1e-12)
    loss = -float(np.mean(y * np.log(p_clamped) + (1 - y) * np.log(1 - p_clamped)))
    residual = (p - y) / n
    grad_w = X.T @ residual
    grad_b = float(np.sum(residual))
    return loss, grad_w, grad_b


def train(groups: Sequence[TaskGroup], config: TrainingConfig = TrainingConfig()) -> VerifierModel:
    """Mini-batch gradient descent, one task group per step.

    At every epoch start each group is randomly down-sampled (seeded) to at
    most downsample_cap examples, so large sample sets are seen piecewise
    across epochs. Training is single-threaded and bitwise deterministic for
    a fixed seed.
    """
    if not groups:
        raise ValueError("no training groups")
    all_labels = {e.label for g in groups for e in g.examples}
    if all_labels != {0, 1}:
        raise ValueError("degenerate training set: both labels required corpus-wide")

    rng = np.random.default_rng(config.seed)
    model = VerifierModel(
        weights=np.zeros(DIMENSION), bias=0.0, config=config, training_log=[]
    )
    for _ in range(config.epochs):
        views: list[TaskGroup] = []
        for group in groups:
            if len(group.examples) > config.downsample_cap:
                keep = np.sort(
                    rng.choice(len(group.examples), size=config.downsample_cap, replace=False)
                )
                X = group.features()[keep]
                y = group.labels()[keep]
                view = TaskGroup(
                    task_id=group.task_id,
                    examples=[group.examples[i] for i in keep],
                    _features=X,
                    _labels=y,
                )
                views.append(view)
            else:
                views.append(group)
        order = rng.permutation(len(views))
        epoch_loss = 0.0
        for gi in order:
            loss, grad_w, grad_b = loss_and_gradient(model, views[gi])
            model.weights -= config.learning_rate * (grad_w + config.l2 * model.weights)
            model.bias -= config.learning_rate * grad_b
            epoch_loss += loss
        model.training_log.append(epoch_loss / len(views))
    return model


def smoothed_loss_log(model: VerifierModel, window: int = 5) -> list[float]:
    """Trailing-window average of the per-epoch training loss."""
    log = model.training_log
    return [
        sum(log[max(0, i - window + 1) : i + 1]) / len(log[max(0, i - window + 1) : i + 1])
        for i in range(len(log))
    ]


def score(model: VerifierModel, example: VerificationExample) -> float:
    """P(correct) for one example; pointwise and deterministic."""
    if model.feature_spec_version != FEATURE_SPEC_VERSION:
        raise ValueError(
            f"feature spec mismatch: model {model.feature_spec_version!r}, "
            f"code {FEATURE_SPEC_VERSION!r}"
        )
    z = float(featurize(example) @ model.weights + model.bias)
    return float(_sigmoid(np.array([z]))[0])


def score_group(model: VerifierModel, group: TaskGroup) -> list[float]:
    if model.feature_spec_version != FEATURE_SPEC_VERSION:
        raise ValueError("feature spec mismatch")
    p = _sigmoid(group.features() @ model.weights + model.bias)
    return [float(x) for x in p]


# ---------------------------------------------------------------------------
# remote scorer


def remote_score(
    url: str,
    example: VerificationExample,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff: float = 0.5,
    session: requests.Session | None = None,
) -> float:
    """Delegate scoring to an external verifier over HTTP.

    POSTs the example fields and expects {"probability": p} with p in [0, 1].
    """
    import time as _time

    sess = session or requests
    body = {
        "task_id": example.task_id,
        "input_text": example.input_text,
        "program_text": example.program_text,
        "result_text": example.result_text,
        "status": example.status,
    }
    last_error: Exception | None = None
    for attempt in range(max_retries):
        try:
            resp = sess.post(url, json=body, timeout=timeout)
            if resp.status_code >= 500:
                raise RuntimeError(f"server error {resp.status_code}")
            if resp.status_code != 200:
                raise ValueError(f"remote scorer returned {resp.status_code}")
            probability = float(resp.json()["probability"])
            if not 0.0 <= probability <= 1.0:
                raise ValueError("probability out of range")
            return probability
        except (requests.RequestException, RuntimeError) as exc:
            last_error = exc
            if attempt + 1 < max_retries:
                _time.sleep(backoff * (2**attempt))
    raise RuntimeError(f"remote scorer unreachable after {max_retries} attempts: {last_error}")
