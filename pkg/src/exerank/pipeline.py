"""Staged batch pipeline: sample -> execute -> label -> train -> rerank -> eval.

Each stage persists a JSONL artifact in the work directory and is skipped
when its outputs already exist, so runs are resumable and each stage is
independently debuggable. All randomness flows from the config seed; two
runs with equal config and seed produce byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import canonical
from .corpus import (
    DatasetKind,
    Exemplar,
    RawSample,
    TaskInstance,
    build_prompt,
    load_exemplars,
    load_offline_samples,
    load_tasks,
)
from .evaluate import (
    CalibrationCurve,
    EvaluationReport,
    OutcomeBuckets,
    calibration_report,
    execution_accuracy,
    outcome_analysis,
)
from .execution import (
    ExecutionLimits,
    ExecutionOutcome,
    ScriptRunnerHandle,
    SubprocessRunner,
    TestExecution,
    execute_candidate_set,
    execute_function_tests,
    execute_scalar_script,
    execute_sql,
)
from .generation import (
    CandidateSet,
    HttpGeneratorEndpoint,
    ProgramCandidate,
    SamplingConfig,
    dedup_candidates,
    greedy_candidate,
    normalize_default_for_kind,
    normalize_program_text,
    sample_candidates,
)
from .rerank import (
    RankedOutput,
    ScoredCandidate,
    baseline_ep_ml,
    baseline_ep_voting,
    baseline_ml,
    greedy_selection,
    oracle_select,
    rerank_lever,
    score_candidate,
)
from .synth import MockScriptRunner
from .verifier import (
    TaskGroup,
    TrainingConfig,
    VerifierModel,
    build_training_set,
    example_from_candidate,
    remote_score,
    score_group,
    train,
)


class StageError(RuntimeError):
    """A stage is missing its input artifact or configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    workdir: Path
    kind: DatasetKind
    eval_tasks: Path
    train_tasks: Path | None
    exemplars: Path | None
    sampling: SamplingConfig
    offline_train_samples: Path | None
    offline_eval_samples: Path | None
    endpoint_url: str
    endpoint_model: str
    api_key_env: str
    include_greedy: bool
    limits: ExecutionLimits
    parallelism: int
    runner_spec: str
    training: TrainingConfig
    use_gold: bool
    model_file: Path
    remote_scorer_url: str
    aggregate: bool
    prob_floor: float
    strategies: tuple[str, ...]
    report_dir: Path
    with_calibration: bool
    with_outcomes: bool
    digest: str


def _resolve(base: Path, value: str | None) -> Path | None:
    if not value:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_config(
    path: str | Path,
    seed: int | None = None,
    strategies: Sequence[str] | None = None,
    no_aggregate: bool = False,
    report_dir: str | None = None,
) -> PipelineConfig:
    """Parse a TOML config file, applying CLI overrides before digesting."""
    path = Path(path)
    raw = tomllib.loads(path.read_text())
    base = path.parent

    if seed is not None:
        raw["seed"] = seed
    if strategies is not None:
        raw.setdefault("report", {})["strategies"] = list(strategies)
    if no_aggregate:
        raw.setdefault("rerank", {})["aggregate"] = False
    if report_dir is not None:
        raw.setdefault("report", {})["dir"] = report_dir

    digest = hashlib.sha256(
        json.dumps(raw, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:16]

    corpus = raw.get("corpus", {})
    sampling = raw.get("sampling", {})
    execution = raw.get("execution", {})
    verifier = raw.get("verifier", {})
    rerank = raw.get("rerank", {})
    report = raw.get("report", {})

    kind = DatasetKind(corpus.get("kind", "scalar_script"))
    workdir = _resolve(base, raw.get("workdir", "work"))
    assert workdir is not None

    sampling_config = SamplingConfig(
        k=int(sampling.get("k", 20)),
        temperature=float(sampling.get("temperature", 0.6)),
        max_tokens=int(sampling.get("max_tokens", 256)),
        stop_sequences=tuple(sampling.get("stop", [])),
        normalize_logprob=bool(
            sampling.get("normalize_logprob", normalize_default_for_kind(kind))
        ),
        batch_size=int(sampling.get("batch_size", 20)),
    )
    eval_tasks = _resolve(base, corpus.get("eval_tasks"))
    if eval_tasks is None:
        raise StageError("config: corpus.eval_tasks is required")

    model_file = _resolve(workdir, verifier.get("model_file", "verifier.json"))
    assert model_file is not None
    report_path = _resolve(workdir, report.get("dir", "report"))
    assert report_path is not None

    return PipelineConfig(
        seed=int(raw.get("seed", 0)),
        workdir=workdir,
        kind=kind,
        eval_tasks=eval_tasks,
        train_tasks=_resolve(base, corpus.get("train_tasks")),
        exemplars=_resolve(base, corpus.get("exemplars")),
        sampling=sampling_config,
        offline_train_samples=_resolve(base, sampling.get("offline_train_samples")),
        offline_eval_samples=_resolve(base, sampling.get("offline_eval_samples")),
        endpoint_url=sampling.get("endpoint_url", ""),
        endpoint_model=sampling.get("model", ""),
        api_key_env=sampling.get("api_key_env", "GENERATOR_API_KEY"),
        include_greedy=bool(sampling.get("include_greedy", False)),
        limits=ExecutionLimits(
            timeout=float(execution.get("timeout", 10.0)),
            max_output_cells=int(execution.get("max_output_cells", 64)),
            max_result_bytes=int(execution.get("max_result_bytes", 1 << 20)),
        ),
        parallelism=int(execution.get("parallelism", 1)),
        runner_spec=str(execution.get("runner", "mock")),
        training=TrainingConfig(
            epochs=int(verifier.get("epochs", 40)),
            learning_rate=float(verifier.get("learning_rate", 0.5)),
            l2=float(verifier.get("l2", 1e-4)),
            downsample_cap=int(verifier.get("downsample_cap", 20)),
            seed=int(raw.get("seed", 0)),
        ),
        use_gold=bool(verifier.get("use_gold", True)),
        model_file=model_file,
        remote_scorer_url=verifier.get("remote_url", ""),
        aggregate=bool(rerank.get("aggregate", True)),
        prob_floor=float(rerank.get("prob_floor", 1e-6)),
        strategies=tuple(
            report.get("strategies", ["lever", "ml", "ep_ml", "ep_voting", "oracle"])
        ),
        report_dir=report_path,
        with_calibration=bool(report.get("calibration", True)),
        with_outcomes=bool(report.get("outcomes", False)),
        digest=digest,
    )


def task_seed(base_seed: int, task_id: str) -> int:
    """Stable per-task tie-break seed shared by all strategies."""
    digest = hashlib.sha256(f"{base_seed}:{task_id}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


# ---------------------------------------------------------------------------
# artifact io


def _candidates_path(cfg: PipelineConfig, split: str) -> Path:
    return cfg.workdir / f"candidates_{split}.jsonl"


def _outcomes_path(cfg: PipelineConfig, split: str) -> Path:
    return cfg.workdir / f"outcomes_{split}.jsonl"


def _labeled_path(cfg: PipelineConfig, split: str) -> Path:
    return cfg.workdir / f"labeled_{split}.jsonl"


def _scores_path(cfg: PipelineConfig) -> Path:
    return cfg.workdir / "scores_eval.jsonl"


def reranked_path(cfg: PipelineConfig) -> Path:
    return cfg.workdir / "reranked.jsonl"


def _write_candidate_sets(sets: Sequence[CandidateSet], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cs in sets:
            record = {
                "task_id": cs.task_id,
                "raw_sample_count": cs.raw_sample_count,
                "candidates": [
                    {
                        "program_text": c.program_text,
                        "cumulative_logprob": c.cumulative_logprob,
                        "token_count": c.token_count,
                        "duplicate_count": c.duplicate_count,
                        "source": c.source,
                    }
                    for c in cs.candidates
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _load_candidate_sets(path: Path) -> list[CandidateSet]:
    sets = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            sets.append(
                CandidateSet(
                    task_id=record["task_id"],
                    raw_sample_count=record["raw_sample_count"],
                    candidates=tuple(
                        ProgramCandidate(**c) for c in record["candidates"]
                    ),
                )
            )
    return sets


def _write_outcomes(
    rows: Sequence[tuple[str, Sequence[ExecutionOutcome]]], path: Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task_id, outcomes in rows:
            record = {
                "task_id": task_id,
                "outcomes": [
                    {
                        "status": o.status,
                        "canonical_result": o.canonical_repr,
                        "equivalence_key": o.equivalence_key,
                        "scalar": list(o.scalar) if o.scalar else None,
                        "per_test": [
                            {
                                "status": t.status,
                                "result_type": t.result_type,
                                "result_value": t.result_value,
                                "passed": t.passed,
                                "error": t.error,
                            }
                            for t in o.per_test
                        ]
                        if o.per_test is not None
                        else None,
                    }
                    for o in outcomes
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _load_outcomes(path: Path) -> dict[str, list[ExecutionOutcome]]:
    loaded: dict[str, list[ExecutionOutcome]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            outcomes = []
            for o in record["outcomes"]:
                per_test = (
                    tuple(TestExecution(**t) for t in o["per_test"])
                    if o.get("per_test") is not None
                    else None
                )
                outcomes.append(
                    ExecutionOutcome(
                        status=o["status"],
                        canonical_repr=o["canonical_result"],
                        equivalence_key=o["equivalence_key"],
                        scalar=tuple(o["scalar"]) if o.get("scalar") else None,
                        per_test=per_test,
                    )
                )
            loaded[record["task_id"]] = outcomes
    return loaded


# ---------------------------------------------------------------------------
# execution plumbing


def make_runner_factory(cfg: PipelineConfig) -> Callable[[], ScriptRunnerHandle]:
    if cfg.runner_spec == "mock":
        shared = MockScriptRunner()
        return lambda: shared
    command = shlex.split(cfg.runner_spec)
    return lambda: SubprocessRunner(command)


def _execute_one(
    cfg: PipelineConfig,
    program: str,
    task: TaskInstance,
    runner_factory: Callable[[], ScriptRunnerHandle],
) -> ExecutionOutcome:
    if task.kind is DatasetKind.SQL_QUERY:
        return execute_sql(program, task.context, cfg.limits)
    runner = runner_factory()
    try:
        if task.kind is DatasetKind.FUNCTION_WITH_TESTS:
            return execute_function_tests(
                program, task.context.tests, cfg.limits, runner, cfg.seed
            )
        return execute_scalar_script(program, cfg.limits, runner, cfg.seed)
    finally:
        if not isinstance(runner, MockScriptRunner):
            runner.close()


# ---------------------------------------------------------------------------
# stages


def _splits(cfg: PipelineConfig) -> list[str]:
    return (["train"] if cfg.train_tasks else []) + ["eval"]


def _tasks_for(cfg: PipelineConfig, split: str) -> list[TaskInstance]:
    path = cfg.eval_tasks if split == "eval" else cfg.train_tasks
    if path is None or not path.exists():
        raise StageError(f"stage sample: missing task corpus {path}")
    return load_tasks(path, cfg.kind)


def _offline_for(cfg: PipelineConfig, split: str) -> Path | None:
    return cfg.offline_eval_samples if split == "eval" else cfg.offline_train_samples


def stage_sample(cfg: PipelineConfig, log: Callable[[str], None] = print) -> None:
    """Obtain candidates per task (offline files or live endpoint) and dedup."""
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    for split in _splits(cfg):
        out = _candidates_path(cfg, split)
        if out.exists():
            log(f"sample[{split}]: {out.name} exists, skipping")
            continue
        tasks = _tasks_for(cfg, split)
        offline = _offline_for(cfg, split)
        sets: list[CandidateSet] = []
        if offline is not None:
            if not offline.exists():
                raise StageError(f"stage sample: missing offline samples {offline}")
            grouped = load_offline_samples(offline)
            for task in tasks:
                pool = grouped.get(task.task_id)
                if not pool:
                    raise StageError(
                        f"stage sample: no offline samples for task {task.task_id}"
                    )
                sets.append(_dedup_pool(task.task_id, pool))
        else:
            if not cfg.endpoint_url:
                raise StageError(
                    "stage sample: sampling.endpoint_url or offline samples required"
                )
            endpoint = HttpGeneratorEndpoint(
                cfg.endpoint_url,
                api_key=os.environ.get(cfg.api_key_env),
                model=cfg.endpoint_model or None,
            )
            exemplars: list[Exemplar] = (
                load_exemplars(cfg.exemplars) if cfg.exemplars else []
            )
            for task in tasks:
                prompt = build_prompt(task, exemplars)
                raw = sample_candidates(prompt, cfg.sampling, endpoint)
                greedy = (
                    greedy_candidate(prompt, endpoint, cfg.sampling)
                    if cfg.include_greedy
                    else None
                )
                sets.append(dedup_candidates(raw, greedy, task_id=task.task_id))
        _write_candidate_sets(sets, out)
        log(f"sample[{split}]: wrote {len(sets)} candidate sets to {out.name}")


def _dedup_pool(task_id: str, pool: Sequence[RawSample]) -> CandidateSet:
    """Dedup an offline pool, promoting the first greedy-tagged sample."""
    greedy: ProgramCandidate | None = None
    sampled: list[RawSample] = []
    for sample in pool:
        text = normalize_program_text(sample.program_text)
        if sample.source == "greedy" and greedy is None and text:
            greedy = ProgramCandidate(
                program_text=text,
                cumulative_logprob=sample.cumulative_logprob,
                token_count=sample.token_count,
                duplicate_count=1,
                source="greedy",
            )
        else:
            sampled.append(sample)
    return dedup_candidates(sampled, greedy, task_id=task_id)


def stage_execute(cfg: PipelineConfig, log: Callable[[str], None] = print) -> None:
    """Execute every candidate set against its task's context."""
    runner_factory = make_runner_factory(cfg)
    for split in _splits(cfg):
        out = _outcomes_path(cfg, split)
        if out.exists():
            log(f"execute[{split}]: {out.name} exists, skipping")
            continue
        cand_path = _candidates_path(cfg, split)
        if not cand_path.exists():
            raise StageError(f"stage execute: missing {cand_path}")
        tasks = {t.task_id: t for t in _tasks_for(cfg, split)}
        rows = []
        for cand_set in _load_candidate_sets(cand_path):
            task = tasks.get(cand_set.task_id)
            if task is None:
                raise StageError(
                    f"stage execute: candidate set for unknown task {cand_set.task_id}"
                )
            executed = execute_candidate_set(
                cand_set,
                task.context,
                cfg.limits,
                parallelism=cfg.parallelism,
                runner_factory=runner_factory,
                seed=cfg.seed,
            )
            rows.append((cand_set.task_id, [outcome for _, outcome in executed]))
        _write_outcomes(rows, out)
        log(f"execute[{split}]: wrote outcomes for {len(rows)} tasks to {out.name}")


def stage_label(cfg: PipelineConfig, log: Callable[[str], None] = print) -> None:
    """Label every executed candidate against gold (the verifier's targets)."""
    for split in _splits(cfg):
        out = _labeled_path(cfg, split)
        if out.exists():
            log(f"label[{split}]: {out.name} exists, skipping")
            continue
        cand_path = _candidates_path(cfg, split)
        outcome_path = _outcomes_path(cfg, split)
        for needed in (cand_path, outcome_path):
            if not needed.exists():
                raise StageError(f"stage label: missing {needed}")
        tasks = {t.task_id: t for t in _tasks_for(cfg, split)}
        outcomes = _load_outcomes(outcome_path)
        count = 0
        with open(out, "w", encoding="utf-8") as fh:
            for cand_set in _load_candidate_sets(cand_path):
                task = tasks[cand_set.task_id]
                for candidate, outcome in zip(
                    cand_set.candidates, outcomes[cand_set.task_id]
                ):
                    record = {
                        "task_id": task.task_id,
                        "program_text": candidate.program_text,
                        "canonical_result": outcome.canonical_repr,
                        "status": outcome.status,
                        "label": canonical.label_candidate(outcome, task),
                    }
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                    count += 1
        log(f"label[{split}]: wrote {count} labeled examples to {out.name}")


def _build_groups(cfg: PipelineConfig, split: str, use_gold: bool) -> list[TaskGroup]:
    cand_path = _candidates_path(cfg, split)
    outcome_path = _outcomes_path(cfg, split)
    for needed in (cand_path, outcome_path):
        if not needed.exists():
            raise StageError(f"stage train: missing {needed}")
    tasks = _tasks_for(cfg, split)
    if not use_gold:
        tasks = [replace(t, gold_program=None) for t in tasks]
    outcomes = _load_outcomes(outcome_path)
    sets = [
        (cs, outcomes[cs.task_id]) for cs in _load_candidate_sets(cand_path)
    ]
    runner_factory = make_runner_factory(cfg)
    by_id = {t.task_id: t for t in tasks}

    def execute_gold(program: str, task: TaskInstance) -> ExecutionOutcome:
        return _execute_one(cfg, program, by_id[task.task_id], runner_factory)

    return build_training_set(tasks, sets, execute_gold)


def stage_train(cfg: PipelineConfig, log: Callable[[str], None] = print) -> None:
    """Fit the verifier on the train split (skipped for saved models)."""
    if cfg.model_file.exists():
        log(f"train: {cfg.model_file.name} exists, skipping")
        return
    if cfg.train_tasks is None:
        raise StageError(
            f"stage train: no train corpus configured and missing model {cfg.model_file}"
        )
    groups = _build_groups(cfg, "train", cfg.use_gold)
    model = train(groups, cfg.training)
    cfg.model_file.parent.mkdir(parents=True, exist_ok=True)
    model.save(cfg.model_file)
    log(
        f"train: fitted on {len(groups)} task groups, "
        f"final loss {model.training_log[-1]:.4f}, saved {cfg.model_file.name}"
    )


def scored_eval_candidates(
    cfg: PipelineConfig,
) -> tuple[list[TaskInstance], dict[str, list[ScoredCandidate]]]:
    """Reconstruct eval ScoredCandidates from persisted artifacts."""
    cand_path = _candidates_path(cfg, "eval")
    outcome_path = _outcomes_path(cfg, "eval")
    scores_path = _scores_path(cfg)
    for needed in (cand_path, outcome_path, scores_path):
        if not needed.exists():
            raise StageError(f"stage eval: missing {needed}")
    tasks = _tasks_for(cfg, "eval")
    outcomes = _load_outcomes(outcome_path)
    probs: dict[str, list[float]] = {}
    with open(scores_path, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            probs[record["task_id"]] = record["verifier_probs"]
    scored: dict[str, list[ScoredCandidate]] = {}
    for cand_set in _load_candidate_sets(cand_path):
        task_scored = []
        for candidate, outcome, prob in zip(
            cand_set.candidates, outcomes[cand_set.task_id], probs[cand_set.task_id]
        ):
            task_scored.append(
                score_candidate(
                    candidate,
                    outcome,
                    prob,
                    normalize=cfg.sampling.normalize_logprob,
                    prob_floor=cfg.prob_floor,
                )
            )
        scored[cand_set.task_id] = task_scored
    return tasks, scored


def stage_rerank(cfg: PipelineConfig, log: Callable[[str], None] = print) -> None:
    """Score eval candidates with the verifier and select per strategy."""
    reranked_out = reranked_path(cfg)
    scores_out = _scores_path(cfg)
    if reranked_out.exists() and scores_out.exists():
        log(f"rerank: {reranked_out.name} exists, skipping")
        return
    cand_path = _candidates_path(cfg, "eval")
    outcome_path = _outcomes_path(cfg, "eval")
    for needed in (cand_path, outcome_path):
        if not needed.exists():
            raise StageError(f"stage rerank: missing {needed}")
    tasks = {t.task_id: t for t in _tasks_for(cfg, "eval")}
    outcomes = _load_outcomes(outcome_path)
    sets = _load_candidate_sets(cand_path)

    model: VerifierModel | None = None
    if not cfg.remote_scorer_url:
        if not cfg.model_file.exists():
            raise StageError(f"stage rerank: missing model {cfg.model_file}")
        model = VerifierModel.load(cfg.model_file)

    if "greedy" in cfg.strategies and not any(
        c.source == "greedy" for cs in sets for c in cs.candidates
    ):
        raise StageError(
            "stage rerank: strategy 'greedy' needs greedy candidates; sample with "
            "include_greedy or provide source=greedy offline samples"
        )

    with open(scores_out, "w", encoding="utf-8") as score_fh, open(
        reranked_out, "w", encoding="utf-8"
    ) as rerank_fh:
        for cand_set in sets:
            task = tasks[cand_set.task_id]
            group = TaskGroup(
                task_id=task.task_id,
                examples=[
                    example_from_candidate(task, candidate, outcome, label=0)
                    for candidate, outcome in zip(
                        cand_set.candidates, outcomes[task.task_id]
                    )
                ],
            )
            if cfg.remote_scorer_url:
                probs = [
                    remote_score(cfg.remote_scorer_url, example)
                    for example in group.examples
                ]
            else:
                assert model is not None
                probs = score_group(model, group)
            score_fh.write(
                json.dumps(
                    {"task_id": task.task_id, "verifier_probs": probs},
                    ensure_ascii=False,
                )
                + "\n"
            )
            scored = [
                score_candidate(
                    candidate,
                    outcome,
                    prob,
                    normalize=cfg.sampling.normalize_logprob,
                    prob_floor=cfg.prob_floor,
                )
                for candidate, outcome, prob in zip(
                    cand_set.candidates, outcomes[task.task_id], probs
                )
            ]
            seed = task_seed(cfg.seed, task.task_id)
            for strategy in cfg.strategies:
                selection, groups_payload = _select(strategy, scored, task, cfg, seed)
                record = {
                    "task_id": task.task_id,
                    "strategy": strategy,
                    "selected_program": selection.program_text if selection else None,
                    "selected_key": selection.equivalence_key if selection else None,
                    "groups": groups_payload,
                    "seed": seed,
                }
                rerank_fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    log(f"rerank: wrote selections for {len(sets)} tasks to {reranked_out.name}")


def _select(
    strategy: str,
    scored: list[ScoredCandidate],
    task: TaskInstance,
    cfg: PipelineConfig,
    seed: int,
) -> tuple[ScoredCandidate | None, list[dict]]:
    if strategy == "lever":
        ranked: RankedOutput = rerank_lever(scored, aggregate=cfg.aggregate, seed=seed)
        payload = [
            {"key": g.key, "score": g.score, "size": len(g.members)}
            for g in ranked.groups
        ]
        return ranked.selected, payload
    if strategy == "ml":
        return baseline_ml(scored, seed), []
    if strategy == "ep_ml":
        return baseline_ep_ml(scored, seed), []
    if strategy == "ep_voting":
        return baseline_ep_voting(scored, seed), []
    if strategy == "greedy":
        return greedy_selection(scored), []
    if strategy == "oracle":
        return oracle_select(scored, task), []
    raise StageError(f"stage rerank: unknown strategy {strategy!r}")


def stage_eval(cfg: PipelineConfig, log: Callable[[str], None] = print) -> EvaluationReport:
    """Assemble the report from persisted selections and scores."""
    reranked_file = reranked_path(cfg)
    if not reranked_file.exists():
        raise StageError(f"stage eval: missing {reranked_file}")
    tasks, scored = scored_eval_candidates(cfg)
    by_text: dict[str, dict[str, ScoredCandidate]] = {
        task_id: {c.program_text: c for c in cands}
        for task_id, cands in scored.items()
    }

    selections: dict[str, dict[str, ScoredCandidate | None]] = {}
    with open(reranked_file, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            strategy = record["strategy"]
            program = record["selected_program"]
            chosen = (
                by_text[record["task_id"]][program] if program is not None else None
            )
            selections.setdefault(strategy, {})[record["task_id"]] = chosen

    oracle_selections = {
        task.task_id: oracle_select(scored[task.task_id], task) for task in tasks
    }
    oracle_accuracy = execution_accuracy(oracle_selections, tasks)

    accuracies = {}
    report_selections: dict[str, dict[str, dict]] = {}
    for strategy, chosen_map in selections.items():
        accuracies[strategy] = execution_accuracy(chosen_map, tasks)
        report_selections[strategy] = {
            task_id: {
                "program": chosen.program_text if chosen else None,
                "key": chosen.equivalence_key if chosen else None,
            }
            for task_id, chosen in chosen_map.items()
        }

    report = EvaluationReport(
        accuracies=accuracies,
        oracle_accuracy=oracle_accuracy,
        selections=report_selections,
        task_count=len(tasks),
        config_digest=cfg.digest,
        seed=cfg.seed,
    )

    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    (cfg.report_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    (cfg.report_dir / "report.txt").write_text(report.table_text() + "\n")
    if cfg.with_calibration:
        curve = compute_calibration(cfg, tasks, scored)
        (cfg.report_dir / "calibration.csv").write_text(curve.to_csv_text())
    if cfg.with_outcomes:
        buckets = compute_outcome_buckets(cfg, tasks, scored, selections)
        (cfg.report_dir / "outcome_buckets.json").write_text(
            json.dumps(buckets.to_dict(), sort_keys=True, indent=2) + "\n"
        )
    log("eval:\n" + report.table_text())
    return report


def compute_calibration(
    cfg: PipelineConfig,
    tasks: Sequence[TaskInstance],
    scored: dict[str, list[ScoredCandidate]],
) -> CalibrationCurve:
    corpus = [(task, scored[task.task_id]) for task in tasks]
    return calibration_report(corpus)


def compute_outcome_buckets(
    cfg: PipelineConfig,
    tasks: Sequence[TaskInstance],
    scored: dict[str, list[ScoredCandidate]],
    selections: dict[str, dict[str, ScoredCandidate | None]],
) -> OutcomeBuckets:
    if "lever" not in selections or "greedy" not in selections:
        raise StageError(
            "outcome analysis needs both 'lever' and 'greedy' strategies in the report"
        )
    lever = {k: v for k, v in selections["lever"].items() if v is not None}
    greedy = {k: v for k, v in selections["greedy"].items() if v is not None}
    return outcome_analysis(lever, greedy, tasks, scored)


STAGES: dict[str, Callable] = {
    "sample": stage_sample,
    "execute": stage_execute,
    "label": stage_label,
    "train": stage_train,
    "rerank": stage_rerank,
    "eval": stage_eval,
}


def run_pipeline(
    cfg: PipelineConfig, log: Callable[[str], None] = print
) -> EvaluationReport:
    """Run every stage in order, reusing persisted artifacts."""
    stage_sample(cfg, log)
    stage_execute(cfg, log)
    stage_label(cfg, log)
    stage_train(cfg, log)
    stage_rerank(cfg, log)
    return stage_eval(cfg, log)
