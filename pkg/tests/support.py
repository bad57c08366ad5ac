"""Importable test helpers shared across the suite (fixtures live in conftest)."""

from __future__ import annotations

import json
import math
from http.server import BaseHTTPRequestHandler

from exerank.canonical import equivalence_key
from exerank.execution import ExecutionOutcome
from exerank.generation import ProgramCandidate
from exerank.rerank import ScoredCandidate, score_candidate


def make_outcome(
    status: str = "success",
    repr_text: str = "5",
    scalar: tuple[str, str] | None = None,
    per_test=None,
) -> ExecutionOutcome:
    return ExecutionOutcome(
        status=status,
        canonical_repr=repr_text,
        equivalence_key=equivalence_key(status, repr_text),
        scalar=scalar,
        per_test=per_test,
    )


def make_scored(
    text: str,
    logprob: float,
    repr_text: str,
    status: str = "success",
    verifier_prob: float = 0.5,
    token_count: int = 4,
    duplicate_count: int = 1,
    source: str = "sampled",
    normalize: bool = False,
    prob_floor: float = 1e-6,
) -> ScoredCandidate:
    candidate = ProgramCandidate(
        program_text=text,
        cumulative_logprob=logprob,
        token_count=token_count,
        duplicate_count=duplicate_count,
        source=source,
    )
    if status == "success":
        outcome = make_outcome("success", repr_text, scalar=("int", repr_text))
    elif status == "timeout":
        outcome = make_outcome("timeout", "ERROR: Time out")
    else:
        outcome = make_outcome("error", repr_text)
    return score_candidate(
        candidate, outcome, verifier_prob, normalize=normalize, prob_floor=prob_floor
    )


def close(a: float, b: float, tol: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


def write_synthetic_pipeline(
    root,
    n_train: int,
    n_eval: int,
    seed: int,
    use_gold: bool = True,
    include_greedy: bool = True,
    strategies: tuple[str, ...] = ("lever", "ml", "ep_ml", "ep_voting", "greedy", "oracle"),
    workdir: str = "work",
    samples_per_task: int = 20,
    runner: str = "mock",
):
    """Write a synthetic offline corpus plus a pipeline config; returns the config path."""
    from exerank.synth import SyntheticSpec, write_synthetic_corpus

    root.mkdir(parents=True, exist_ok=True)
    write_synthetic_corpus(
        SyntheticSpec(
            n_tasks=n_train,
            seed=seed,
            id_prefix="train",
            include_greedy=include_greedy,
            samples_per_task=samples_per_task,
        ),
        root / "train",
    )
    write_synthetic_corpus(
        SyntheticSpec(
            n_tasks=n_eval,
            seed=seed + 10_000,
            id_prefix="eval",
            include_greedy=include_greedy,
            samples_per_task=samples_per_task,
        ),
        root / "eval",
    )
    strategy_list = ", ".join(f'"{s}"' for s in strategies)
    config = f"""\
seed = {seed}
workdir = "{workdir}"

[corpus]
kind = "scalar_script"
train_tasks = "train/tasks.jsonl"
eval_tasks = "eval/tasks.jsonl"

[sampling]
offline_train_samples = "train/samples.jsonl"
offline_eval_samples = "eval/samples.jsonl"

[execution]
runner = {json.dumps(runner)}

[verifier]
use_gold = {str(use_gold).lower()}

[report]
strategies = [{strategy_list}]
calibration = true
"""
    path = root / "config.toml"
    path.write_text(config)
    return path


class ScriptedHttpHandler(BaseHTTPRequestHandler):
    """Replays (status, payload) pairs from `responses`, recording requests."""

    responses: list = []
    requests: list = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        ScriptedHttpHandler.requests.append(json.loads(self.rfile.read(length)))
        status, payload = ScriptedHttpHandler.responses.pop(0)
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass
