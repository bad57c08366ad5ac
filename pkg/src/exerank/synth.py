"""Mock components and synthetic corpora for tests, demos, and acceptance.

The mock script runner understands a tiny literal convention so synthetic
scalar candidates can be "executed" deterministically in-process:

- a line ``answer = <python literal>`` sets the answer
- a line ``raise SomeError('msg')`` fails with that error
- a line containing ``while True`` simulates a timeout

The synthetic corpus generator builds scalar tasks whose sample sets have a
controlled composition: correct programs appear with a fixed probability;
a fixed share of distractors raise errors; half of the remaining distractors
yield type-mismatched results; the rest are wrong values of the right type.
Generation log-probabilities are drawn independently of correctness.
"""

from __future__ import annotations

import ast
import random
from dataclasses import dataclass
from pathlib import Path

from .canonical import canonical_number
from .corpus import (
    DatasetKind,
    RawSample,
    ScalarScriptContext,
    TaskInstance,
    write_offline_samples,
    write_tasks,
)
from .generation import Completion


class MockGeneratorEndpoint:
    """Scripted completion endpoint for tests.

    ``script`` maps a prompt string to the full list of completions to hand
    out (in order, across requests); ``default`` serves unknown prompts.
    """

    def __init__(
        self,
        script: dict[str, list[Completion]] | None = None,
        default: list[Completion] | None = None,
    ) -> None:
        self.script = dict(script or {})
        self.default = default or []
        self.calls: list[dict] = []
        self._cursor: dict[str, int] = {}

    def complete(self, prompt, n, temperature, max_tokens, stop):
        self.calls.append(
            {"prompt": prompt, "n": n, "temperature": temperature, "max_tokens": max_tokens}
        )
        pool = self.script.get(prompt, self.default)
        start = self._cursor.get(prompt, 0)
        chosen = [pool[(start + i) % len(pool)] for i in range(n)] if pool else []
        self._cursor[prompt] = start + n
        return chosen


class MockScriptRunner:
    """In-process stand-in for the script runner (same response shape).

    Scalar programs are interpreted under the literal convention above;
    test-suite requests are answered from the ``scripted`` table keyed by
    program text. Stateless and thread-safe.
    """

    def __init__(self, scripted: dict[str, dict] | None = None) -> None:
        self.scripted = dict(scripted or {})

    def run(self, request: dict) -> dict:
        op = request.get("op")
        program = request.get("program", "")
        if program in self.scripted:
            return self.scripted[program]
        if op == "scalar":
            return self._run_scalar(program)
        if op == "tests":
            return {
                "status": "error",
                "result_type": None,
                "result_value": None,
                "per_test": None,
                "error": "no scripted response for program",
            }
        return {
            "status": "error",
            "result_type": None,
            "result_value": None,
            "per_test": None,
            "error": f"unknown op {op!r}",
        }

    @staticmethod
    def _run_scalar(program: str) -> dict:
        def response(status, rtype=None, rvalue=None, error=None):
            return {
                "status": status,
                "result_type": rtype,
                "result_value": rvalue,
                "per_test": None,
                "error": error,
            }

        if "while True" in program:
            return response("timeout", error="Time out")
        answer = None
        seen_answer = False
        for line in program.splitlines():
            stripped = line.strip()
            if stripped.startswith("raise "):
                exc_text = stripped[len("raise "):]
                name, _, rest = exc_text.partition("(")
                message = rest.rstrip(")").strip("'\"")
                return response("error", error=f"{name.strip()}: {message}")
            if stripped.startswith("answer") and "=" in stripped:
                rhs = stripped.split("=", 1)[1].split("#", 1)[0].strip()
                try:
                    answer = ast.literal_eval(rhs)
                    seen_answer = True
                except (ValueError, SyntaxError):
                    return response("error", error=f"SyntaxError: bad literal {rhs!r}")
        if not seen_answer:
            return response("error", error="variable 'answer' undefined")
        rtype = type(answer).__name__
        if isinstance(answer, float):
            rvalue = canonical_number(answer)
        else:
            rvalue = str(answer)
        return response("success", rtype=rtype, rvalue=rvalue)

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# synthetic corpora


_NOUNS = (
    "concerts", "stadiums", "albums", "bridges", "paintings", "rivers",
    "students", "matches", "flights", "engines", "volumes", "tickets",
    "medals", "satellites", "harbors", "castles", "gardens", "tunnels",
)

_SUBJECTS = (
    "touring band", "city council", "research lab", "railway company",
    "island nation", "mountain village", "museum network", "sports league",
    "shipping fleet", "observatory", "festival committee", "university",
)

_WORDS = (
    "maple", "granite", "copper", "violet", "harbor", "meadow", "falcon",
    "ember", "willow", "cobalt", "prairie", "summit",
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Composition of a synthetic scalar corpus."""

    n_tasks: int
    samples_per_task: int = 20
    p_correct: float = 0.3
    p_error: float = 0.25
    p_type_mismatch: float = 0.5
    include_greedy: bool = False
    seed: int = 0
    id_prefix: str = "synth"


def _correct_program(gold: int, rng: random.Random) -> str:
    variants = (
        f"answer = {gold}",
        f"answer = {gold}  # double-checked",
        f"# recount from scratch\nanswer = {gold}",
    )
    return rng.choice(variants)


def _distractor_program(gold: int, spec: SyntheticSpec, rng: random.Random) -> str:
    roll = rng.random()
    if roll < spec.p_error:
        word = rng.choice(_WORDS)
        return f"raise ValueError('cannot resolve {word}-{rng.randrange(10_000)}')"
    if roll < spec.p_error + (1 - spec.p_error) * spec.p_type_mismatch:
        shape = rng.randrange(3)
        if shape == 0:
            return f"answer = '{rng.choice(_WORDS)}'"
        if shape == 1:
            return f"answer = {rng.uniform(0.01, 0.99):.3f}"
        return f"answer = {rng.choice(('True', 'False'))}"
    wrong = gold
    while wrong == gold:
        wrong = rng.randint(1, 1999)
    return f"answer = {wrong}"


def _draw_program(gold: int, spec: SyntheticSpec, rng: random.Random) -> str:
    if rng.random() < spec.p_correct:
        return _correct_program(gold, rng)
    return _distractor_program(gold, spec, rng)


def _logprobs(rng: random.Random, low: float = -1.2, high: float = -0.05) -> tuple[float, ...]:
    return tuple(rng.uniform(low, high) for _ in range(rng.randint(4, 20)))


def generate_synthetic_corpus(
    spec: SyntheticSpec,
) -> tuple[list[TaskInstance], dict[str, list[RawSample]]]:
    """Build tasks and their raw sample pools under the spec's composition."""
    rng = random.Random(spec.seed)
    tasks: list[TaskInstance] = []
    samples: dict[str, list[RawSample]] = {}
    for i in range(spec.n_tasks):
        gold = rng.randint(1, 999)
        task_id = f"{spec.id_prefix}-{i:05d}"
        nl = (
            f"how many {rng.choice(_NOUNS)} does the {rng.choice(_SUBJECTS)} "
            f"report in the {rng.choice(_WORDS)} ledger"
        )
        tasks.append(
            TaskInstance(
                task_id=task_id,
                kind=DatasetKind.SCALAR_SCRIPT,
                nl_input=nl,
                context=ScalarScriptContext(),
                gold_program=f"answer = {gold}",
                gold_result=str(gold),
            )
        )
        pool = [
            RawSample(
                task_id=task_id,
                program_text=_draw_program(gold, spec, rng),
                token_logprobs=_logprobs(rng),
            )
            for _ in range(spec.samples_per_task)
        ]
        if spec.include_greedy:
            pool.append(
                RawSample(
                    task_id=task_id,
                    program_text=_draw_program(gold, spec, rng),
                    token_logprobs=_logprobs(rng, low=-0.5, high=-0.02),
                    source="greedy",
                )
            )
        samples[task_id] = pool
    return tasks, samples


def write_synthetic_corpus(spec: SyntheticSpec, directory: str | Path) -> tuple[Path, Path]:
    """Persist a synthetic corpus; returns (tasks path, samples path)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tasks, samples = generate_synthetic_corpus(spec)
    tasks_path = directory / "tasks.jsonl"
    samples_path = directory / "samples.jsonl"
    write_tasks(tasks, tasks_path)
    write_offline_samples(
        (s for pool in samples.values() for s in pool), samples_path
    )
    return tasks_path, samples_path
