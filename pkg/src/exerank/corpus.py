"""Task corpora, few-shot prompts, and offline candidate samples.

All corpora are JSONL. One task record per line:

    {"task_id": str,
     "kind": "sql_query" | "scalar_script" | "function_with_tests",
     "nl_input": str,
     "context": { ...kind-specific... },
     "gold_program": str | null,
     "gold_result": str | null}

kind-specific context payloads:

    sql_query:            {"tables": [{"name": str,
                                       "columns": [{"name": str, "type": str}],
                                       "rows": [[cell, ...], ...]}]}
    scalar_script:        {}
    function_with_tests:  {"tests": [{"call": str, "expected": str}]}

Offline sample records (one sampled program per line):

    {"task_id": str, "program_text": str, "token_logprobs": [float, ...],
     "source": "sampled" | "greedy"}          # source optional

Exemplar records (few-shot pairs):

    {"kind": str, "input": str, "program": str}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, Union


class CorpusError(ValueError):
    """A corpus file violated the JSONL schema."""


class DatasetKind(str, Enum):
    SQL_QUERY = "sql_query"
    SCALAR_SCRIPT = "scalar_script"
    FUNCTION_WITH_TESTS = "function_with_tests"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    type: str


@dataclass(frozen=True)
class TableSpec:
    name: str
    columns: tuple[ColumnSpec, ...]
    rows: tuple[tuple, ...]


@dataclass(frozen=True)
class DatabaseContext:
    tables: tuple[TableSpec, ...]


@dataclass(frozen=True)
class ScalarScriptContext:
    """Scalar-answer scripts carry no extra execution context."""


@dataclass(frozen=True)
class TestCase:
    call: str
    expected: str

    __test__ = False  # domain object, not a pytest class


@dataclass(frozen=True)
class FunctionTestsContext:
    tests: tuple[TestCase, ...]


ExecutionContext = Union[DatabaseContext, ScalarScriptContext, FunctionTestsContext]


@dataclass(frozen=True)
class TaskInstance:
    """One language-to-code problem: NL input, execution context, optional gold."""

    task_id: str
    kind: DatasetKind
    nl_input: str
    context: ExecutionContext
    gold_program: str | None = None
    gold_result: str | None = None


@dataclass(frozen=True)
class Exemplar:
    """A few-shot (input, program) pair for one dataset kind."""

    kind: DatasetKind
    input_text: str
    program: str


@dataclass(frozen=True)
class RawSample:
    """One sampled completion with its per-token log-probabilities."""

    task_id: str
    program_text: str
    token_logprobs: tuple[float, ...]
    source: str = "sampled"

    @property
    def cumulative_logprob(self) -> float:
        return sum(self.token_logprobs)

    @property
    def token_count(self) -> int:
        return len(self.token_logprobs)


# ---------------------------------------------------------------------------
# task corpora


def _context_from_record(kind: DatasetKind, raw: dict, line_no: int) -> ExecutionContext:
    if kind is DatasetKind.SQL_QUERY:
        tables = []
        for t in raw.get("tables", []):
            columns = tuple(ColumnSpec(c["name"], c.get("type", "text")) for c in t["columns"])
            rows = tuple(tuple(r) for r in t.get("rows", []))
            for r in rows:
                if len(r) != len(columns):
                    raise CorpusError(
                        f"line {line_no}: table {t['name']!r} has a row with "
                        f"{len(r)} cells but {len(columns)} columns"
                    )
            tables.append(TableSpec(t["name"], columns, rows))
        return DatabaseContext(tuple(tables))
    if kind is DatasetKind.FUNCTION_WITH_TESTS:
        tests = tuple(TestCase(t["call"], str(t["expected"])) for t in raw.get("tests", []))
        if not tests:
            raise CorpusError(
                f"line {line_no}: function_with_tests requires at least one test case"
            )
        return FunctionTestsContext(tests)
    return ScalarScriptContext()


def _context_to_record(context: ExecutionContext) -> dict:
    if isinstance(context, DatabaseContext):
        return {
            "tables": [
                {
                    "name": t.name,
                    "columns": [{"name": c.name, "type": c.type} for c in t.columns],
                    "rows": [list(r) for r in t.rows],
                }
                for t in context.tables
            ]
        }
    if isinstance(context, FunctionTestsContext):
        return {"tests": [{"call": t.call, "expected": t.expected} for t in context.tests]}
    return {}


def load_tasks(path: str | Path, kind: DatasetKind) -> list[TaskInstance]:
    """Load a task corpus, validating records against the JSONL schema.

    Malformed records and duplicate task ids raise CorpusError naming the line.
    """
    kind = DatasetKind(kind)
    tasks: list[TaskInstance] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            for fld in ("task_id", "kind", "nl_input", "context"):
                if fld not in raw:
                    raise CorpusError(f"line {line_no}: missing field {fld!r}")
            if raw["kind"] != kind.value:
                raise CorpusError(
                    f"line {line_no}: expected kind {kind.value!r}, got {raw['kind']!r}"
                )
            if raw["task_id"] in seen:
                raise CorpusError(f"line {line_no}: duplicate task_id {raw['task_id']!r}")
            seen.add(raw["task_id"])
            try:
                context = _context_from_record(kind, raw["context"], line_no)
            except (KeyError, TypeError, AttributeError) as exc:
                raise CorpusError(f"line {line_no}: malformed context: {exc}") from exc
            tasks.append(
                TaskInstance(
                    task_id=raw["task_id"],
                    kind=kind,
                    nl_input=raw["nl_input"],
                    context=context,
                    gold_program=raw.get("gold_program"),
                    gold_result=raw.get("gold_result"),
                )
            )
    return tasks


def write_tasks(tasks: Iterable[TaskInstance], path: str | Path) -> None:
    """Write a task corpus; inverse of load_tasks on the data model."""
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            record = {
                "task_id": task.task_id,
                "kind": task.kind.value,
                "nl_input": task.nl_input,
                "context": _context_to_record(task.context),
                "gold_program": task.gold_program,
                "gold_result": task.gold_result,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# exemplars and prompts


def load_exemplars(path: str | Path) -> list[Exemplar]:
    exemplars = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                exemplars.append(
                    Exemplar(DatasetKind(raw["kind"]), raw["input"], raw["program"])
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CorpusError(f"line {line_no}: bad exemplar record: {exc}") from exc
    return exemplars


@dataclass(frozen=True)
class PromptTemplate:
    """Per-kind serialization rules for prompt blocks.

    Templates are data: new datasets get a new template instance, not code.
    ``{input}``, ``{program}`` and ``{context}`` are substituted per block.
    """

    kind: DatasetKind
    exemplar_block: str = "{input_label}{input}\n{program}\n"
    task_block: str = "{context}{input_label}{input}\n"
    input_label: str = "-- Question: "
    context_line: str = "-- {name}: {body}\n"
    separator: str = "\n"

    def render_exemplar(self, exemplar: Exemplar) -> str:
        return self.exemplar_block.format(
            input_label=self.input_label,
            input=exemplar.input_text,
            program=exemplar.program,
        )

    def render_task(self, task: TaskInstance) -> str:
        return self.task_block.format(
            context=self.render_context(task),
            input_label=self.input_label,
            input=task.nl_input,
        )

    def render_context(self, task: TaskInstance) -> str:
        if isinstance(task.context, DatabaseContext):
            lines = []
            for table in task.context.tables:
                body = " | ".join(f"{c.name} ({c.type})" for c in table.columns)
                lines.append(self.context_line.format(name=table.name, body=body))
            return "".join(lines)
        if isinstance(task.context, FunctionTestsContext):
            # Convention: the first test case is shown in the prompt so the
            # generator can produce a matching function signature.
            first = task.context.tests[0]
            return self.context_line.format(name="test", body=f"{first.call} == {first.expected}")
        return ""


DEFAULT_TEMPLATES = {
    DatasetKind.SQL_QUERY: PromptTemplate(
        kind=DatasetKind.SQL_QUERY,
        input_label="-- Question: ",
        context_line="-- Table {name}: {body}\n",
    ),
    DatasetKind.SCALAR_SCRIPT: PromptTemplate(
        kind=DatasetKind.SCALAR_SCRIPT,
        input_label="# Question: ",
        context_line="# {name}: {body}\n",
    ),
    DatasetKind.FUNCTION_WITH_TESTS: PromptTemplate(
        kind=DatasetKind.FUNCTION_WITH_TESTS,
        input_label="# Task: ",
        context_line="# {name}: {body}\n",
    ),
}


@dataclass(frozen=True)
class FewShotPrompt:
    task_id: str
    exemplars: tuple[Exemplar, ...]
    template: PromptTemplate
    rendered: str


def build_prompt(
    task: TaskInstance,
    exemplars: Sequence[Exemplar],
    template: PromptTemplate | None = None,
) -> FewShotPrompt:
    """Render the few-shot prompt: exemplar blocks, then the task block.

    Rendering is byte-deterministic given the exemplar list and template.
    """
    if template is None:
        template = DEFAULT_TEMPLATES[task.kind]
    if template.kind is not task.kind:
        raise ValueError(
            f"template kind {template.kind.value} does not match task kind {task.kind.value}"
        )
    for ex in exemplars:
        if ex.kind is not task.kind:
            raise ValueError(
                f"exemplar kind {ex.kind.value} does not match task kind {task.kind.value}"
            )
    blocks = [template.render_exemplar(ex) for ex in exemplars]
    blocks.append(template.render_task(task))
    return FewShotPrompt(
        task_id=task.task_id,
        exemplars=tuple(exemplars),
        template=template,
        rendered=template.separator.join(blocks),
    )


# ---------------------------------------------------------------------------
# offline candidate samples


def load_offline_samples(path: str | Path) -> dict[str, list[RawSample]]:
    """Group offline samples by task_id, preserving file order.

    task_ids not present in any corpus are retained here and validated by the
    pipeline stage that joins samples to tasks.
    """
    grouped: dict[str, list[RawSample]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            for fld in ("task_id", "program_text", "token_logprobs"):
                if fld not in raw:
                    raise CorpusError(f"line {line_no}: missing field {fld!r}")
            logprobs = raw["token_logprobs"]
            if not isinstance(logprobs, list) or not logprobs:
                raise CorpusError(f"line {line_no}: token_logprobs must be a non-empty list")
            for lp in logprobs:
                if not isinstance(lp, (int, float)):
                    raise CorpusError(f"line {line_no}: malformed logprob {lp!r}")
                if lp > 0:
                    raise CorpusError(f"line {line_no}: logprob > 0")
            sample = RawSample(
                task_id=raw["task_id"],
                program_text=raw["program_text"],
                token_logprobs=tuple(float(lp) for lp in logprobs),
                source=raw.get("source", "sampled"),
            )
            grouped.setdefault(sample.task_id, []).append(sample)
    return grouped


def write_offline_samples(samples: Iterable[RawSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            record = {
                "task_id": s.task_id,
                "program_text": s.program_text,
                "token_logprobs": list(s.token_logprobs),
            }
            if s.source != "sampled":
                record["source"] = s.source
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
