"""Candidate-program execution with isolation and timeouts.

Three executors share one outcome type:

- execute_sql: embedded sqlite session, fresh and read-only per candidate
- execute_scalar_script: delegates to a script runner over the wire protocol
- execute_function_tests: same runner, one request covering all test cases

All failures are encoded in the outcome (status + "ERROR: ..." repr), never
raised, so one bad candidate cannot abort a batch.

Script-runner wire protocol (UTF-8, one JSON document per line):

    request:  {"op": "scalar" | "tests", "program": str,
               "tests": [{"call": str, "expected": str}],
               "timeout_ms": int, "seed": int}
    response: {"status": "success" | "error" | "timeout",
               "result_type": str | null, "result_value": str | null,
               "per_test": [{"status": str, "result_type": str | null,
                             "result_value": str | null, "passed": bool}] | null,
               "error": str | null}
"""

from __future__ import annotations

import json
import queue
import re
import sqlite3
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

from . import canonical
from .corpus import (
    DatabaseContext,
    ExecutionContext,
    FunctionTestsContext,
    ScalarScriptContext,
    TestCase,
)
from .generation import CandidateSet, ProgramCandidate

SUCCESS = "success"
ERROR = "error"
TIMEOUT = "timeout"


class RunnerProtocolError(RuntimeError):
    """The script runner broke the wire protocol (crash, bad JSON, EOF)."""


@dataclass(frozen=True)
class ExecutionLimits:
    timeout: float = 10.0
    max_output_cells: int = 64
    max_result_bytes: int = 1 << 20

    def __post_init__(self) -> None:
        if self.timeout <= 0 or self.max_output_cells <= 0 or self.max_result_bytes <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class TestExecution:
    status: str
    result_type: str | None
    result_value: str | None
    passed: bool
    error: str | None = None

    __test__ = False  # domain object, not a pytest class


@dataclass(frozen=True)
class ExecutionOutcome:
    """Status plus the canonical representation of one execution."""

    status: str
    canonical_repr: str
    equivalence_key: str
    wall_time: float = 0.0
    table: tuple[tuple[str, ...], tuple[tuple, ...]] | None = None
    scalar: tuple[str, str] | None = None  # (runtime type name, canonical value)
    per_test: tuple[TestExecution, ...] | None = None

    def __post_init__(self) -> None:
        if self.status in (ERROR, TIMEOUT) and not self.canonical_repr.startswith(
            canonical.ERROR_PREFIX
        ):
            raise ValueError(f"{self.status} outcome must carry an ERROR repr")


def _outcome(status: str, repr_text: str, wall_time: float, **payload) -> ExecutionOutcome:
    return ExecutionOutcome(
        status=status,
        canonical_repr=repr_text,
        equivalence_key=canonical.equivalence_key(status, repr_text),
        wall_time=wall_time,
        **payload,
    )


def _bounded(repr_text: str, max_bytes: int) -> str:
    """Cap a canonical repr at max_bytes, keeping any ERROR prefix intact."""
    if len(repr_text.encode("utf-8")) <= max_bytes:
        return repr_text
    prefix = canonical.ERROR_PREFIX if repr_text.startswith(canonical.ERROR_PREFIX) else ""
    body = repr_text[len(prefix):]
    budget = max(1, max_bytes - len(prefix))
    clipped = body.encode("utf-8")[:budget].decode("utf-8", "ignore").rstrip()
    return prefix + clipped + " " + canonical.TRUNCATION_MARKER


def error_outcome(
    reason: str, wall_time: float = 0.0, max_bytes: int | None = None
) -> ExecutionOutcome:
    text = canonical.canonical_error(reason).text
    if max_bytes is not None:
        text = _bounded(text, max_bytes)
    return _outcome(ERROR, text, wall_time)


def timeout_outcome(wall_time: float = 0.0) -> ExecutionOutcome:
    # never capped: the timeout repr is a fixed string by contract
    return _outcome(TIMEOUT, canonical.TIMEOUT_REPR, wall_time)


# ---------------------------------------------------------------------------
# SQL execution (embedded engine)


_SQL_TYPE_MAP = {
    "text": "TEXT",
    "string": "TEXT",
    "number": "REAL",
    "real": "REAL",
    "float": "REAL",
    "integer": "INTEGER",
    "int": "INTEGER",
    "boolean": "INTEGER",
    "others": "TEXT",
    "time": "TEXT",
}


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _load_database(database: DatabaseContext) -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:", check_same_thread=False)
    for table in database.tables:
        cols = ", ".join(
            f"{_quote_ident(c.name)} {_SQL_TYPE_MAP.get(c.type.lower(), c.type)}"
            for c in table.columns
        )
        conn.execute(f"CREATE TABLE {_quote_ident(table.name)} ({cols})")
        if table.rows:
            placeholders = ", ".join("?" for _ in table.columns)
            conn.executemany(
                f"INSERT INTO {_quote_ident(table.name)} VALUES ({placeholders})",
                [tuple(r) for r in table.rows],
            )
    conn.commit()
    return conn


_LINE_COMMENT = re.compile(r"--[^\n]*")
_BLOCK_COMMENT = re.compile(r"/\*.*?\*/", re.S)
_ORDER_BY = re.compile(r"\border\s+by\b", re.I)


def has_order_by(query: str) -> bool:
    stripped = _BLOCK_COMMENT.sub(" ", _LINE_COMMENT.sub(" ", query))
    return bool(_ORDER_BY.search(stripped))


def execute_sql(
    program: str,
    database: DatabaseContext,
    limits: ExecutionLimits = ExecutionLimits(),
) -> ExecutionOutcome:
    """Run one query in a fresh read-only session and linearize the result.

    Mutating statements fail as engine errors (the session is query-only).
    Queries without ORDER BY have set semantics: rows are sorted on their
    canonical cell strings so the repr is independent of engine row order.
    """
    start = time.perf_counter()
    conn = _load_database(database)
    interrupted = threading.Event()

    def _interrupt() -> None:
        interrupted.set()
        conn.interrupt()

    watchdog = threading.Timer(limits.timeout, _interrupt)
    watchdog.start()
    try:
        conn.execute("PRAGMA query_only = ON")
        cursor = conn.execute(program)
        headers = tuple(d[0] for d in cursor.description) if cursor.description else ()
        rows: list[tuple] = []
        if headers:
            cells = 0
            while cells <= limits.max_output_cells:
                row = cursor.fetchone()
                if row is None:
                    break
                rows.append(tuple(row))
                cells += len(headers)
    except sqlite3.Error as exc:
        wall = time.perf_counter() - start
        if interrupted.is_set():
            return timeout_outcome(wall)
        return error_outcome(str(exc), wall, limits.max_result_bytes)
    except sqlite3.Warning as exc:  # e.g. multiple statements in one string
        return error_outcome(str(exc), time.perf_counter() - start, limits.max_result_bytes)
    finally:
        watchdog.cancel()
        conn.close()

    if not has_order_by(program):
        rows.sort(key=lambda r: tuple(canonical.canonical_cell(c) for c in r))
    if len(headers) == 1 and len(rows) == 1:
        # Single-cell results are scalar answers: the repr is the bare value,
        # so gold results like "5" compare directly and queries differing only
        # in column alias still share an equivalence key.
        text = canonical.canonical_cell(rows[0][0])
    else:
        text = canonical.linearize_table(headers, rows, limits.max_output_cells).text
    return _outcome(
        SUCCESS,
        _bounded(text, limits.max_result_bytes),
        time.perf_counter() - start,
        table=(headers, tuple(rows)),
    )


# ---------------------------------------------------------------------------
# script-runner execution


class ScriptRunnerHandle(Protocol):
    def run(self, request: dict) -> dict:
        """Send one protocol request, return one protocol response."""
        ...

    def close(self) -> None: ...


class SubprocessRunner:
    """Protocol client owning one runner subprocess.

    The runner enforces timeout_ms itself; this client adds kill authority:
    if no response arrives within timeout + grace the process is killed, a
    timeout response is synthesized, and the next request respawns.
    """

    def __init__(self, command: Sequence[str], grace: float = 1.0) -> None:
        self.command = list(command)
        self.grace = grace
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()
        proc = self._proc

        def _pump() -> None:
            assert proc.stdout is not None
            for line in proc.stdout:
                self._lines.put(line)
            self._lines.put(None)  # EOF marker

        threading.Thread(target=_pump, daemon=True).start()

    def _ensure_alive(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()

    def run(self, request: dict) -> dict:
        with self._lock:
            self._ensure_alive()
            assert self._proc is not None and self._proc.stdin is not None
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._kill()
                raise RunnerProtocolError(f"runner stdin closed: {exc}") from exc
            deadline = request.get("timeout_ms", 10_000) / 1000.0 + self.grace
            try:
                line = self._lines.get(timeout=deadline)
            except queue.Empty:
                self._kill()
                return {"status": "timeout", "error": "Time out"}
            if line is None:
                self._kill()
                raise RunnerProtocolError("runner exited without responding")
            try:
                response = json.loads(line)
            except json.JSONDecodeError as exc:
                self._kill()
                raise RunnerProtocolError(f"bad response line: {line!r}") from exc
            if not isinstance(response, dict) or "status" not in response:
                raise RunnerProtocolError(f"malformed response: {response!r}")
            return response

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                try:
                    assert self._proc.stdin is not None
                    self._proc.stdin.close()
                    self._proc.wait(timeout=2.0)
                except (OSError, subprocess.TimeoutExpired):
                    self._kill()
            self._proc = None


def _runner_request(op: str, program: str, tests: Sequence[TestCase], limits: ExecutionLimits, seed: int) -> dict:
    return {
        "op": op,
        "program": program,
        "tests": [{"call": t.call, "expected": t.expected} for t in tests],
        "timeout_ms": int(limits.timeout * 1000),
        "seed": seed,
    }


def execute_scalar_script(
    program: str,
    limits: ExecutionLimits,
    runner: ScriptRunnerHandle,
    seed: int = 0,
) -> ExecutionOutcome:
    """Execute a script and canonicalize the final value of ``answer``."""
    start = time.perf_counter()
    try:
        response = runner.run(_runner_request("scalar", program, (), limits, seed))
    except RunnerProtocolError:
        return error_outcome("runner protocol", time.perf_counter() - start)
    wall = time.perf_counter() - start
    status = response.get("status")
    if status == "success":
        raw_type = response.get("result_type") or "str"
        raw_value = response.get("result_value")
        if raw_value is None:
            return error_outcome("runner protocol", wall)
        result = canonical.canonicalize_scalar(raw_type, raw_value)
        text = _bounded(result.text, limits.max_result_bytes)
        return _outcome(SUCCESS, text, wall, scalar=(raw_type, text))
    if status == "timeout":
        return timeout_outcome(wall)
    if status == "error":
        return error_outcome(response.get("error") or "unknown error", wall, limits.max_result_bytes)
    return error_outcome("runner protocol", wall)


def execute_function_tests(
    program: str,
    tests: Sequence[TestCase],
    limits: ExecutionLimits,
    runner: ScriptRunnerHandle,
    seed: int = 0,
) -> ExecutionOutcome:
    """Execute a candidate against its test cases in one runner request.

    The canonical repr concatenates per-test type+value entries in test
    order; a test that raised contributes an "ERROR: <reason>" entry and
    makes the overall status error (assertion pass/fail alone does not).
    """
    if not tests:
        raise ValueError("function_with_tests requires at least one test case")
    start = time.perf_counter()
    try:
        response = runner.run(_runner_request("tests", program, tests, limits, seed))
    except RunnerProtocolError:
        return error_outcome("runner protocol", time.perf_counter() - start)
    wall = time.perf_counter() - start
    status = response.get("status")
    if status == "timeout":
        return timeout_outcome(wall)
    if status == "error":
        return error_outcome(response.get("error") or "unknown error", wall, limits.max_result_bytes)
    if status != "success":
        return error_outcome("runner protocol", wall)

    raw_tests = response.get("per_test") or []
    if len(raw_tests) != len(tests):
        return error_outcome("runner protocol", wall)
    executions = []
    entries = []
    for raw in raw_tests:
        t_status = raw.get("status", "error")
        if t_status == "success":
            r_type = raw.get("result_type") or "str"
            r_value = raw.get("result_value") or ""
            entries.append(canonical.test_entry_repr(r_type, r_value))
            executions.append(
                TestExecution(
                    status="success",
                    result_type=r_type,
                    result_value=canonical.canonicalize_scalar(r_type, r_value).text,
                    passed=bool(raw.get("passed", False)),
                )
            )
        else:
            reason = canonical.normalize_error_message(raw.get("error") or "unknown error")
            entries.append(canonical.ERROR_PREFIX + reason)
            executions.append(
                TestExecution(
                    status="error",
                    result_type=None,
                    result_value=None,
                    passed=False,
                    error=reason,
                )
            )
    body = " || ".join(entries)
    if any(e.status != "success" for e in executions):
        repr_text = body if body.startswith(canonical.ERROR_PREFIX) else canonical.ERROR_PREFIX + body
        return _outcome(ERROR, _bounded(repr_text, limits.max_result_bytes), wall, per_test=tuple(executions))
    return _outcome(SUCCESS, _bounded(body, limits.max_result_bytes), wall, per_test=tuple(executions))


# ---------------------------------------------------------------------------
# candidate-set execution


def execute_candidate_set(
    candidate_set: CandidateSet,
    context: ExecutionContext,
    limits: ExecutionLimits = ExecutionLimits(),
    parallelism: int = 1,
    runner_factory: Callable[[], ScriptRunnerHandle] | None = None,
    seed: int = 0,
) -> list[tuple[ProgramCandidate, ExecutionOutcome]]:
    """Execute every candidate in isolation; output order matches input order.

    Each worker holds at most one live engine session or runner process;
    script contexts require a runner_factory (one runner per worker).
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not isinstance(context, DatabaseContext) and runner_factory is None:
        raise ValueError("script contexts require a runner_factory")

    local = threading.local()
    created: list[ScriptRunnerHandle] = []
    created_lock = threading.Lock()

    def _worker_runner() -> ScriptRunnerHandle:
        runner = getattr(local, "runner", None)
        if runner is None:
            assert runner_factory is not None
            runner = runner_factory()
            local.runner = runner
            with created_lock:
                created.append(runner)
        return runner

    def _execute(candidate: ProgramCandidate) -> ExecutionOutcome:
        if isinstance(context, DatabaseContext):
            return execute_sql(candidate.program_text, context, limits)
        if isinstance(context, ScalarScriptContext):
            return execute_scalar_script(candidate.program_text, limits, _worker_runner(), seed)
        if isinstance(context, FunctionTestsContext):
            return execute_function_tests(
                candidate.program_text, context.tests, limits, _worker_runner(), seed
            )
        raise TypeError(f"unsupported context {type(context).__name__}")

    candidates = list(candidate_set.candidates)
    try:
        if parallelism == 1:
            outcomes = [_execute(c) for c in candidates]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                outcomes = list(pool.map(_execute, candidates))
    finally:
        for runner in created:
            try:
                runner.close()
            except Exception:
                pass
    return list(zip(candidates, outcomes))
