from __future__ import annotations

import threading
from http.server import HTTPServer

import pytest

from exerank.corpus import (
    ColumnSpec,
    DatabaseContext,
    DatasetKind,
    FunctionTestsContext,
    ScalarScriptContext,
    TableSpec,
    TaskInstance,
    TestCase,
)
from support import ScriptedHttpHandler


@pytest.fixture
def singer_db() -> DatabaseContext:
    return DatabaseContext(
        tables=(
            TableSpec(
                name="singer",
                columns=(
                    ColumnSpec("name", "text"),
                    ColumnSpec("age", "integer"),
                    ColumnSpec("country", "text"),
                ),
                rows=(
                    ("Joe", 31, "US"),
                    ("Ann", 25, "FR"),
                    ("May", 40, "US"),
                    ("Tom", 25, "UK"),
                    ("Ben", 33, "FR"),
                ),
            ),
            TableSpec(
                name="concert",
                columns=(ColumnSpec("year", "integer"), ColumnSpec("singer_name", "text")),
                rows=((2019, "Joe"), (2020, "Ann"), (2020, "Joe")),
            ),
        )
    )


@pytest.fixture
def scalar_task() -> TaskInstance:
    return TaskInstance(
        task_id="t-scalar",
        kind=DatasetKind.SCALAR_SCRIPT,
        nl_input="how many apples are left in the basket",
        context=ScalarScriptContext(),
        gold_program="answer = 5",
        gold_result="5",
    )


@pytest.fixture
def function_task() -> TaskInstance:
    return TaskInstance(
        task_id="t-func",
        kind=DatasetKind.FUNCTION_WITH_TESTS,
        nl_input="return the input unchanged",
        context=FunctionTestsContext(
            tests=(
                TestCase("identity(7)", "7"),
                TestCase("identity(0)", "0"),
                TestCase("identity(-3)", "-3"),
            )
        ),
        gold_program="def identity(x):\n    return x",
    )


@pytest.fixture
def scripted_http_url():
    server = HTTPServer(("127.0.0.1", 0), ScriptedHttpHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    ScriptedHttpHandler.responses = []
    ScriptedHttpHandler.requests = []
    yield f"http://127.0.0.1:{server.server_port}/score"
    server.shutdown()
