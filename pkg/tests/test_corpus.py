from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from exerank.corpus import (
    ColumnSpec,
    CorpusError,
    DatabaseContext,
    DatasetKind,
    Exemplar,
    FunctionTestsContext,
    RawSample,
    ScalarScriptContext,
    TableSpec,
    TaskInstance,
    TestCase,
    build_prompt,
    load_exemplars,
    load_offline_samples,
    load_tasks,
    write_offline_samples,
    write_tasks,
)


def sql_task(task_id="q1") -> TaskInstance:
    return TaskInstance(
        task_id=task_id,
        kind=DatasetKind.SQL_QUERY,
        nl_input="how many singers are there",
        context=DatabaseContext(
            tables=(
                TableSpec(
                    "singer",
                    (ColumnSpec("name", "text"), ColumnSpec("age", "integer")),
                    (("Joe", 31), ("Ann", 25)),
                ),
                TableSpec("concert", (ColumnSpec("year", "integer"),), ((2020,),)),
            )
        ),
        gold_program="SELECT count(*) FROM singer",
        gold_result="2",
    )


class TestTaskIO:
    def test_empty_file_gives_empty_list(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        path.write_text("")
        assert load_tasks(path, DatasetKind.SQL_QUERY) == []

    def test_round_trip_sql(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        original = [sql_task("a"), sql_task("b")]
        write_tasks(original, path)
        assert load_tasks(path, DatasetKind.SQL_QUERY) == original

    def test_round_trip_scalar_and_function(self, tmp_path):
        scalar = TaskInstance(
            "s1", DatasetKind.SCALAR_SCRIPT, "question", ScalarScriptContext(), "answer = 1", "1"
        )
        func = TaskInstance(
            "f1",
            DatasetKind.FUNCTION_WITH_TESTS,
            "identity",
            FunctionTestsContext((TestCase("f(1)", "1"),)),
            None,
            None,
        )
        for task, kind in ((scalar, DatasetKind.SCALAR_SCRIPT), (func, DatasetKind.FUNCTION_WITH_TESTS)):
            path = tmp_path / f"{task.task_id}.jsonl"
            write_tasks([task], path)
            assert load_tasks(path, kind) == [task]

    def test_two_table_record_loads_two_tables(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        write_tasks([sql_task()], path)
        loaded = load_tasks(path, DatasetKind.SQL_QUERY)
        assert len(loaded[0].context.tables) == 2
        assert loaded[0].context.tables[0].rows == (("Joe", 31), ("Ann", 25))

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        good = {
            "task_id": "x",
            "kind": "scalar_script",
            "nl_input": "q",
            "context": {},
            "gold_program": None,
            "gold_result": "1",
        }
        bad = {k: v for k, v in good.items() if k != "nl_input"}
        bad["task_id"] = "y"
        lines = [json.dumps(good), json.dumps(dict(good, task_id="w")), json.dumps(bad)]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError, match="line 3: missing field 'nl_input'"):
            load_tasks(path, DatasetKind.SCALAR_SCRIPT)

    def test_duplicate_task_id_rejected(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        write_tasks([sql_task("same"), sql_task("same")], path)
        with pytest.raises(CorpusError, match="duplicate task_id"):
            load_tasks(path, DatasetKind.SQL_QUERY)

    def test_kind_mismatch_rejected(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        write_tasks([sql_task()], path)
        with pytest.raises(CorpusError, match="expected kind"):
            load_tasks(path, DatasetKind.SCALAR_SCRIPT)

    def test_function_task_requires_tests(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        record = {
            "task_id": "f",
            "kind": "function_with_tests",
            "nl_input": "q",
            "context": {"tests": []},
            "gold_program": None,
            "gold_result": None,
        }
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusError, match="at least one test"):
            load_tasks(path, DatasetKind.FUNCTION_WITH_TESTS)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(CorpusError, match="line 1: invalid JSON"):
            load_tasks(path, DatasetKind.SQL_QUERY)

    def test_malformed_context_names_line(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        record = {
            "task_id": "x",
            "kind": "sql_query",
            "nl_input": "q",
            "context": {"tables": [{"name": "t"}]},  # no columns
            "gold_program": None,
            "gold_result": None,
        }
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusError, match="line 1: malformed context"):
            load_tasks(path, DatasetKind.SQL_QUERY)


class TestPrompts:
    def test_zero_exemplars_is_task_block_alone(self):
        task = sql_task()
        prompt = build_prompt(task, [])
        template = prompt.template
        assert prompt.rendered == template.render_task(task)

    def test_first_test_case_appears_in_prompt(self):
        task = TaskInstance(
            "f1",
            DatasetKind.FUNCTION_WITH_TESTS,
            "find the identity",
            FunctionTestsContext((TestCase("identity(7)", "7"), TestCase("identity(0)", "0"))),
        )
        prompt = build_prompt(task, [])
        assert "identity(7) == 7" in prompt.rendered
        assert "identity(0)" not in prompt.rendered.replace("identity(7)", "")

    def test_two_exemplars_length_is_sum_plus_separators(self):
        task = sql_task()
        exemplars = [
            Exemplar(DatasetKind.SQL_QUERY, "list all names", "SELECT name FROM singer"),
            Exemplar(DatasetKind.SQL_QUERY, "oldest age", "SELECT max(age) FROM singer"),
        ]
        prompt = build_prompt(task, exemplars)
        template = prompt.template
        blocks = [template.render_exemplar(e) for e in exemplars] + [template.render_task(task)]
        expected_length = sum(len(b) for b in blocks) + len(template.separator) * 2
        assert len(prompt.rendered) == expected_length

    def test_exemplar_kind_mismatch_rejected(self):
        with pytest.raises(ValueError, match="exemplar kind"):
            build_prompt(sql_task(), [Exemplar(DatasetKind.SCALAR_SCRIPT, "q", "answer = 1")])

    def test_rendering_is_deterministic(self):
        task = sql_task()
        assert build_prompt(task, []).rendered == build_prompt(task, []).rendered

    @given(st.text(min_size=1, max_size=60), st.text(min_size=1, max_size=60))
    def test_distinct_inputs_render_distinct_prompts(self, a, b):
        base = sql_task()
        from dataclasses import replace

        pa = build_prompt(replace(base, nl_input=a), [])
        pb = build_prompt(replace(base, nl_input=b), [])
        assert (pa.rendered == pb.rendered) == (a == b)

    def test_exemplar_file_round_trip(self, tmp_path):
        path = tmp_path / "exemplars.jsonl"
        path.write_text(
            json.dumps({"kind": "sql_query", "input": "q", "program": "SELECT 1"}) + "\n"
        )
        loaded = load_exemplars(path)
        assert loaded == [Exemplar(DatasetKind.SQL_QUERY, "q", "SELECT 1")]


class TestOfflineSamples:
    def test_grouping_preserves_order(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        samples = [
            RawSample("a", "answer = 1", (-0.5,)),
            RawSample("a", "answer = 2", (-0.7, -0.1)),
            RawSample("a", "answer = 3", (-0.9,)),
        ]
        write_offline_samples(samples, path)
        grouped = load_offline_samples(path)
        assert list(grouped) == ["a"]
        assert grouped["a"] == samples

    def test_positive_logprob_rejected(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        record = {"task_id": "a", "program_text": "x", "token_logprobs": [-0.1, 0.2]}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusError, match="logprob > 0"):
            load_offline_samples(path)

    def test_malformed_logprob_array_rejected(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        record = {"task_id": "a", "program_text": "x", "token_logprobs": [-0.1, "oops"]}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusError, match="malformed logprob"):
            load_offline_samples(path)

    def test_uniform_distribution_counts(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        samples = [
            RawSample(f"t{i % 10}", f"answer = {j}", (-0.1,))
            for j, i in enumerate(range(100))
        ]
        write_offline_samples(samples, path)
        grouped = load_offline_samples(path)
        # independent tally of the writing loop
        expected = {}
        for i in range(100):
            expected[f"t{i % 10}"] = expected.get(f"t{i % 10}", 0) + 1
        assert {k: len(v) for k, v in grouped.items()} == expected
        assert all(count == 10 for count in expected.values())

    def test_unknown_task_ids_retained(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        write_offline_samples([RawSample("ghost", "answer = 1", (-0.2,))], path)
        assert "ghost" in load_offline_samples(path)

    def test_greedy_source_round_trips(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        write_offline_samples(
            [RawSample("a", "answer = 1", (-0.2,), source="greedy")], path
        )
        assert load_offline_samples(path)["a"][0].source == "greedy"
