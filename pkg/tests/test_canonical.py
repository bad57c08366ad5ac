from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from exerank import canonical
from exerank.execution import TestExecution
from support import make_outcome


class TestCanonicalNumber:
    def test_float_rounds_to_six_significant_digits(self):
        assert canonical.canonical_number(2.5000001) == "2.5"

    def test_boolean_lowercased(self):
        assert canonical.canonical_number(True) == "true"
        assert canonical.canonical_number(False) == "false"

    def test_integer_never_scientific(self):
        assert canonical.canonical_number(1000000) == "1000000"
        assert canonical.canonical_number(-12345678901) == "-12345678901"

    def test_integral_float_drops_point(self):
        assert canonical.canonical_number(42.0) == "42"

    def test_negative_zero_normalized(self):
        assert canonical.canonical_number(-0.0) == "0"

    def test_third(self):
        assert canonical.canonical_number(1 / 3) == "0.333333"

    def test_non_finite(self):
        assert canonical.canonical_number(float("nan")) == "nan"
        assert canonical.canonical_number(float("-inf")) == "-inf"

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_idempotent_through_reparse(self, x):
        text = canonical.canonical_number(x)
        reparsed = canonical.parse_number(text)
        assert reparsed is not None
        assert canonical.canonical_number(reparsed) == text


class TestLinearizeTable:
    def test_empty_relation(self):
        assert canonical.linearize_table(["a"], [], cap=64).text == "empty table"

    def test_one_by_one(self):
        assert canonical.linearize_table(["c"], [[5]], cap=64).text == "col: c || row1: 5"

    def test_three_by_two_matches_hand_written(self):
        headers = ["name", "age"]
        rows = [["Joe", 31], ["Ann", 25], ["May", 40]]
        expected = "col: name | age || row1: Joe | 31 || row2: Ann | 25 || row3: May | 40"
        assert canonical.linearize_table(headers, rows, cap=64).text == expected

    def test_ragged_rows_rejected(self):
        with pytest.raises(ValueError, match="ragged"):
            canonical.linearize_table(["a", "b"], [[1, 2], [3]], cap=64)

    def test_truncation_marker(self):
        rows = [[i] for i in range(10)]
        text = canonical.linearize_table(["n"], rows, cap=3).text
        assert text == "col: n || row1: 0 || row2: 1 || row3: 2 || ... (truncated)"

    def test_truncation_mid_row(self):
        text = canonical.linearize_table(["a", "b"], [[1, 2], [3, 4]], cap=3).text
        assert text == "col: a | b || row1: 1 | 2 || row2: 3 || ... (truncated)"

    def test_null_and_float_cells(self):
        text = canonical.linearize_table(["x"], [[None], [2.5000001]], cap=64).text
        assert text == "col: x || row1: null || row2: 2.5"


class TestCanonicalizeScalar:
    def test_float_rule(self):
        assert canonical.canonicalize_scalar("float", "2.5000001").text == "2.5"

    def test_bool_lowercased(self):
        assert canonical.canonicalize_scalar("bool", "True").text == "true"

    def test_int_plain(self):
        assert canonical.canonicalize_scalar("int", "1000000").text == "1000000"

    def test_strings_pass_through(self):
        assert canonical.canonicalize_scalar("str", " widget ").text == "widget"

    def test_idempotent(self):
        for raw_type, raw_value in [("float", "0.30000000000000004"), ("bool", "TRUE"), ("int", "007")]:
            once = canonical.canonicalize_scalar(raw_type, raw_value).text
            twice = canonical.canonicalize_scalar(raw_type, once).text
            assert once == twice

    def test_test_entry_repr(self):
        assert canonical.test_entry_repr("int", "7") == "type=int; value=7"


class TestEquivalenceKey:
    def test_same_canonical_same_key(self):
        assert canonical.equivalence_key("success", "5") == canonical.equivalence_key(
            "success", "5"
        )

    def test_success_vs_error_differ(self):
        a = canonical.equivalence_key("success", "5")
        b = canonical.equivalence_key("error", "ERROR: no such table: x")
        assert a != b

    def test_identical_error_reasons_aggregate(self):
        a = canonical.equivalence_key("error", "ERROR: division by zero")
        b = canonical.equivalence_key("error", "ERROR: division by zero")
        assert a == b

    def test_distinct_error_reasons_split(self):
        a = canonical.equivalence_key("error", "ERROR: division by zero")
        b = canonical.equivalence_key("error", "ERROR: name 'x' is not defined")
        assert a != b

    @given(st.text(max_size=40), st.text(max_size=40))
    def test_equal_keys_iff_equal_text(self, s, t):
        same = canonical.equivalence_key("success", s) == canonical.equivalence_key("success", t)
        assert same == (s == t)


class TestNormalizeErrorMessage:
    def test_strips_absolute_paths(self):
        msg = "cannot open /usr/lib/python3/dist-packages/thing.py for reading"
        assert "/usr/lib" not in canonical.normalize_error_message(msg)
        assert "thing.py" in canonical.normalize_error_message(msg)

    def test_collapses_whitespace(self):
        assert canonical.normalize_error_message("a   b\n\tc") == "a b c"


class TestResultsMatch:
    def test_numeric_tolerance(self):
        assert canonical.results_match("5.0000001", "5")
        assert not canonical.results_match("5.1", "5")

    def test_relative_scaling(self):
        assert canonical.results_match("1000000.5", "1000000")

    def test_text_fallback(self):
        assert canonical.results_match("widget", "widget")
        assert not canonical.results_match("widget", "gadget")


class TestLabelCandidate:
    def test_exact_match(self, scalar_task):
        assert canonical.label_candidate(make_outcome("success", "5"), scalar_task) == 1

    def test_error_never_matches(self, scalar_task):
        outcome = make_outcome("error", "ERROR: boom")
        assert canonical.label_candidate(outcome, scalar_task) == 0
        timeout = make_outcome("timeout", "ERROR: Time out")
        assert canonical.label_candidate(timeout, scalar_task) == 0

    def test_two_of_three_tests_is_wrong(self, function_task):
        per_test = (
            TestExecution("success", "int", "7", passed=True),
            TestExecution("success", "int", "0", passed=True),
            TestExecution("success", "int", "1", passed=False),
        )
        outcome = make_outcome(
            "success",
            "type=int; value=7 || type=int; value=0 || type=int; value=1",
            per_test=per_test,
        )
        assert canonical.label_candidate(outcome, function_task) == 0

    def test_all_tests_passed(self, function_task):
        per_test = tuple(
            TestExecution("success", "int", v, passed=True) for v in ("7", "0", "-3")
        )
        outcome = make_outcome(
            "success",
            " || ".join(canonical.test_entry_repr("int", v) for v in ("7", "0", "-3")),
            per_test=per_test,
        )
        assert canonical.label_candidate(outcome, function_task) == 1

    def test_gold_absent_is_unlabelable(self, scalar_task):
        from dataclasses import replace

        stripped = replace(scalar_task, gold_result=None)
        with pytest.raises(ValueError, match="unlabelable"):
            canonical.label_candidate(make_outcome("success", "5"), stripped)
