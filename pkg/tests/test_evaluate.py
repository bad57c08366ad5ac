from __future__ import annotations

import math
import random

import pytest

from support import make_scored
from exerank.corpus import DatasetKind, ScalarScriptContext, TaskInstance
from exerank.evaluate import (
    CalibrationCurve,
    EvaluationReport,
    calibration_report,
    execution_accuracy,
    outcome_analysis,
    result_type_of,
)


def scalar_task(gold="5", task_id="t") -> TaskInstance:
    return TaskInstance(
        task_id=task_id,
        kind=DatasetKind.SCALAR_SCRIPT,
        nl_input="how many things are there",
        context=ScalarScriptContext(),
        gold_result=gold,
    )


class TestExecutionAccuracy:
    def test_all_correct(self):
        tasks = [scalar_task(task_id=f"t{i}") for i in range(4)]
        selections = {t.task_id: make_scored("p", -1.0, "5") for t in tasks}
        assert execution_accuracy(selections, tasks) == 1.0

    def test_none_correct(self):
        tasks = [scalar_task(task_id=f"t{i}") for i in range(4)]
        selections = {t.task_id: make_scored("p", -1.0, "9") for t in tasks}
        assert execution_accuracy(selections, tasks) == 0.0

    def test_seven_of_ten(self):
        tasks = [scalar_task(task_id=f"t{i}") for i in range(10)]
        selections = {
            t.task_id: make_scored("p", -1.0, "5" if i < 7 else "9")
            for i, t in enumerate(tasks)
        }
        assert execution_accuracy(selections, tasks) == 0.7

    def test_none_selection_counts_wrong(self):
        tasks = [scalar_task(task_id="t0"), scalar_task(task_id="t1")]
        selections = {"t0": make_scored("p", -1.0, "5"), "t1": None}
        assert execution_accuracy(selections, tasks) == 0.5


class TestCalibration:
    def test_perfect_scorer_is_precise_where_cutoff_separates(self):
        # every task: 5 correct of 10, verifier_prob equal to the label
        corpus = []
        for i in range(20):
            task = scalar_task(task_id=f"t{i}")
            scored = [
                make_scored(f"p{j}", -1.0 - j * 0.1, "5" if j < 5 else "9",
                            verifier_prob=1.0 if j < 5 else 0.0)
                for j in range(10)
            ]
            corpus.append((task, scored))
        curve = calibration_report(corpus)
        verifier_points = dict(zip(curve.thresholds, curve.precision["verifier"]))
        # cutoff separates the labels at and above the 60th percentile
        for threshold in (60, 70, 80, 90, 100):
            assert verifier_points[threshold] == 1.0
        # low percentiles keep everything, precision falls to the base rate
        assert verifier_points[10] == 0.5

    def test_random_scores_track_base_rate(self):
        rng = random.Random(3)
        corpus = []
        for i in range(100):
            task = scalar_task(task_id=f"t{i}")
            scored = [
                make_scored(
                    f"p{j}", -1.0, "5" if rng.random() < 0.5 else "9",
                    verifier_prob=rng.random(),
                )
                for j in range(20)
            ]
            corpus.append((task, scored))
        curve = calibration_report(corpus)
        # Monte-Carlo bound: every kept pool has >= 100 candidates, so a
        # +-0.1 window around the 0.5 base rate is > 6 sigma
        for point in curve.precision["verifier"]:
            assert abs(point - 0.5) < 0.1

    def test_top_percentile_is_per_task_top1(self):
        rng = random.Random(7)
        corpus = []
        top_labels = []
        for i in range(50):
            task = scalar_task(task_id=f"t{i}")
            scored = [
                make_scored(f"p{j}", -rng.uniform(0.1, 8.0),
                            "5" if rng.random() < 0.4 else "9",
                            verifier_prob=rng.uniform(0.01, 0.99))
                for j in range(8)
            ]
            corpus.append((task, scored))
            top = max(scored, key=lambda c: c.joint_log_score)
            top_labels.append(1 if top.outcome.canonical_repr == "5" else 0)
        curve = calibration_report(corpus)
        expected = sum(top_labels) / len(top_labels)
        joint_at_100 = curve.precision["joint"][curve.thresholds.index(100)]
        assert math.isclose(joint_at_100, expected)

    def test_three_scorers_reported(self):
        corpus = [(scalar_task(), [make_scored("p", -1.0, "5")])]
        curve = calibration_report(corpus)
        assert set(curve.precision) == {"verifier", "generator", "joint"}

    def test_thresholds_strictly_increasing_enforced(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            CalibrationCurve(thresholds=(10, 10), precision={"verifier": (0.5, 0.5)})

    def test_csv_shape(self):
        corpus = [(scalar_task(), [make_scored("p", -1.0, "5")])]
        text = calibration_report(corpus).to_csv_text()
        lines = text.strip().split("\n")
        assert lines[0] == "threshold,generator,joint,verifier"
        assert len(lines) == 11


class TestOutcomeAnalysis:
    def test_each_bucket_reachable(self):
        tasks = []
        lever_sel = {}
        greedy_sel = {}
        all_scored = {}

        def add(task_id, lever, greedy, pool):
            tasks.append(scalar_task(task_id=task_id))
            lever_sel[task_id] = lever
            greedy_sel[task_id] = greedy
            all_scored[task_id] = pool

        # win: greedy had an execution error
        lv = make_scored("l", -1.0, "5")
        gr = make_scored("g", -1.0, "ERROR: Time out", status="timeout")
        add("w-error", lv, gr, [lv, gr])
        # win: greedy result type differs (str vs int)
        gr2 = make_scored("g", -1.0, "many")
        gr2 = _retyped(gr2, "str")
        lv2 = make_scored("l", -1.0, "5")
        add("w-type", lv2, gr2, [lv2, gr2])
        # win: same type, different magnitude bucket (5 vs 5000)
        gr3 = make_scored("g", -1.0, "5000")
        lv3 = make_scored("l", -1.0, "5")
        add("w-range", lv3, gr3, [lv3, gr3])
        # win: same type and range (others)
        gr4 = make_scored("g", -1.0, "7")
        lv4 = make_scored("l", -1.0, "5")
        add("w-others", lv4, gr4, [lv4, gr4])
        # fail: no correct candidate at all
        bad = make_scored("x", -1.0, "9")
        add("f-none", bad, bad, [bad, make_scored("y", -2.0, "8")])
        # fail: a correct candidate exists with same type and range
        wrong = make_scored("x", -1.0, "7")
        right = make_scored("y", -2.0, "5")
        add("f-same", wrong, wrong, [wrong, right])
        # fail: correct candidate differs in range (others bucket)
        wrong2 = make_scored("x", -1.0, "7000")
        right2 = make_scored("y", -2.0, "5")
        add("f-others", wrong2, wrong2, [wrong2, right2])

        buckets = outcome_analysis(lever_sel, greedy_sel, tasks, all_scored)
        assert buckets.win_greedy_had_error == 1
        assert buckets.win_type_mismatch == 1
        assert buckets.win_range_mismatch == 1
        assert buckets.win_others == 1
        assert buckets.fail_no_correct_in_samples == 1
        assert buckets.fail_same_type_and_range == 1
        assert buckets.fail_others == 1
        # counts partition the win and fail sets
        assert len(buckets.wins) == 4
        assert len(buckets.fails) == 3
        payload = buckets.to_dict()
        assert payload["wins"]["total"] == sum(
            v for k, v in payload["wins"].items() if k != "total"
        )
        assert payload["fails"]["total"] == sum(
            v for k, v in payload["fails"].items() if k != "total"
        )

    def test_result_type_of(self):
        assert result_type_of(make_scored("p", -1.0, "5").outcome) == "int"
        assert result_type_of(make_scored("p", -1.0, "ERROR: x", status="error").outcome) == "error"


def _retyped(scored, type_name):
    import dataclasses

    outcome = dataclasses.replace(scored.outcome, scalar=(type_name, scored.outcome.canonical_repr))
    return dataclasses.replace(scored, outcome=outcome)


class TestEvaluationReport:
    def test_oracle_bound_enforced(self):
        with pytest.raises(ValueError, match="oracle bound"):
            EvaluationReport(
                accuracies={"ml": 0.9},
                oracle_accuracy=0.8,
                selections={},
                task_count=10,
                config_digest="x",
                seed=0,
            )

    def test_table_text_lists_strategies(self):
        report = EvaluationReport(
            accuracies={"ml": 0.5, "lever": 0.7},
            oracle_accuracy=0.9,
            selections={},
            task_count=10,
            config_digest="x",
            seed=0,
        )
        text = report.table_text()
        assert "lever" in text and "oracle" in text
