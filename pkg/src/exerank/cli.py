"""Command-line surface for the batch pipeline.

Subcommands mirror the pipeline stages (each independently debuggable and
resumable from persisted artifacts), plus `run` for the whole chain and
`report` to rebuild calibration / outcome analyses from artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys

from .pipeline import (
    STAGES,
    StageError,
    compute_calibration,
    compute_outcome_buckets,
    load_config,
    run_pipeline,
    reranked_path,
    scored_eval_candidates,
)
from .rerank import STRATEGIES


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument(
        "--strategies",
        default=None,
        help=f"comma-separated subset of {','.join(STRATEGIES)}",
    )
    parser.add_argument(
        "--no-aggregate",
        action="store_true",
        help="disable execution-result aggregation in reranking",
    )
    parser.add_argument("--report-dir", default=None, help="override report directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exerank",
        description="Execution-guided verification and reranking of program candidates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGES:
        stage_parser = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(stage_parser)

    run_parser = sub.add_parser("run", help="run all stages in order")
    _add_common(run_parser)
    run_parser.add_argument(
        "--stage", default=None, choices=sorted(STAGES), help="run only this stage"
    )

    report_parser = sub.add_parser(
        "report", help="rebuild analyses from persisted artifacts"
    )
    _add_common(report_parser)
    report_parser.add_argument("--calibration", action="store_true")
    report_parser.add_argument("--outcomes", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    strategies = args.strategies.split(",") if args.strategies else None
    try:
        cfg = load_config(
            args.config,
            seed=args.seed,
            strategies=strategies,
            no_aggregate=args.no_aggregate,
            report_dir=args.report_dir,
        )
        if args.command == "run":
            if args.stage:
                STAGES[args.stage](cfg)
            else:
                run_pipeline(cfg)
        elif args.command == "report":
            _rebuild_report(cfg, args.calibration, args.outcomes)
        else:
            STAGES[args.command](cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _rebuild_report(cfg, with_calibration: bool, with_outcomes: bool) -> None:
    tasks, scored = scored_eval_candidates(cfg)
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    if with_calibration:
        curve = compute_calibration(cfg, tasks, scored)
        path = cfg.report_dir / "calibration.csv"
        path.write_text(curve.to_csv_text())
        print(f"wrote {path}")
    if with_outcomes:
        selections = _selections_from_artifacts(cfg, scored)
        buckets = compute_outcome_buckets(cfg, tasks, scored, selections)
        path = cfg.report_dir / "outcome_buckets.json"
        path.write_text(json.dumps(buckets.to_dict(), sort_keys=True, indent=2) + "\n")
        print(f"wrote {path}")
    if not with_calibration and not with_outcomes:
        print("nothing to do: pass --calibration and/or --outcomes")


def _selections_from_artifacts(cfg, scored):
    selections: dict[str, dict] = {}
    reranked = reranked_path(cfg)
    if not reranked.exists():
        raise StageError(f"report: missing {reranked}")
    with open(reranked, "r", encoding="utf-8") as fh:
        for line in fh:
            record = json.loads(line)
            by_text = {c.program_text: c for c in scored[record["task_id"]]}
            program = record["selected_program"]
            selections.setdefault(record["strategy"], {})[record["task_id"]] = (
                by_text[program] if program is not None else None
            )
    return selections


if __name__ == "__main__":
    raise SystemExit(main())
