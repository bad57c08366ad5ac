"""Canonical execution-result strings, result equivalence, and gold labels.

Every execution result is reduced to a single canonical string before it is
shown to the verifier, persisted, or compared against gold:

- SQL result sets become ``col: h1 | h2 || row1: c11 | c12 || ...``
- scalar answers become the canonical rendering of the value
- per-test results become ``type=<t>; value=<v>`` entries joined by `` || ``
- every failure becomes ``ERROR: <reason>`` (timeouts exactly ``ERROR: Time out``)

Numbers are rendered in one canonical format (at most 6 significant digits,
no trailing zeros, integers without a decimal point) so that equivalence keys
do not depend on engine- or platform-specific float formatting.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .corpus import DatasetKind, TaskInstance

if TYPE_CHECKING:  # pragma: no cover
    from .execution import ExecutionOutcome

ERROR_PREFIX = "ERROR: "
TIMEOUT_REPR = "ERROR: Time out"
EMPTY_TABLE_REPR = "empty table"
TRUNCATION_MARKER = "... (truncated)"

# Relative tolerance for numeric gold comparison: |a - b| <= TOL * max(1, |b|).
NUMERIC_MATCH_TOL = 1e-6


@dataclass(frozen=True)
class CanonicalResult:
    """A finalized verifier-input string plus its coarse kind."""

    text: str
    kind: str  # "table" | "scalar" | "test_suite" | "error"

    def __post_init__(self) -> None:
        if (self.kind == "error") != self.text.startswith(ERROR_PREFIX):
            raise ValueError(
                f"kind {self.kind!r} inconsistent with text {self.text!r}"
            )


def canonical_number(value: int | float | bool) -> str:
    """Render a number in the canonical format shared by all components."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    text = f"{value:.6g}"
    if text == "-0":
        text = "0"
    return text


def parse_number(text: str) -> float | None:
    """Parse a canonical-ish numeric string; None when not a number."""
    stripped = text.strip()
    if not stripped:
        return None
    try:
        return float(stripped)
    except ValueError:
        return None


_INT_PATTERN = re.compile(r"^[+-]?\d+$")


def is_integer_text(text: str) -> bool:
    return bool(_INT_PATTERN.match(text.strip()))


def canonical_cell(cell: object) -> str:
    """Canonicalize one table cell. NULL renders as 'null'."""
    if cell is None:
        return "null"
    if isinstance(cell, (bool, int, float)):
        return canonical_number(cell)
    if isinstance(cell, bytes):
        return "0x" + cell.hex()
    return str(cell)


def linearize_table(
    headers: list[str] | tuple[str, ...],
    rows: list[list] | list[tuple] | tuple,
    cap: int,
) -> CanonicalResult:
    """Linearize a result table into the canonical verifier-input string.

    At most ``cap`` data cells are emitted (row-major); anything beyond is
    replaced by the truncation marker. Ragged rows are a caller bug.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    width = len(headers)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(
                f"ragged row {i + 1}: expected {width} cells, got {len(row)}"
            )
    if not rows:
        return CanonicalResult(EMPTY_TABLE_REPR, "table")

    parts = ["col: " + " | ".join(str(h) for h in headers)]
    emitted = 0
    truncated = False
    for r, row in enumerate(rows, start=1):
        if emitted >= cap:
            truncated = True
            break
        take = min(width, cap - emitted)
        cells = [canonical_cell(c) for c in row[:take]]
        emitted += take
        parts.append(f"row{r}: " + " | ".join(cells))
        if take < width:
            truncated = True
            break
    text = " || ".join(parts)
    if truncated:
        text += " || " + TRUNCATION_MARKER
    return CanonicalResult(text.strip(), "table")


def canonicalize_scalar(raw_type: str, raw_value: str) -> CanonicalResult:
    """Canonicalize a (runtime type name, string-cast value) pair."""
    text = raw_value.strip()
    if raw_type == "bool":
        lowered = text.lower()
        if lowered in ("true", "false"):
            text = lowered
    elif raw_type == "int":
        try:
            text = str(int(text))
        except ValueError:
            pass
    elif raw_type == "float":
        parsed = parse_number(text)
        if parsed is not None:
            text = canonical_number(parsed)
    return CanonicalResult(text, "scalar")


def test_entry_repr(raw_type: str, raw_value: str) -> str:
    """Render one per-test result as a ``type=<t>; value=<v>`` entry."""
    canon = canonicalize_scalar(raw_type, raw_value)
    return f"type={raw_type}; value={canon.text}"


def canonical_error(reason: str) -> CanonicalResult:
    return CanonicalResult(ERROR_PREFIX + normalize_error_message(reason), "error")


_PATH_PATTERN = re.compile(r"(?:/[\w.\-]+){2,}")


def normalize_error_message(message: str) -> str:
    """Strip absolute paths and collapse whitespace so error reprs are
    machine-independent (they participate in equivalence keys)."""
    no_paths = _PATH_PATTERN.sub(lambda m: m.group(0).rsplit("/", 1)[-1], message)
    return " ".join(no_paths.split())


def equivalence_key(status: str, canonical_repr: str) -> str:
    """Stable digest identifying outcomes with the same canonical result."""
    digest = hashlib.sha256(f"{status}\n{canonical_repr}".encode("utf-8"))
    return digest.hexdigest()[:16]


def results_match(candidate_text: str, gold_text: str) -> bool:
    """Gold comparison: numeric tolerance first, exact canonical text second."""
    a = parse_number(candidate_text)
    b = parse_number(gold_text)
    if a is not None and b is not None:
        if abs(a - b) <= NUMERIC_MATCH_TOL * max(1.0, abs(b)):
            return True
    return candidate_text.strip() == gold_text.strip()


def label_candidate(outcome: "ExecutionOutcome", task: TaskInstance) -> int:
    """Binary correctness label for a candidate's outcome against gold.

    sql_query / scalar_script: 1 iff execution succeeded and the canonical
    result matches the gold result. function_with_tests: 1 iff every test
    passed. Error and timeout outcomes are always 0.
    """
    if task.kind is DatasetKind.FUNCTION_WITH_TESTS:
        if not getattr(task.context, "tests", ()):
            raise ValueError(f"unlabelable instance {task.task_id}: no test cases")
        if outcome.status != "success" or outcome.per_test is None:
            return 0
        return int(all(t.passed for t in outcome.per_test))
    if task.gold_result is None:
        raise ValueError(f"unlabelable instance {task.task_id}: no gold result")
    if outcome.status != "success":
        return 0
    return int(results_match(outcome.canonical_repr, task.gold_result))
