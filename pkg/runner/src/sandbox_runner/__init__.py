"""Sandboxed script runner speaking line-delimited JSON over stdio.

One request per stdin line, one response per stdout line, always, even when
the candidate program crashes. Candidates run in a fresh namespace with
restricted builtins (no file, network, subprocess, or import escape hatches)
and a watchdog that aborts them at timeout_ms. The process stays alive across
requests; a stuck candidate at worst leaks one daemon thread, and the caller
keeps kill authority.

Request:  {"op": "scalar" | "tests", "program": str,
           "tests": [{"call": str, "expected": str}],
           "timeout_ms": int, "seed": int}
Response: {"status": "success" | "error" | "timeout",
           "result_type": str | null, "result_value": str | null,
           "per_test": [{"status", "result_type", "result_value",
                         "passed"}] | null,
           "error": str | null}
"""

from __future__ import annotations

import builtins
import ctypes
import io
import json
import math
import random
import sys
import threading

TIMEOUT_GRACE = 0.25

_ALLOWED_MODULES = {
    "math", "cmath", "random", "re", "itertools", "functools", "collections",
    "string", "datetime", "fractions", "decimal", "heapq", "bisect",
    "statistics", "operator", "copy", "json", "typing", "array",
}

_SAFE_BUILTIN_NAMES = [
    "abs", "all", "any", "ascii", "bin", "bool", "bytearray", "bytes",
    "callable", "chr", "complex", "dict", "divmod", "enumerate", "filter",
    "float", "format", "frozenset", "getattr", "hasattr", "hash", "hex",
    "id", "int", "isinstance", "issubclass", "iter", "len", "list", "map",
    "max", "min", "next", "object", "oct", "ord", "pow", "range", "repr",
    "reversed", "round", "set", "setattr", "slice", "sorted", "str", "sum",
    "tuple", "type", "zip",
]


class ScriptTimeout(BaseException):
    """Injected into the worker thread when the watchdog fires."""


def _safe_import(name, globals=None, locals=None, fromlist=(), level=0):
    root = name.split(".")[0]
    if root not in _ALLOWED_MODULES:
        raise ImportError(f"import of {name!r} is not allowed in the sandbox")
    return __import__(name, globals, locals, fromlist, level)


def _build_builtins() -> dict:
    safe = {name: getattr(builtins, name) for name in _SAFE_BUILTIN_NAMES}
    for name in dir(builtins):
        obj = getattr(builtins, name)
        if isinstance(obj, type) and issubclass(obj, BaseException):
            safe[name] = obj
    safe["__import__"] = _safe_import
    safe["print"] = lambda *args, **kwargs: print(  # stdout belongs to the protocol
        *args, **{**kwargs, "file": io.StringIO()}
    )
    safe["None"] = None
    safe["True"] = True
    safe["False"] = False
    return safe


def _fresh_namespace() -> dict:
    return {"__builtins__": _build_builtins(), "__name__": "__main__"}


def canonical_float(value: float) -> str:
    """Shortest rendering with at most 6 significant digits (mirrors the
    harness-side canonical numeric format so equivalence keys line up)."""
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    text = f"{value:.6g}"
    return "0" if text == "-0" else text


def string_cast(value) -> str:
    """Native string conversion, except floats use the canonical format."""
    if isinstance(value, float):
        return canonical_float(value)
    return str(value)


def _match_key(value) -> str:
    """Comparison form of a runtime value for judging `passed`."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return canonical_float(value)
    return str(value)


def _expected_key(text: str) -> str:
    """Comparison form of an expected-value string (same canonical rules)."""
    stripped = text.strip()
    if stripped in ("True", "False"):
        return stripped.lower()
    try:
        return str(int(stripped))
    except ValueError:
        pass
    try:
        return canonical_float(float(stripped))
    except ValueError:
        return stripped


def _response(status, result_type=None, result_value=None, per_test=None, error=None):
    return {
        "status": status,
        "result_type": result_type,
        "result_value": result_value,
        "per_test": per_test,
        "error": error,
    }


def _error_text(exc: BaseException) -> str:
    message = str(exc)
    name = type(exc).__name__
    return f"{name}: {message}" if message else name


def _run_scalar(program: str, seed: int) -> dict:
    namespace = _fresh_namespace()
    random.seed(seed)
    try:
        exec(compile(program, "<candidate>", "exec"), namespace)
    except ScriptTimeout:
        raise
    except BaseException as exc:
        return _response("error", error=_error_text(exc))
    if "answer" not in namespace:
        return _response("error", error="variable 'answer' undefined")
    value = namespace["answer"]
    return _response(
        "success", result_type=type(value).__name__, result_value=string_cast(value)
    )


def _run_tests(program: str, tests: list, seed: int) -> dict:
    namespace = _fresh_namespace()
    random.seed(seed)
    try:
        exec(compile(program, "<candidate>", "exec"), namespace)
    except ScriptTimeout:
        raise
    except BaseException as exc:
        return _response("error", error=_error_text(exc))
    per_test = []
    for test in tests:
        call = test.get("call", "")
        expected = test.get("expected", "")
        try:
            value = eval(compile(call, "<test>", "eval"), namespace)
        except ScriptTimeout:
            raise
        except BaseException as exc:
            per_test.append(
                {
                    "status": "error",
                    "result_type": None,
                    "result_value": None,
                    "passed": False,
                    "error": _error_text(exc),
                }
            )
            continue
        per_test.append(
            {
                "status": "success",
                "result_type": type(value).__name__,
                "result_value": string_cast(value),
                "passed": _match_key(value) == _expected_key(expected),
            }
        )
    return _response("success", per_test=per_test)


def _inject_timeout(thread: threading.Thread) -> None:
    if thread.ident is None:
        return
    ctypes.pythonapi.PyThreadState_SetAsyncExc(
        ctypes.c_long(thread.ident), ctypes.py_object(ScriptTimeout)
    )


def execute_request(request: dict) -> dict:
    """Run one protocol request under the watchdog; never raises."""
    op = request.get("op")
    program = request.get("program")
    if op not in ("scalar", "tests") or not isinstance(program, str):
        return _response("error", error="runner protocol: bad request fields")
    tests = request.get("tests") or []
    if op == "tests" and not tests:
        return _response("error", error="runner protocol: tests required")
    timeout_ms = int(request.get("timeout_ms", 10_000))
    seed = int(request.get("seed", 0))

    box: dict = {}

    def worker() -> None:
        try:
            if op == "scalar":
                box["response"] = _run_scalar(program, seed)
            else:
                box["response"] = _run_tests(program, tests, seed)
        except ScriptTimeout:
            box["timed_out"] = True
        except BaseException as exc:  # defensive: the runner must not die
            box["response"] = _response("error", error=_error_text(exc))

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    thread.join(timeout_ms / 1000.0)
    if thread.is_alive():
        _inject_timeout(thread)
        thread.join(TIMEOUT_GRACE)
        return _response("timeout", error="Time out")
    if box.get("timed_out"):
        return _response("timeout", error="Time out")
    return box.get("response", _response("error", error="runner internal: no result"))


def main() -> int:
    """Request loop: one JSON document per line, in and out."""
    stdout = sys.stdout
    for line in iter(sys.stdin.readline, ""):
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            response = _response("error", error=f"runner protocol: {exc}")
        else:
            response = execute_request(request)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
