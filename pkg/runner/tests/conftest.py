from __future__ import annotations

import pytest

from runner_support import RunnerProcess


@pytest.fixture
def runner():
    proc = RunnerProcess()
    yield proc
    proc.close()
