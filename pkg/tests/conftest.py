import time

import numpy as np
import pytest

from spdekit.mesh import build_fv_grid, build_uniform_triangulation


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def tri10():
    return build_uniform_triangulation(1.0, 1.0, 10, 10)


@pytest.fixture(scope="session")
def grid8():
    return build_fv_grid(1.0, 1.0, 8, 8)


# Acceptance bookkeeping: outcomes of every test in the session, the session
# start time, and the one-line verdicts printed in the terminal summary.
class SessionRecord:
    def __init__(self):
        self.start = time.perf_counter()
        self.outcomes: dict[str, str] = {}
        self.verdicts: dict[int, str] = {}

    def record(self, number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        self.verdicts[number] = line
        print(line)


RECORD = SessionRecord()


@pytest.fixture(scope="session")
def session_record():
    return RECORD


def pytest_collection_modifyitems(config, items):
    # acceptance runs last so its runtime check sees the whole session
    items.sort(key=lambda it: "test_acceptance" in it.nodeid)


def pytest_runtest_logreport(report):
    if report.when == "call" or report.outcome != "passed":
        prev = RECORD.outcomes.get(report.nodeid)
        if prev is None or prev == "passed":
            RECORD.outcomes[report.nodeid] = "xfailed" if hasattr(report, "wasxfail") else report.outcome


def pytest_terminal_summary(terminalreporter):
    if RECORD.verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RECORD.verdicts):
            terminalreporter.write_line(RECORD.verdicts[n])
