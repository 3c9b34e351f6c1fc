import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n = mark.args[0]
        prev = _criteria.get(n, ("PASS", []))
        status = prev[0]
        if rep.outcome == "failed":
            status = "FAIL"
        elif rep.outcome == "skipped" and status == "PASS":
            status = "SKIP"
        _criteria[n] = (status, prev[1] + [item.name])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, names = _criteria[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {', '.join(names)}")
