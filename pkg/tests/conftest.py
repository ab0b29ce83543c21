import json
import os

import pytest

from cantorpv.cantor import preset

HERE = os.path.dirname(__file__)
GOLDEN = os.path.join(HERE, "fixtures", "golden.json")


@pytest.fixture(scope="session")
def golden():
    with open(GOLDEN) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def garnett():
    return preset("garnett")


@pytest.fixture(scope="session")
def geo08():
    return preset("geo08")


# acceptance summary: one line per criterion at the end of the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    failed = report.failed or (report.when == "call" and not report.passed)
    if report.when == "call" or failed:
        detail = dict(item.user_properties).get("detail", "")
        prev = _CRITERIA.get(number)
        ok = not failed and (prev is None or prev[1])
        if prev and prev[2]:
            detail = f"{prev[2]} | {detail}" if detail else prev[2]
        _CRITERIA[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
