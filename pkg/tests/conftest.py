import numpy as np
import pytest

from dualhead import tensor as T


@pytest.fixture(autouse=True)
def _clean_tape():
    T.get_tape().clear()
    yield
    T.get_tape().clear()
    T.set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA: dict[int, tuple[str, list[bool]]] = {}
_NOTES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_notes():
    """Lines printed under the criteria summary (measured numbers, timings)."""
    return _NOTES


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    _CRITERIA.setdefault(number, (title, []))[1].append(report.passed and not report.skipped)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, results = _CRITERIA[number]
        verdict = "PASS" if results and all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}")
    for line in _NOTES:
        terminalreporter.write_line("  " + line)
