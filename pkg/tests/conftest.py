import time

import pytest

_results: list[tuple[str, str, str, float]] = []
_setup_time = pytest.StashKey[float]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "setup" and report.passed:
        item.stash[_setup_time] = report.duration  # shared fixtures count toward the first user
        return
    if report.when in ("setup", "call"):
        cid, title = marker.args
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _results.append((cid, title, status, report.duration + item.stash.get(_setup_time, 0.0)))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, status, duration in sorted(_results, key=lambda r: _sort_key(r[0])):
        terminalreporter.write_line(f"[{status}] criterion {cid}: {title} ({duration:.1f}s)")


def _sort_key(cid: str):
    num = "".join(ch for ch in cid if ch.isdigit())
    return (int(num or 0), cid)


@pytest.fixture
def stopwatch():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start
