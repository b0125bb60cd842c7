"""Acceptance bookkeeping and shared expensive fixtures.

Tests marked ``@pytest.mark.criterion(n, "title")`` are grouped per
criterion; the terminal summary prints one PASS/FAIL line for each, with
any ``record_property("detail", ...)`` values the tests attached.
"""

import time
from collections import OrderedDict

import pytest

_RESULTS = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        entry = _RESULTS.setdefault(number, {"title": title, "passed": True, "details": [], "tests": 0})
        entry["tests"] += 1
        entry["passed"] &= report.outcome == "passed"
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        status = "PASS" if entry["passed"] else "FAIL"
        line = f"criterion {number}: {status}  {entry['title']}"
        if entry["details"]:
            line += "  [" + "; ".join(entry["details"]) + "]"
        terminalreporter.write_line(line)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


@pytest.fixture(scope="session")
def generalization_report(tmp_path_factory):
    """Baseline vs STDGN on the held-out phantom vendor, three seeds, desk preset."""
    from stdgn.config import resolve
    from stdgn.experiment import reproduce_generalization_experiment

    config, _ = resolve(preset="desk", env={})
    with Timer() as t:
        report = reproduce_generalization_experiment(config, seeds=(0, 1, 2), out_dir=tmp_path_factory.mktemp("repro"))
    report.seconds = t.seconds
    return report
