import numpy as np
import pytest

_criteria: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test belongs to")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = getattr(report, "criterion", None)
    if name:
        _criteria.setdefault(name, []).append(report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _criteria.items():
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({sum(results)}/{len(results)} checks)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
