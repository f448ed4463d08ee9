import numpy as np
import pytest

from surge_al._backend import available_backends

BACKENDS = available_backends()

_criteria: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = getattr(item, "criterion_detail", "")
        _criteria.append((marker.args[0], rep.outcome.upper(), detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _criteria:
        status = "PASS" if status == "PASSED" else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))


@pytest.fixture(params=sorted(BACKENDS))
def kernels(request):
    """Each importable kernel module in turn."""
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
