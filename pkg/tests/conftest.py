import time
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture(scope="session")
def reference_run():
    """The near-equilibrium reference scenario, run once per session."""
    from spindd.cli import simulate
    from spindd.config import RunConfig

    cfg = RunConfig.load(CONFIGS / "near_equilibrium.toml")
    t0 = time.perf_counter()
    sim = simulate(cfg)
    return sim, time.perf_counter() - t0


@pytest.fixture
def criterion(request):
    """Register a test as an acceptance criterion: ``criterion(number, label)``."""
    def register(number, label):
        _ACCEPTANCE[request.node.nodeid] = (number, label)
    return register


def pytest_runtest_logreport(report):
    if report.nodeid in _ACCEPTANCE and (report.when == "call" or report.failed):
        number, label = _ACCEPTANCE[report.nodeid]
        status = "PASS" if report.passed else "FAIL"
        prev = _RESULTS.get(number)
        if prev is None or prev[0] == "PASS":
            _RESULTS[number] = (status, label)


_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, label = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {label}")
