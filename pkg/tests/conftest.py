from __future__ import annotations

import sys
from pathlib import Path

import pytest

from chargeqoc.artifacts import read_run_config
from chargeqoc.grape import multi_start

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (title, passed, detail), one entry per test
ACCEPTANCE_RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test backing one acceptance criterion")


@pytest.fixture(scope="session")
def cnot_config():
    return read_run_config(CONFIGS / "cnot_nakamura.json")


@pytest.fixture(scope="session")
def cnot_run(cnot_config):
    """Best-of-8 optimisation with the bundled CNOT configuration, shared by all tests."""
    best, reports = multi_start(cnot_config.device, cnot_config.optimization_config(), cnot_config.seeds())
    return best, reports


@pytest.fixture(scope="session")
def cnot_pulse(cnot_run):
    return cnot_run[0].sequence


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else "error"
    ACCEPTANCE_RESULTS.setdefault(number, []).append((title, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        entries = ACCEPTANCE_RESULTS[number]
        passed = all(ok for _, ok, _ in entries)
        title = entries[0][0]
        detail = " | ".join(d for _, _, d in entries if d)
        terminalreporter.write_line(f"AC{number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
