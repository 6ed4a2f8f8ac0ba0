from __future__ import annotations

import time

import pytest

from fame.config import PipelineConfig
from fame.pipeline import run_setup
from fame.synthetic import generate


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion this test checks")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        item.config._criteria.append((str(marker.args[0]), status, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_criteria", [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")

    def key(row):
        label = row[0]
        digits = "".join(c for c in label if c.isdigit())
        return int(digits), label

    for label, status, detail in sorted(rows, key=key):
        terminalreporter.write_line(f"criterion {label:<4} {status}  {detail}")


@pytest.fixture(scope="session")
def small_synth():
    return generate(n=8000, seed=3)


@pytest.fixture(scope="session")
def small_setup(small_synth):
    return run_setup(PipelineConfig(seed=0), corpus=small_synth.corpus())


@pytest.fixture(scope="session")
def synth50k():
    return generate()


@pytest.fixture(scope="session")
def timed_setup50k(synth50k):
    start = time.perf_counter()
    res = run_setup(PipelineConfig(seed=0), corpus=synth50k.corpus())
    return res, time.perf_counter() - start


@pytest.fixture(scope="session")
def setup50k(timed_setup50k):
    return timed_setup50k[0]
