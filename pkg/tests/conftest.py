from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_addoption(parser):
    parser.addoption("--skip-acceptance", action="store_true", help="skip the long acceptance suite")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-acceptance"):
        skip = pytest.mark.skip(reason="--skip-acceptance")
        for item in items:
            if "acceptance" in item.keywords:
                item.add_marker(skip)


# Acceptance tests record one verdict per criterion here; the lines are
# printed after the run so they show up without -s.
ACCEPTANCE_VERDICTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_VERDICTS):
        ok, detail = ACCEPTANCE_VERDICTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
