import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nvshield.device import ChipLayout, VariationSpec, sample_chip

settings.register_profile("nvshield", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nvshield")

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_criteria: dict[int, list[bool]] = {}


@pytest.fixture
def spec():
    return VariationSpec()


@pytest.fixture
def chip(spec):
    return sample_chip(spec, ChipLayout(), 7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.setdefault(int(m.group(1)), []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_criteria):
        ok = all(_criteria[k])
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} "
                                    f"({sum(_criteria[k])}/{len(_criteria[k])} checks)")
