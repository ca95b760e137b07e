import re

import numpy as np
import pytest

from mlvedit.models import ToyTransformer, make_prompt


@pytest.fixture(scope="session")
def toy():
    return ToyTransformer.create()


@pytest.fixture(scope="session")
def prompts():
    return make_prompt("source", 8, 1), make_prompt("target", 8, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    reports = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py" in rep.nodeid and rep.when == "call":
                reports.append(rep)
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    def order(rep):
        m = re.search(r"test_ac(\d+)_", rep.nodeid)
        return int(m.group(1)) if m else 99
    for rep in sorted(reports, key=order):
        name = rep.nodeid.split("::")[-1]
        status = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  ({rep.duration:.2f}s)")
