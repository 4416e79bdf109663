from pathlib import Path

import numpy as np
import pytest

from rsgd.seeding import make_rng

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "synthetic_N64_d14_seed0.libsvm"


@pytest.fixture
def rng():
    return make_rng(1234)


def pytest_configure(config):
    np.seterr(over="ignore")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
