import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"
UCR_DIR = Path(os.environ.get("RAN_UCR_DIR", DATA_DIR / "ucr"))
TABLE1_CSV = DATA_DIR / "table1_accuracies.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ucr_dir():
    return UCR_DIR


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
