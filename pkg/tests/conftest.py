import sys

import numpy as np
import pytest
import torch

from midfusion.config import toy_tracker_config
from midfusion.foundation import Foundation


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def toy_cfg():
    return toy_tracker_config()


@pytest.fixture
def foundation64(toy_cfg):
    return Foundation(toy_cfg.foundation, seed=0).double()


@pytest.fixture
def foundation32(toy_cfg):
    return Foundation(toy_cfg.foundation, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "VERDICTS", []), key=lambda s: s[7:10])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
