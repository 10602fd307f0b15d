import numpy as np
import pytest

from posedec.targets import SkeletonConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def coco():
    return SkeletonConfig()


@pytest.fixture
def toy_cfg():
    return SkeletonConfig(num_keypoints=2, sticks=[(0, 1)], oks_k=[0.1, 0.1])


# One line per acceptance criterion, echoed again in the terminal summary so
# the verdicts are visible even when output capture is on.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
