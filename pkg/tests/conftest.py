import numpy as np
import pytest

from splatslam.geometry import PinholeCamera, Se3Pose, so3_exp_quat


def random_pose(rng: np.random.Generator, angle: float = np.pi, trans: float = 1.0) -> Se3Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Se3Pose(so3_exp_quat(axis * rng.uniform(0, angle)), rng.uniform(-trans, trans, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cam100():
    return PinholeCamera(100.0, 100.0, 50.0, 50.0, 101, 101)


# One line per acceptance criterion, repeated in the terminal summary so it survives output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
