import numpy as np
import pytest

from meshreg import synthetic
from meshreg.calibration import BoardSpec


@pytest.fixture(scope="session")
def rig():
    return synthetic.default_rig()


@pytest.fixture(scope="session")
def flat_rig():
    return synthetic.default_rig(distortion=False)


@pytest.fixture(scope="session")
def board():
    return BoardSpec(6, 9, 0.03)


@pytest.fixture(scope="session")
def poses(rig, board):
    return synthetic.random_board_poses(rig, board, 23, seed=0)


@pytest.fixture(scope="session")
def exact_views(rig, board, poses):
    return synthetic.make_checkerboard_views(rig, board, poses, 0.0, seed=1)


def by_camera(views):
    out = {}
    for v in views:
        out.setdefault(v.camera_id, []).append(v)
    return out


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


# acceptance lines collected by test_acceptance.py, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
