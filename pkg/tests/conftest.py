import numpy as np
import pytest

from dollyshot.simenv import EnvConfig, WorldState


@pytest.fixture
def short_cfg():
    return EnvConfig(episode_len=20)


def brute_moments(bits):
    """Independent double-loop moment sums."""
    m00 = m10 = m01 = 0
    h, w = bits.shape
    for y in range(h):
        for x in range(w):
            if bits[y][x]:
                m00 += 1
                m10 += x
                m01 += y
    return m00, m10, m01


def axis_world(distance, **kw):
    """Camera and subject on a common horizontal axis, subject ``distance`` ahead."""
    base = dict(robot_x=0.0, robot_y=0.0, robot_heading=0.0, pan=0.0, tilt=0.0,
                subject_x=distance, subject_y=0.0, subject_z=0.2, subject_radius=0.1,
                camera_height=0.2)
    base.update(kw)
    return WorldState(**base)


def random_masks(n, rng, max_side=64):
    for _ in range(n):
        h, w = rng.integers(1, max_side + 1, size=2)
        p = rng.uniform(0, 1)
        yield rng.random((h, w)) < p


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
