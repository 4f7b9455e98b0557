import numpy as np
import pytest

from motionstyle.skeleton import MotionClip, Skeleton

# Registry filled by test_acceptance.py; printed at the end of the session so
# the per-criterion pass/fail lines survive pytest's output capture.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


def make_chain(n, offset=(1.0, 0.0, 0.0), parts=None):
    """Simple n-joint kinematic chain."""
    names = tuple(f"j{i}" for i in range(n))
    parents = tuple([-1] + list(range(n - 1)))
    offsets = np.tile(np.asarray(offset, dtype=np.float64), (n, 1))
    offsets[0] = 0.0
    return Skeleton(names, parents, offsets, part_map=parts)


def random_tree(rng, n):
    """Random single-rooted tree with parent index < joint index."""
    parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    offsets = rng.normal(size=(n, 3))
    return Skeleton(tuple(f"j{i}" for i in range(n)), tuple(parents), offsets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def clip_from_rot6d(rot6d, fps=30.0, translation=None):
    rot6d = np.asarray(rot6d, dtype=np.float64)
    t = rot6d.shape[0]
    if translation is None:
        translation = np.zeros((t, 3))
    return MotionClip(rot6d, translation, fps=fps)
