import math

import pytest
from hypothesis import settings

from isaccoop.geom import Point2, Segment
from isaccoop.world import Anchor, Band, NoiseModel, Scatterer, Scene, UEState

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")


@pytest.fixture
def wall_scene():
    """AP at the origin, UE at (4, 0), one mirror wall along y = 3."""
    return Scene([Anchor(0, (0.0, 0.0))],
                 [Scatterer(0, Segment(Point2(-10, 3), Point2(10, 3)), "specular")])


@pytest.fixture
def ap():
    return Anchor(0, (0.0, 0.0))


@pytest.fixture
def sub6_ap():
    return Anchor(1, (0.0, 0.0), Band.SUB6)


@pytest.fixture
def ue():
    return UEState((4.0, 0.0))


@pytest.fixture
def quiet():
    return NoiseModel.noiseless()


# Running-example path parameters: VA (0, 6), reflection point (2, 3).
WALL_AOA = math.atan2(3, 2)
WALL_AOD = math.atan2(3, -2)
WALL_LEN = 2 * math.sqrt(13)


# Acceptance criteria report one line each; the lines are printed together at
# the end of the run so they survive output capture.
_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, name: str, ok: bool, detail: str) -> None:
        lines.append(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
