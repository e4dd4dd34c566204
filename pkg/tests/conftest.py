import numpy as np
import pytest

from irsloc.scene import Placement, Point2D, Scenario, SystemConfig


@pytest.fixture(scope="session")
def cfg():
    """Default full-band configuration (400 MHz, N=2048, L=512)."""
    return SystemConfig()


@pytest.fixture(scope="session")
def placement():
    return Placement()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_scenario(*targets):
    """Default anchors plus explicit target coordinates."""
    return Scenario(
        bs=(Point2D(-100.0, 0.0), Point2D(100.0, 0.0)),
        irs=Point2D(0.0, 40.0),
        targets=tuple(Point2D(x, y) for x, y in targets),
    )
