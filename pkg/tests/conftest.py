"""Shared fixtures: canonical field bundles reused across the test suite."""

import numpy as np
import pytest

from comovkit.constants import PhysicalConstants
from comovkit.fields import Box, make_packet, make_plane_wave

# nine-mode packet: dominant carrier at rest plus a narrow shell of side
# modes, weights sum to 3.5 with dominance margin 0.5; the 0.05 bandwidth
# keeps the congruence speed within 2e-3 of c so the chart metric blocks
# stay inside the 1e-4 verification budget
PACKET9_WAVEVECTORS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.05, 0.0, 0.0],
        [-0.05, 0.0, 0.0],
        [0.0, 0.05, 0.0],
        [0.0, -0.05, 0.0],
        [0.0, 0.0, 0.05],
        [0.0, 0.0, -0.05],
        [0.05, 0.05, 0.05],
        [-0.05, -0.05, -0.05],
    ]
)
PACKET9_WEIGHTS = np.array([2.0, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.15, 0.15])

NEAR_STANDING_WAVEVECTORS = np.array([[0.75, 0.0, 0.0], [-0.9, 0.0, 0.0]])
NEAR_STANDING_WEIGHTS = np.array([1.0, 0.98])


@pytest.fixture(scope="session")
def constants():
    return PhysicalConstants()


@pytest.fixture(scope="session")
def boost_wave(constants):
    """Plane wave moving at 0.6c along x1."""
    return make_plane_wave([0.75, 0.0, 0.0], constants)


@pytest.fixture(scope="session")
def packet9(constants):
    box = Box((-4.0,) * 4, (4.0,) * 4)
    return make_packet(PACKET9_WAVEVECTORS, PACKET9_WEIGHTS, box, constants)


@pytest.fixture(scope="session")
def boost_chart(boost_wave):
    from comovkit.chart import ComovingChart

    return ComovingChart(boost_wave, origin=np.zeros(4))


@pytest.fixture(scope="session")
def rest_chart(constants):
    from comovkit.chart import ComovingChart

    return ComovingChart(make_plane_wave([0.0, 0.0, 0.0], constants),
                         origin=np.zeros(4))


@pytest.fixture(scope="session")
def packet9_chart(packet9):
    from comovkit.chart import ComovingChart

    return ComovingChart(packet9, origin=np.zeros(4))


@pytest.fixture(scope="session")
def near_standing(constants):
    """Two nearly opposed modes; node-free but with a vanishing-V0 locus."""
    box = Box((-0.3, -2.5, -0.1, -0.1), (0.3, 0.5, 0.1, 0.1))
    return make_packet(
        NEAR_STANDING_WAVEVECTORS, NEAR_STANDING_WEIGHTS, box, constants
    )
