import pytest

from modules.core import default_geometry, seeded_rng
from modules.harness import Rig
from modules.sim import SkinModel


@pytest.fixture(scope="session")
def geometry():
    return default_geometry()


@pytest.fixture(scope="session")
def skin():
    return SkinModel()


@pytest.fixture(scope="session")
def rig():
    return Rig()


@pytest.fixture
def rng():
    return seeded_rng(7)
