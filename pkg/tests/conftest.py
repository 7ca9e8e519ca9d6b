import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vsds.acceptance import AcceptanceSuite
from vsds.ds_core import make_preset
from vsds.energy_tank import PassifierParams
from vsds.vsds_core import CONSTANT_PAPER, build_vsds

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def suite():
    """One acceptance suite per session so scenario runs are shared."""
    return AcceptanceSuite()


@pytest.fixture(scope="session")
def line_field():
    return make_preset("line", (-0.5, 0.0))


@pytest.fixture(scope="session")
def line_model(line_field):
    return build_vsds(line_field, CONSTANT_PAPER, [250.0, 250.0], np.array([-0.5, 0.0]), n=20)


@pytest.fixture(scope="session")
def curve_model():
    field = make_preset("curve")
    return build_vsds(field, CONSTANT_PAPER, "critical", np.array([-0.45, 0.10]), n=20)


@pytest.fixture
def params():
    return PassifierParams()
