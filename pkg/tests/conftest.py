import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from cellfree.config import SimulationConfig  # noqa: E402
from cellfree.estimation import PilotConfig  # noqa: E402
from cellfree.geometry import LinkSet, link_metrics  # noqa: E402
from test_data.sample_geometries import (  # noqa: E402
    create_clear_sky_geometry,
    create_small_geometry,
    create_two_ap_geometry,
)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_ap_links() -> LinkSet:
    return link_metrics(create_two_ap_geometry())


@pytest.fixture(scope="session")
def small_links() -> LinkSet:
    return link_metrics(create_small_geometry())


@pytest.fixture(scope="session")
def clear_sky_links() -> LinkSet:
    return link_metrics(create_clear_sky_geometry())


@pytest.fixture(scope="session")
def pilot() -> PilotConfig:
    return PilotConfig.from_db(20.0)


@pytest.fixture
def tiny_config() -> SimulationConfig:
    """A configuration small enough for every experiment to run in seconds."""
    return SimulationConfig(
        n_aps=12,
        n_users=3,
        n_antennas=2,
        area_side=0.15,
        trials=40,
        drops=2,
        seed=5,
        snr_db=[0.0, 30.0],
    )
