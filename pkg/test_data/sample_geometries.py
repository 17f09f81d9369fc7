"""Hand-placed deployments with known link geometry."""

import numpy as np

from cellfree.config import BlockageEnvironment
from cellfree.geometry import NetworkGeometry, place_uniform

NO_BLOCKAGE = BlockageEnvironment(alpha=0.5, mu=0.0, gamma=20.0)


def create_two_ap_geometry(n_antennas: int = 2) -> NetworkGeometry:
    """Two APs and two UEs on a 1 km square, broadside facing +x."""
    return NetworkGeometry(
        ap_xy=np.array([[0.2, 0.5], [0.8, 0.5]]),
        ap_height=np.full(2, 10.0),
        ap_orientation=np.zeros(2),
        ap_gain=np.ones(2),
        ue_xy=np.array([[0.3, 0.5], [0.5, 0.6]]),
        ue_height=np.full(2, 1.5),
        ue_gain=np.ones(2),
        n_antennas=n_antennas,
    )


def create_clear_sky_geometry(n_aps: int = 8, n_users: int = 3, seed: int = 3) -> NetworkGeometry:
    """Uniform drop with no blockages, so every link is LoS with probability 1."""
    return place_uniform(n_aps, n_users, 0.2, seed=seed, n_antennas=2, env=NO_BLOCKAGE)


def create_small_geometry(
    n_aps: int = 6, n_users: int = 3, n_antennas: int = 2, seed: int = 11
) -> NetworkGeometry:
    """Dense small deployment (about 1000 APs per km²) with the default blockage."""
    side = float(np.sqrt(n_aps / 1000.0))
    return place_uniform(n_aps, n_users, side, seed=seed, n_antennas=n_antennas)
