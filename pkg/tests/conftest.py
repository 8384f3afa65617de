import numpy as np
import pytest

from uavdrl import env as E
from uavdrl.channel import ChannelParams


@pytest.fixture
def table2_channel():
    return ChannelParams.from_db(beta0_db=-50.0, bandwidth_hz=1e6, noise_dbm=-110.0, tx_power_w=5.0)


@pytest.fixture
def small_world():
    """5x5 horizontal grid, two altitude levels, one cluster of 4 users."""
    return E.WorldConfig(
        area_x=200.0,
        area_y=200.0,
        grid_step=50.0,
        altitude_levels=(100.0, 150.0),
        start=(0.0, 0.0, 150.0),
        target=(200.0, 200.0, 100.0),
        clusters=(((100.0, 100.0), 50.0, 4),),
        d_cons=200.0,
        r_min=5e6,
        t_cons=30,
        user_speed=1.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
