"""Air-to-ground link model: geometry, free-space gain, SINR rate, data accrual."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._accel import kernel


class Position3(NamedTuple):
    x: float
    y: float
    h: float


class Position2(NamedTuple):
    x: float
    y: float


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants, all in linear units.

    ``tx_power_w`` is the per-user uplink transmit power; every active user
    transmits at the same level.
    """

    beta0: float = 1e-5
    bandwidth_hz: float = 1e6
    noise_power_w: float = 1e-14
    tx_power_w: float = 5.0

    def __post_init__(self):
        for name in ("beta0", "bandwidth_hz", "noise_power_w", "tx_power_w"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"ChannelParams.{name} must be finite and > 0, got {value!r}")

    @classmethod
    def from_db(cls, beta0_db=-50.0, bandwidth_hz=1e6, noise_dbm=-110.0, tx_power_w=5.0):
        return cls(
            beta0=db_to_linear(beta0_db),
            bandwidth_hz=bandwidth_hz,
            noise_power_w=dbm_to_watts(noise_dbm),
            tx_power_w=tx_power_w,
        )


def distance(uav: Sequence[float], user: Sequence[float]) -> float:
    """Slant range between the UAV ``(x, y, h)`` and a ground user ``(x, y)``."""
    dx = uav[0] - user[0]
    dy = uav[1] - user[1]
    return math.sqrt(dx * dx + dy * dy + uav[2] * uav[2])


def channel_gain(d: float, params: ChannelParams) -> float:
    """Free-space power gain ``beta0 / d**2`` (path-loss exponent fixed at 2)."""
    if not d > 0:
        raise ValueError(f"channel gain is singular at distance {d!r}")
    return params.beta0 / (d * d)


def uplink_rate(target_gain: float, interferer_gains: Sequence[float], params: ChannelParams) -> float:
    """Achievable rate in bit/s of one user while ``interferer_gains`` transmit concurrently."""
    p = params.tx_power_w
    interference = p * math.fsum(interferer_gains)
    sinr = p * target_gain / (interference + params.noise_power_w)
    return params.bandwidth_hz * math.log1p(sinr) / math.log(2.0)


def accumulate(prev_bits: float, rate: float, dt: float) -> float:
    """Left-Riemann update of collected data over one step of length ``dt``."""
    return prev_bits + rate * dt


@kernel
def sinr_rates(gains, tx_power, noise_power, bandwidth):
    """Rate of every user in ``gains`` with all the others as interferers."""
    n = gains.shape[0]
    out = np.empty(n)
    for i in range(n):
        interference = 0.0
        for j in range(n):
            if j != i:
                interference += gains[j]
        sinr = tx_power * gains[i] / (tx_power * interference + noise_power)
        out[i] = bandwidth * np.log1p(sinr) / np.log(2.0)
    return out


def active_rates(gains: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Vectorised :func:`uplink_rate` over a set of simultaneously active users."""
    gains = np.ascontiguousarray(gains, dtype=np.float64)
    if gains.size == 0:
        return np.zeros(0)
    return sinr_rates(gains, params.tx_power_w, params.noise_power_w, params.bandwidth_hz)
