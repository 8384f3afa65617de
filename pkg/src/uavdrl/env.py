"""Grid-world MDP for a single data-collecting UAV over clustered mobile users.

The UAV moves on a 3D lattice (horizontal pitch ``grid_step``, discrete
altitude levels). Users random-walk inside their cluster discs. Every step,
uncollected users within ``d_cons`` of the UAV upload simultaneously and
interfere with each other; a user is retired once it has delivered ``r_min``
bits. The mission reward trades average collected data against reaching the
landing cell.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .channel import ChannelParams, Position2, Position3, active_rates

MAX_USERS_PER_CLUSTER = 10
N_ACTIONS = 7


class ConfigError(ValueError):
    """Invalid scenario or agent configuration."""


class ConstraintViolation(AssertionError):
    """The simulator broke one of the mission constraints (a bug, never expected)."""


class Action(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    BACKWARD = 3
    UPWARD = 4
    DOWNWARD = 5
    HOVER = 6


# (dx, dy, dlevel) per action, in grid cells
ACTION_DELTAS = np.array(
    [
        [-1, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [0, -1, 0],
        [0, 0, 1],
        [0, 0, -1],
        [0, 0, 0],
    ],
    dtype=np.int64,
)


class Outcome(str, enum.Enum):
    RUNNING = "running"
    REACHED_TARGET = "reached_target"
    OUT_OF_STEPS = "out_of_steps"


class RPlusKind(str, enum.Enum):
    BINARY = "binary"
    EXPONENTIAL = "exponential"


class StepRewardKind(str, enum.Enum):
    IMMEDIATE = "immediate"
    EPISODE = "episode"


class Cluster(NamedTuple):
    center: Position2
    radius: float
    n_users: int


@dataclass(frozen=True)
class WorldConfig:
    area_x: float = 1000.0
    area_y: float = 1000.0
    grid_step: float = 50.0
    altitude_levels: tuple = (100.0, 150.0, 200.0, 250.0, 300.0)
    start: Position3 = Position3(0.0, 0.0, 200.0)
    target: Position3 = Position3(1000.0, 1000.0, 100.0)
    clusters: tuple = ()
    d_cons: float = 250.0
    r_min: float = 10e6
    t_cons: int = 200
    user_speed: float = 1.0
    beta: float = 1.0
    zeta: float = 1.0
    rplus_kind: RPlusKind = RPlusKind.BINARY
    step_reward_kind: StepRewardKind = StepRewardKind.IMMEDIATE
    channel: ChannelParams = field(default_factory=ChannelParams)
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "altitude_levels", tuple(sorted(float(h) for h in self.altitude_levels)))
        object.__setattr__(self, "start", Position3(*map(float, self.start)))
        object.__setattr__(self, "target", Position3(*map(float, self.target)))
        object.__setattr__(
            self,
            "clusters",
            tuple(Cluster(Position2(*map(float, c[0])), float(c[1]), int(c[2])) for c in self.clusters),
        )
        object.__setattr__(self, "rplus_kind", RPlusKind(self.rplus_kind))
        object.__setattr__(self, "step_reward_kind", StepRewardKind(self.step_reward_kind))
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.area_x > 0 and self.area_y > 0, "area_x and area_y must be > 0")
        need(self.grid_step > 0, "grid_step must be > 0")
        need(self.grid_step <= min(self.area_x, self.area_y), "grid_step larger than the area")
        need(len(self.altitude_levels) > 0, "altitude_levels must not be empty")
        need(all(h >= 0 for h in self.altitude_levels), "altitude levels must be >= 0")
        need(len(set(self.altitude_levels)) == len(self.altitude_levels), "altitude levels must be distinct")
        need(self.beta >= 0, "beta must be >= 0")
        need(self.zeta >= 0, "zeta must be >= 0")
        need(int(self.t_cons) == self.t_cons and self.t_cons > 0, "t_cons must be a positive integer")
        need(self.d_cons > 0, "d_cons must be > 0")
        need(self.r_min > 0, "r_min must be > 0")
        need(self.user_speed >= 0, "user_speed must be >= 0")
        need(self.dt > 0, "dt must be > 0")
        for name in ("start", "target"):
            pos = getattr(self, name)
            need(self._on_grid(pos), f"{name} {tuple(pos)} does not lie on the grid")
        for i, c in enumerate(self.clusters):
            need(0 <= c.n_users <= MAX_USERS_PER_CLUSTER, f"cluster {i}: n_users must be in [0, {MAX_USERS_PER_CLUSTER}]")
            need(c.radius >= 0, f"cluster {i}: radius must be >= 0")
            need(
                c.center.x - c.radius >= 0
                and c.center.y - c.radius >= 0
                and c.center.x + c.radius <= self.area_x
                and c.center.y + c.radius <= self.area_y,
                f"cluster {i}: disc does not fit inside the area",
            )

    def _on_grid(self, pos) -> bool:
        for coord, extent in ((pos.x, self.area_x), (pos.y, self.area_y)):
            k = coord / self.grid_step
            if abs(k - round(k)) > 1e-9 or coord < 0 or coord > extent + 1e-9:
                return False
        return pos.h in self.altitude_levels

    @property
    def grid_shape(self) -> tuple:
        return (
            int(math.floor(self.area_x / self.grid_step + 1e-9)) + 1,
            int(math.floor(self.area_y / self.grid_step + 1e-9)) + 1,
            len(self.altitude_levels),
        )

    @property
    def n_users(self) -> int:
        return sum(c.n_users for c in self.clusters)

    def to_cell(self, pos) -> tuple:
        return (
            int(round(pos[0] / self.grid_step)),
            int(round(pos[1] / self.grid_step)),
            self.altitude_levels.index(float(pos[2])),
        )

    def to_position(self, cell) -> Position3:
        return Position3(cell[0] * self.grid_step, cell[1] * self.grid_step, self.altitude_levels[cell[2]])

    @property
    def start_cell(self) -> tuple:
        return self.to_cell(self.start)

    @property
    def target_cell(self) -> tuple:
        return self.to_cell(self.target)

    def with_(self, **changes) -> "WorldConfig":
        return replace(self, **changes)


class UserState(NamedTuple):
    pos: Position2
    cluster_id: int
    user_id: int
    collected_bits: float
    collected_flag: bool


@dataclass
class EnvState:
    """Mutable-by-copy episode state. User data is held column-wise."""

    cell: tuple
    uav: Position3
    user_pos: np.ndarray  # (N, 2)
    cluster_id: np.ndarray  # (N,)
    user_id: np.ndarray  # (N,)
    collected_bits: np.ndarray  # (N,)
    collected: np.ndarray  # (N,) bool
    associated: np.ndarray  # (N,) bool, P(m, k)
    step: int = 0
    mission_reward: float = 0.0
    initial_mission_reward: float = 0.0
    episode_reward_so_far: float = 0.0
    done: bool = False
    outcome: Outcome = Outcome.RUNNING
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def copy(self) -> "EnvState":
        return replace(
            self,
            user_pos=self.user_pos.copy(),
            collected_bits=self.collected_bits.copy(),
            collected=self.collected.copy(),
            associated=self.associated.copy(),
        )

    @property
    def users(self) -> list:
        return [
            UserState(
                Position2(*self.user_pos[i]),
                int(self.cluster_id[i]),
                int(self.user_id[i]),
                float(self.collected_bits[i]),
                bool(self.collected[i]),
            )
            for i in range(len(self.collected))
        ]

    @property
    def total_mbit(self) -> float:
        return float(self.collected_bits.sum()) / 1e6


def move(cell, action, config: WorldConfig) -> tuple:
    """Next grid cell; moves past the area edge or altitude range are clamped."""
    nx, ny, nh = config.grid_shape
    dx, dy, dh = ACTION_DELTAS[int(action)]
    return (
        min(max(cell[0] + int(dx), 0), nx - 1),
        min(max(cell[1] + int(dy), 0), ny - 1),
        min(max(cell[2] + int(dh), 0), nh - 1),
    )


def observe(state: EnvState, config: WorldConfig) -> np.ndarray:
    """UAV position scaled into [0, 1]^3 (network input)."""
    return np.array(
        [
            state.uav.x / config.area_x,
            state.uav.y / config.area_y,
            state.uav.h / config.altitude_levels[-1] if config.altitude_levels[-1] > 0 else 0.0,
        ]
    )


def _sample_users(config: WorldConfig, rng: np.random.Generator):
    n = config.n_users
    pos = np.empty((n, 2))
    cluster_id = np.empty(n, dtype=np.int64)
    user_id = np.empty(n, dtype=np.int64)
    i = 0
    for m, c in enumerate(config.clusters):
        k = c.n_users
        r = c.radius * np.sqrt(rng.random(k))
        theta = rng.uniform(0.0, 2.0 * np.pi, k)
        pos[i : i + k, 0] = c.center.x + r * np.cos(theta)
        pos[i : i + k, 1] = c.center.y + r * np.sin(theta)
        cluster_id[i : i + k] = m
        user_id[i : i + k] = np.arange(k)
        i += k
    return pos, cluster_id, user_id


def reset(config: WorldConfig, seed) -> EnvState:
    """Fresh episode: UAV at ``config.start``, users uniform in their discs."""
    config.validate()
    rng = np.random.default_rng(seed)
    pos, cluster_id, user_id = _sample_users(config, rng)
    n = len(cluster_id)
    state = EnvState(
        cell=config.start_cell,
        uav=config.start,
        user_pos=pos,
        cluster_id=cluster_id,
        user_id=user_id,
        collected_bits=np.zeros(n),
        collected=np.zeros(n, dtype=bool),
        associated=np.zeros(n, dtype=bool),
    )
    r0 = mission_reward(state, config)
    state.mission_reward = r0
    state.initial_mission_reward = r0
    return state


@functools.lru_cache(maxsize=64)
def _cluster_arrays(config: WorldConfig):
    centers = np.array([c.center for c in config.clusters], dtype=np.float64).reshape(-1, 2)
    radii = np.array([c.radius for c in config.clusters], dtype=np.float64)
    return centers, radii


def _random_walk(state: EnvState, config: WorldConfig, rng: np.random.Generator):
    n = len(state.collected)
    # draw for every user so the rng stream does not depend on collection status
    length = rng.uniform(0.0, config.user_speed * config.dt, n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    if n == 0 or config.user_speed == 0:
        return
    moving = ~state.collected
    centers, radii = _cluster_arrays(config)
    centers = centers[state.cluster_id]
    radii = radii[state.cluster_id]
    new = state.user_pos + np.column_stack((length * np.cos(theta), length * np.sin(theta)))
    rel = new - centers
    r = np.hypot(rel[:, 0], rel[:, 1])
    outside = r > radii
    if outside.any():
        # mirror radially back into the disc
        r_in = np.clip(2.0 * radii[outside] - r[outside], 0.0, radii[outside])
        rel[outside] *= (r_in / r[outside])[:, None]
        new = centers + rel
    state.user_pos[moving] = new[moving]


def distances(state: EnvState) -> np.ndarray:
    d = state.user_pos - np.array([state.uav.x, state.uav.y])
    return np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + state.uav.h**2)


def active_set(state: EnvState, config: WorldConfig) -> np.ndarray:
    """Indices of uncollected users within ``d_cons`` of the UAV."""
    return np.flatnonzero(~state.collected & (distances(state) <= config.d_cons))


def at_target(state: EnvState, config: WorldConfig) -> bool:
    return tuple(state.cell) == config.target_cell


def rplus_binary(state: EnvState, config: WorldConfig) -> float:
    return 1.0 if at_target(state, config) else 0.0


def rplus_exponential(state: EnvState, config: WorldConfig) -> float:
    """1 on the landing cell, else ``exp(-horizontal distance / area diagonal)``."""
    if at_target(state, config):
        return 1.0
    dx = config.target.x - state.uav.x
    dy = config.target.y - state.uav.y
    delta = math.hypot(dx, dy) / math.hypot(config.area_x, config.area_y)
    return math.exp(-delta)


def mission_reward(state: EnvState, config: WorldConfig) -> float:
    """Weighted average collected data (Mbit) plus the trajectory bonus."""
    n = max(config.n_users, 1)
    data = float(np.sum(state.collected_bits[state.associated])) / 1e6
    if config.rplus_kind is RPlusKind.BINARY:
        rplus = rplus_binary(state, config)
    else:
        rplus = rplus_exponential(state, config)
    return config.beta / n * data + config.zeta * rplus


def shape_step_reward(r_now: float, r_prev: float, kind, running: float = 0.0) -> float:
    """Per-step training signal.

    ``immediate`` is the change in mission reward; ``episode`` is the running
    sum of those changes, with ``running`` holding the sum up to the previous
    step.
    """
    diff = r_now - r_prev
    if StepRewardKind(kind) is StepRewardKind.IMMEDIATE:
        return diff
    return running + diff


def is_terminal(state: EnvState, config: WorldConfig) -> tuple:
    if at_target(state, config):
        return True, Outcome.REACHED_TARGET
    if state.step >= config.t_cons:
        return True, Outcome.OUT_OF_STEPS
    return False, Outcome.RUNNING


def step(state: EnvState, action, config: WorldConfig, rng: np.random.Generator):
    """Advance one step. Returns ``(next_state, step_reward, done)``; ``state`` is not modified."""
    if state.done:
        raise RuntimeError("step() called on a finished episode; call reset() first")
    nxt = state.copy()
    nxt.cell = move(state.cell, action, config)
    nxt.uav = config.to_position(nxt.cell)

    _random_walk(nxt, config, rng)

    d = distances(nxt)
    active = np.flatnonzero(~nxt.collected & (d <= config.d_cons))
    if active.size:
        gains = config.channel.beta0 / d[active] ** 2
        rates = active_rates(gains, config.channel)
        nxt.collected_bits[active] += rates * config.dt
        nxt.associated[active] = True
        nxt.collected[active] |= nxt.collected_bits[active] >= config.r_min
    nxt.active = active
    nxt.step = state.step + 1

    _audit(state, nxt, d, config)

    r_now = mission_reward(nxt, config)
    reward = shape_step_reward(r_now, state.mission_reward, config.step_reward_kind, state.episode_reward_so_far)
    nxt.mission_reward = r_now
    nxt.episode_reward_so_far = state.episode_reward_so_far + (r_now - state.mission_reward)
    nxt.done, nxt.outcome = is_terminal(nxt, config)
    return nxt, reward, nxt.done


def _audit(before: EnvState, after: EnvState, d: np.ndarray, config: WorldConfig):
    if after.step > config.t_cons:
        raise ConstraintViolation(f"episode exceeded t_cons={config.t_cons}")
    gained = after.collected_bits > before.collected_bits
    if np.any(gained & before.collected):
        raise ConstraintViolation("a collected user was served again")
    if np.any(gained & (d > config.d_cons)):
        raise ConstraintViolation("data accrued from a user beyond d_cons")
    if np.any(after.collected_bits < before.collected_bits):
        raise ConstraintViolation("collected data decreased")
    nx, ny, nh = config.grid_shape
    if not (0 <= after.cell[0] < nx and 0 <= after.cell[1] < ny and 0 <= after.cell[2] < nh):
        raise ConstraintViolation(f"UAV left the grid: {after.cell}")
