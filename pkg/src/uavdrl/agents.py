"""Learning agents: tabular Q-learning, DQL and dueling DQL, plus a value-iteration oracle."""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import env as E
from . import kernels, nn
from .env import N_ACTIONS, ConfigError, Outcome, WorldConfig

ALGORITHMS = ("tabular", "dql", "dueling_dql")


class InsufficientData(ValueError):
    """Replay buffer holds fewer transitions than requested."""


class NotEnumerable(ValueError):
    """Instance is too large or too stochastic for exact value iteration."""


@dataclass(frozen=True)
class AgentConfig:
    epsilon: float = 0.9  # probability of acting greedily
    gamma: float = 0.9
    learning_rate: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 10_000
    target_sync_period: int = 500
    episodes: int = 1000
    hidden: tuple = (64, 64)
    stream_hidden: tuple = (32,)
    dueling_mode: str = "mean"
    tabular_learning_rate: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "stream_hidden", tuple(int(h) for h in self.stream_hidden))
        self.validate()

    def validate(self):
        checks = [
            (0.0 <= self.epsilon <= 1.0, "epsilon must be in [0, 1]"),
            (0.0 <= self.gamma <= 1.0, "gamma must be in [0, 1]"),
            (self.learning_rate >= 0, "learning_rate must be >= 0"),
            (0.0 <= self.tabular_learning_rate <= 1.0, "tabular_learning_rate must be in [0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.buffer_capacity >= self.batch_size, "buffer_capacity must be >= batch_size"),
            (self.target_sync_period >= 1, "target_sync_period must be >= 1"),
            (self.episodes >= 0, "episodes must be >= 0"),
            (self.dueling_mode in ("mean", "max"), "dueling_mode must be 'mean' or 'max'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass
class EpisodeMetrics:
    episode: int
    reward: float  # mission reward at episode end
    total_mbit: float
    users_collected: int
    steps: int
    outcome: str
    wall_ms: float = 0.0


def select_action(q, epsilon, rng) -> int:
    """Greedy (lowest index on ties) with probability ``epsilon``, otherwise uniform."""
    if rng.random() < epsilon:
        return int(np.argmax(q))
    return int(rng.integers(len(q)))


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions, stored column-wise."""

    def __init__(self, capacity, state_dim=3):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s_next, terminal):
        i = self.cursor
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.terminal[i] = float(terminal)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_transition(self, t: Transition):
        self.push(t.s, t.a, t.r, t.s_next, t.terminal)

    def sample_indices(self, k, rng) -> np.ndarray:
        if self.size < k:
            raise InsufficientData(f"buffer holds {self.size} transitions, {k} requested")
        return rng.integers(0, self.size, size=k)

    def sample(self, k, rng):
        """``k`` transitions drawn uniformly with replacement, as arrays ``(s, a, r, s_next, terminal)``."""
        idx = self.sample_indices(k, rng)
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx]

    def transitions(self) -> list:
        """Stored transitions, oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + j) % self.capacity for j in range(self.size)]
        return [Transition(self.s[i].copy(), int(self.a[i]), float(self.r[i]), self.s_next[i].copy(), bool(self.terminal[i])) for i in order]


def dql_target(r, q_next_target, terminal, gamma) -> float:
    """Bootstrap target from the target network's next-state Q-values."""
    if terminal:
        return float(r)
    return float(r + gamma * np.max(q_next_target))


def dueling_target(r, target_net: nn.QNetwork, s_next, terminal, gamma) -> float:
    if terminal:
        return float(r)
    return dql_target(r, target_net.forward(s_next), False, gamma)


class TabularQ:
    """Q-table indexed by grid cell ``(ix, iy, ilevel)`` and action."""

    def __init__(self, grid_shape, learning_rate=0.5, gamma=0.9):
        self.table = np.zeros((*grid_shape, N_ACTIONS))
        self.learning_rate = float(learning_rate)
        self.gamma = float(gamma)

    def q(self, cell) -> np.ndarray:
        return self.table[cell]

    def update(self, s, a, r, s_next, terminal):
        bootstrap = 0.0 if terminal else self.gamma * self.table[s_next].max()
        self.table[s][a] += self.learning_rate * (r + bootstrap - self.table[s][a])

    def greedy(self, cell) -> int:
        return int(np.argmax(self.table[cell]))

    def rows(self):
        """``(flat cell index, q0..q6)`` rows for serialisation."""
        flat = self.table.reshape(-1, N_ACTIONS)
        return [(i, *flat[i]) for i in range(flat.shape[0])]


def tabular_update(qtable: TabularQ, s, a, r, s_next, terminal):
    qtable.update(s, a, r, s_next, terminal)


class DQLAgent:
    """Online network, target network, optimiser and replay memory."""

    def __init__(self, config: AgentConfig, dueling: bool, seed=0):
        self.config = config
        self.dueling = dueling
        if dueling:
            self.online = nn.DuelingNet(config.hidden, config.stream_hidden, config.dueling_mode, seed=seed)
        else:
            self.online = nn.Mlp(config.hidden, seed=seed)
        self.target = self.online.copy()
        self.adam = nn.Adam.for_net(self.online, config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.train_steps = 0
        self.losses = []

    def q(self, obs) -> np.ndarray:
        return self.online.forward(obs)

    def learn(self, rng):
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            return None
        s, a, r, s2, term = self.buffer.sample(cfg.batch_size, rng)
        q_next = self.target.forward(s2)
        y = kernels.td_targets(q_next, r, term, cfg.gamma)
        loss = nn.train_step(self.online, self.adam, s, a, y)
        self.train_steps += 1
        if self.train_steps % cfg.target_sync_period == 0:
            nn.sync_target(self.online, self.target)
        return loss


class TabularAgent:
    def __init__(self, config: AgentConfig, world: WorldConfig):
        self.config = config
        self.qtable = TabularQ(world.grid_shape, config.tabular_learning_rate, config.gamma)

    def q(self, cell) -> np.ndarray:
        return self.qtable.q(cell)


def _episode_seed(seed, episode):
    return np.random.SeedSequence([int(seed), int(episode)])


def train(world: WorldConfig, agent_config: AgentConfig, algorithm="dql", seed=0, episode_callback=None):
    """Run ``agent_config.episodes`` training episodes.

    Returns ``(agent, metrics)``. The final episode's trajectory rows are kept
    on ``agent.last_trajectory``.
    """
    if algorithm == "dueling":
        algorithm = "dueling_dql"
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    world.validate()
    agent_config.validate()
    net_seq, act_seq, buf_seq, walk_seq = np.random.SeedSequence(int(seed)).spawn(4)
    act_rng = np.random.default_rng(act_seq)
    buf_rng = np.random.default_rng(buf_seq)
    walk_rng = np.random.default_rng(walk_seq)
    tabular = algorithm == "tabular"
    if tabular:
        agent = TabularAgent(agent_config, world)
    else:
        agent = DQLAgent(agent_config, algorithm == "dueling_dql", seed=int(net_seq.generate_state(1)[0]))
    metrics = []
    agent.last_trajectory = []
    eps = agent_config.epsilon
    for ep in range(agent_config.episodes):
        t0 = time.perf_counter()
        state = E.reset(world, _episode_seed(seed, ep))
        last = ep == agent_config.episodes - 1
        traj = [trajectory_row(state, None, 0.0)] if last else None
        obs = state.cell if tabular else E.observe(state, world)
        while not state.done:
            a = select_action(agent.q(obs), eps, act_rng)
            nxt, r, done = E.step(state, a, world, walk_rng)
            terminal = nxt.outcome is Outcome.REACHED_TARGET
            if tabular:
                obs_next = nxt.cell
                agent.qtable.update(obs, a, r, obs_next, terminal)
            else:
                obs_next = E.observe(nxt, world)
                agent.buffer.push(obs, a, r, obs_next, terminal)
                try:
                    agent.learn(buf_rng)
                except nn.DivergenceError as exc:
                    raise nn.DivergenceError(f"episode {ep}: {exc}") from exc
            if traj is not None:
                traj.append(trajectory_row(nxt, a, r))
            state, obs = nxt, obs_next
        metrics.append(
            EpisodeMetrics(
                episode=ep,
                reward=state.mission_reward,
                total_mbit=state.total_mbit,
                users_collected=int(state.collected.sum()),
                steps=state.step,
                outcome=state.outcome.value,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if traj is not None:
            agent.last_trajectory = traj
        if episode_callback is not None:
            episode_callback(metrics[-1])
    return agent, metrics


def trajectory_row(state: E.EnvState, action, reward) -> dict:
    return {
        "step": state.step,
        "x": state.uav.x,
        "y": state.uav.y,
        "h": state.uav.h,
        "action": -1 if action is None else int(action),
        "step_reward": float(reward),
        "active_user_count": int(len(state.active)),
        "cumulative_mbit": state.total_mbit,
    }


def greedy_policy(agent, world: WorldConfig) -> np.ndarray:
    """Greedy action for every grid cell, shape ``grid_shape``."""
    shape = world.grid_shape
    if isinstance(agent, TabularAgent):
        return np.argmax(agent.qtable.table, axis=-1)
    cells = np.array(list(np.ndindex(*shape)))
    obs = np.column_stack(
        (
            cells[:, 0] * world.grid_step / world.area_x,
            cells[:, 1] * world.grid_step / world.area_y,
            np.asarray(world.altitude_levels)[cells[:, 2]] / world.altitude_levels[-1],
        )
    )
    return np.argmax(agent.online.forward(obs), axis=1).reshape(shape)


# ---------------------------------------------------------------- oracle


def _position_reward(world: WorldConfig, cell) -> float:
    """Mission reward at ``cell`` for an instance whose reward ignores user data."""
    state = E.EnvState(
        cell=tuple(cell),
        uav=world.to_position(cell),
        user_pos=np.zeros((0, 2)),
        cluster_id=np.zeros(0, dtype=np.int64),
        user_id=np.zeros(0, dtype=np.int64),
        collected_bits=np.zeros(0),
        collected=np.zeros(0, dtype=bool),
        associated=np.zeros(0, dtype=bool),
    )
    return E.mission_reward(state, world)


def transition_model(world: WorldConfig):
    """Deterministic ``(next_index, reward, terminal)`` arrays of shape ``(n_cells, 7)``."""
    if world.beta > 0 and world.n_users > 0:
        raise NotEnumerable("reward depends on collected data; set beta=0 or remove users")
    shape = world.grid_shape
    n_cells = int(np.prod(shape))
    if n_cells > 100_000:
        raise NotEnumerable(f"{n_cells} cells exceeds the enumeration limit")
    target = world.target_cell
    base = _position_reward(world, world.start_cell)
    rew_cell = np.array([_position_reward(world, c) for c in np.ndindex(*shape)])
    nxt = np.zeros((n_cells, N_ACTIONS), dtype=np.int64)
    reward = np.zeros((n_cells, N_ACTIONS))
    term = np.zeros((n_cells, N_ACTIONS), dtype=bool)
    for i, cell in enumerate(np.ndindex(*shape)):
        for a in range(N_ACTIONS):
            c2 = E.move(cell, a, world)
            j = int(np.ravel_multi_index(c2, shape))
            nxt[i, a] = j
            prev = rew_cell[i] if world.step_reward_kind is E.StepRewardKind.IMMEDIATE else base
            reward[i, a] = rew_cell[j] - prev
            term[i, a] = c2 == target
    return nxt, reward, term


def value_iteration_oracle(world: WorldConfig, gamma=0.9, tolerance=1e-12, max_iter=100_000) -> np.ndarray:
    """Optimal Q-table ``grid_shape + (7,)`` by iterating the Bellman optimality operator.

    Only valid for instances where the shaped reward is a function of the UAV
    cell alone; the landing cell is absorbing and its row stays zero.
    """
    nxt, reward, term = transition_model(world)
    cont = gamma * (~term)
    q = np.zeros_like(reward)
    for _ in range(max_iter):
        v = q.max(axis=1)
        new = reward + cont * v[nxt]
        new[np.ravel_multi_index(world.target_cell, world.grid_shape)] = 0.0
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tolerance:
            return q.reshape(*world.grid_shape, N_ACTIONS)
    raise NotEnumerable(f"value iteration did not converge within {max_iter} sweeps")


def reachable_cells(world: WorldConfig) -> list:
    """Cells reachable from the start without passing through the landing cell."""
    start, target = world.start_cell, world.target_cell
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == target:
            continue
        for a in range(N_ACTIONS):
            c2 = E.move(cell, a, world)
            if c2 not in seen:
                seen.add(c2)
                queue.append(c2)
    seen.discard(target)
    return sorted(seen)


def policy_agreement(policy: np.ndarray, q_opt: np.ndarray, cells, rtol=1e-9) -> float:
    """Fraction of ``cells`` where ``policy`` picks an action optimal under ``q_opt``.

    Exact ties in ``q_opt`` make several actions optimal; any of them counts.
    """
    if not cells:
        return 1.0
    hits = 0
    for c in cells:
        q = q_opt[c]
        best = q.max()
        if q[policy[c]] >= best - rtol * max(1.0, abs(best)):
            hits += 1
    return hits / len(cells)
