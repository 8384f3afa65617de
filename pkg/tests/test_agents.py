import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavdrl import agents as A
from uavdrl import env as E
from uavdrl import nn


def corridor(**kw):
    base = dict(area_x=250, area_y=50, grid_step=50, altitude_levels=(100.0,), start=(0, 0, 100),
                target=(250, 0, 100), clusters=(), beta=0.0, zeta=1.0, t_cons=50)
    base.update(kw)
    return E.WorldConfig(**base)


def oracle_world(**kw):
    base = dict(area_x=450, area_y=450, grid_step=50, altitude_levels=(100.0,), start=(0, 0, 100),
                target=(450, 450, 100), clusters=(), beta=0.0, zeta=1.0, t_cons=200, user_speed=0.0)
    base.update(kw)
    return E.WorldConfig(**base)


def frequency_ok(counts, probs, n):
    sigma = np.sqrt(n * probs * (1 - probs))
    return np.all(np.abs(counts - n * probs) <= 3 * sigma)


class TestSelectAction:
    def test_pure_greedy(self, rng):
        q = np.array([0, 5, 1, 0, 0, 0, 0], float)
        assert {A.select_action(q, 1.0, rng) for _ in range(1000)} == {1}

    def test_ties_lowest_index(self, rng):
        assert A.select_action(np.array([1, 3, 3, 0, 3, 0, 0.0]), 1.0, rng) == 1

    def test_pure_random(self):
        rng = np.random.default_rng(13)
        n = 100_000
        draws = [A.select_action(np.arange(7.0), 0.0, rng) for _ in range(n)]
        assert frequency_ok(np.bincount(draws, minlength=7), np.full(7, 1 / 7), n)

    def test_mixture(self):
        rng = np.random.default_rng(12)
        n = 100_000
        draws = [A.select_action(np.array([0, 0, 0, 9, 0, 0, 0.0]), 0.9, rng) for _ in range(n)]
        p = np.full(7, 0.1 / 7)
        p[3] += 0.9
        assert p[3] == pytest.approx(0.9143, abs=1e-4)
        assert frequency_ok(np.bincount(draws, minlength=7), p, n)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=7, max_size=7), st.floats(-1e3, 1e3))
    def test_shift_invariant(self, q, c):
        q = np.array(q)
        g1 = A.select_action(q, 1.0, np.random.default_rng(0))
        g2 = A.select_action(q + c, 1.0, np.random.default_rng(0))
        if np.sort(q)[-1] - np.sort(q)[-2] > 1e-6 * (1 + abs(c)):
            assert g1 == g2


class TestTabularUpdate:
    def table(self, lr, gamma):
        return A.TabularQ((3, 1, 1), learning_rate=lr, gamma=gamma)

    def test_alpha_one_gamma_zero(self):
        t = self.table(1.0, 0.0)
        A.tabular_update(t, (0, 0, 0), 2, 5.0, (1, 0, 0), False)
        assert t.q((0, 0, 0))[2] == 5.0

    def test_alpha_zero(self):
        t = self.table(0.0, 0.9)
        t.table[:] = 0.3
        A.tabular_update(t, (0, 0, 0), 2, 5.0, (1, 0, 0), False)
        assert np.all(t.table == 0.3)

    def test_worked(self):
        t = self.table(0.5, 0.9)
        t.table[0, 0, 0, 4] = 1.0
        t.table[1, 0, 0, 6] = 2.0
        A.tabular_update(t, (0, 0, 0), 4, 1.0, (1, 0, 0), False)
        assert t.q((0, 0, 0))[4] == pytest.approx(1.9, rel=1e-15)

    def test_terminal_ignores_bootstrap(self):
        t = self.table(1.0, 0.9)
        t.table[1] = 100.0
        A.tabular_update(t, (0, 0, 0), 0, 1.0, (1, 0, 0), True)
        assert t.q((0, 0, 0))[0] == 1.0

    def test_fixed_point(self):
        t = self.table(0.7, 0.9)
        t.table[1, 0, 0] = [0.1, 0.4, 0, 0, 0, 0, 0]
        t.table[0, 0, 0, 1] = 2.0 + 0.9 * 0.4
        A.tabular_update(t, (0, 0, 0), 1, 2.0, (1, 0, 0), False)
        assert t.table[0, 0, 0, 1] == pytest.approx(2.36, rel=1e-15)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = A.ReplayBuffer(3)
        for i in range(1, 5):
            buf.push([i, 0, 0], 0, float(i), [0, 0, 0], False)
        assert len(buf) == 3
        assert [t.r for t in buf.transitions()] == [2.0, 3.0, 4.0]

    def test_single_item(self, rng):
        buf = A.ReplayBuffer(5)
        t = A.Transition(np.array([0.1, 0.2, 0.3]), 4, 1.5, np.array([0.2, 0.2, 0.3]), True)
        buf.push_transition(t)
        s, a, r, s2, term = buf.sample(1, rng)
        np.testing.assert_array_equal(s[0], t.s)
        assert (a[0], r[0], term[0]) == (4, 1.5, 1.0)

    def test_cursor_wraps(self):
        buf = A.ReplayBuffer(4)
        for i in range(4):
            buf.push([0, 0, 0], 0, i, [0, 0, 0], False)
        assert buf.cursor == 0 and len(buf) == 4
        buf.push([0, 0, 0], 0, 9, [0, 0, 0], False)
        assert buf.cursor == 1 and buf.r[0] == 9

    def test_insufficient(self, rng):
        buf = A.ReplayBuffer(10)
        buf.push([0, 0, 0], 0, 0.0, [0, 0, 0], False)
        with pytest.raises(A.InsufficientData):
            buf.sample(2, rng)

    def test_sample_members_and_seeded(self):
        buf = A.ReplayBuffer(8)
        for i in range(8):
            buf.push([i, 0, 0], i % 7, float(i), [i, 1, 0], False)
        a = buf.sample(8, np.random.default_rng(5))
        b = buf.sample(8, np.random.default_rng(5))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert set(a[2]) <= set(map(float, range(8)))

    def test_uniform(self):
        buf = A.ReplayBuffer(10)
        for i in range(10):
            buf.push([0, 0, 0], 0, float(i), [0, 0, 0], False)
        rng = np.random.default_rng(3)
        n = 100_000
        idx = np.concatenate([buf.sample_indices(10, rng) for _ in range(n // 10)])
        assert frequency_ok(np.bincount(idx, minlength=10), np.full(10, 0.1), n)

    @given(st.integers(1, 20), st.integers(0, 60))
    def test_never_exceeds_capacity(self, cap, n):
        buf = A.ReplayBuffer(cap)
        for i in range(n):
            buf.push([i, 0, 0], 0, float(i), [0, 0, 0], False)
        assert len(buf) == min(n, cap)
        assert [t.r for t in buf.transitions()] == [float(i) for i in range(max(0, n - cap), n)]


class TestTargets:
    def test_dql(self):
        assert A.dql_target(2.0, np.arange(7.0), True, 0.9) == 2.0
        assert A.dql_target(2.0, np.arange(7.0), False, 0.0) == 2.0
        assert A.dql_target(1.0, np.array([0, 10, 3, 0, 0, 0, 0.0]), False, 0.9) == pytest.approx(10.0)

    def test_dueling_terminal(self):
        assert A.dueling_target(3.0, nn.DuelingNet(seed=0), np.zeros(3), True, 0.9) == 3.0

    def test_dueling_zero_advantage(self):
        net = nn.DuelingNet((8,), (), seed=0)
        w, b = net.layer("astream", 0)
        w[:] = 0.0
        b[:] = 0.0
        s = np.array([0.3, 0.6, 0.5])
        v, _ = net.streams(s)
        assert A.dueling_target(1.0, net, s, False, 0.9) == pytest.approx(1.0 + 0.9 * v[0], rel=1e-12)

    def test_dueling_closed_form(self):
        net = nn.DuelingNet((2,), (), "mean", n_inputs=1, seed=0)
        tw, tb = net.layer("trunk", 0)
        tw[:] = [[1.0, 2.0]]
        tb[:] = 0.0
        vw, vb = net.layer("vstream", 0)
        vw[:] = [[0.5], [0.25]]
        vb[:] = 0.1
        aw, ab = net.layer("astream", 0)
        aw[:] = 0.0
        aw[0, :] = np.arange(7.0)
        ab[:] = 0.0
        s = np.array([2.0])  # trunk output (2, 4)
        v = 0.5 * 2 + 0.25 * 4 + 0.1
        adv = 2 * np.arange(7.0)
        expected = 1.0 + 0.9 * np.max(v + adv - adv.mean())
        assert A.dueling_target(1.0, net, s, False, 0.9) == pytest.approx(expected, rel=1e-12)


class TestOracle:
    def test_corridor(self):
        q = A.value_iteration_oracle(corridor(), gamma=0.9)
        assert q[0, 0, 0].max() == pytest.approx(0.9**4, rel=1e-12)
        assert np.argmax(q[0, 0, 0]) == E.Action.RIGHT
        for ix in range(5):
            assert q[ix, 0, 0].max() == pytest.approx(0.9 ** (4 - ix), rel=1e-12)

    def test_gamma_zero_is_immediate(self):
        w = oracle_world(rplus_kind="exponential")
        q = A.value_iteration_oracle(w, gamma=0.0)
        _, reward, _ = A.transition_model(w)
        target_row = np.ravel_multi_index(w.target_cell, w.grid_shape)
        reward[target_row] = 0.0
        np.testing.assert_allclose(q.reshape(-1, 7), reward, rtol=0, atol=1e-15)

    def test_not_enumerable(self):
        w = E.WorldConfig(clusters=[((500, 500), 100, 3)], beta=1.0)
        with pytest.raises(A.NotEnumerable):
            A.value_iteration_oracle(w)

    def test_reachable_excludes_target(self):
        cells = A.reachable_cells(oracle_world())
        assert len(cells) == 99 and (9, 9, 0) not in cells

    def test_tabular_matches_oracle(self):
        w = oracle_world()
        agent, _ = A.train(w, A.AgentConfig(epsilon=0.0, episodes=500), "tabular", seed=0)
        q = A.value_iteration_oracle(w, gamma=0.9)
        assert A.policy_agreement(A.greedy_policy(agent, w), q, A.reachable_cells(w)) == 1.0

    def test_corridor_tabular_straight_path(self):
        w = corridor()
        agent, _ = A.train(w, A.AgentConfig(epsilon=0.0, episodes=200), "tabular", seed=1)
        policy = A.greedy_policy(agent, w)
        assert all(policy[ix, 0, 0] == E.Action.RIGHT for ix in range(5))


class TestTrain:
    def test_zero_episodes(self):
        agent, metrics = A.train(oracle_world(), A.AgentConfig(episodes=0), "dql", seed=0)
        assert metrics == []
        np.testing.assert_array_equal(agent.online.theta, nn.Mlp(seed=agent.online.seed).theta)

    @pytest.mark.parametrize("alg", A.ALGORITHMS)
    def test_deterministic(self, small_world, alg):
        cfg = A.AgentConfig(episodes=6, batch_size=8)
        _, m1 = A.train(small_world, cfg, alg, seed=4)
        _, m2 = A.train(small_world, cfg, alg, seed=4)
        strip = lambda ms: [(m.reward, m.total_mbit, m.users_collected, m.steps, m.outcome) for m in ms]
        assert strip(m1) == strip(m2)

    def test_unknown_algorithm(self, small_world):
        with pytest.raises(ValueError):
            A.train(small_world, A.AgentConfig(episodes=1), "sarsa")

    def test_metrics_fields(self, small_world):
        _, ms = A.train(small_world, A.AgentConfig(episodes=3, batch_size=4), "dueling", seed=0)
        for m in ms:
            assert m.steps <= small_world.t_cons
            assert m.outcome in ("reached_target", "out_of_steps")
            assert 0 <= m.users_collected <= small_world.n_users

    def test_tabular_bounded(self, small_world):
        w = small_world.with_(beta=0.0, rplus_kind="exponential")
        cfg = A.AgentConfig(episodes=200, epsilon=0.3)
        agent, _ = A.train(w, cfg, "tabular", seed=2)
        # immediate shaping of a reward in [0, 1] keeps |r| <= 1
        assert np.abs(agent.qtable.table).max() <= 1.0 / (1 - cfg.gamma)

    def test_target_changes_only_at_sync(self, small_world):
        cfg = A.AgentConfig(episodes=0, batch_size=4, target_sync_period=5)
        agent = A.DQLAgent(cfg, dueling=False, seed=0)
        rng = np.random.default_rng(0)
        for i in range(10):
            agent.buffer.push(rng.random(3), i % 7, 1.0, rng.random(3), False)
        snapshots = []
        for _ in range(12):
            agent.learn(rng)
            snapshots.append(hash(agent.target.theta.tobytes()))
        changes = [i + 1 for i in range(1, 12) if snapshots[i] != snapshots[i - 1]]
        assert changes == [5, 10]

    def test_config_validation(self):
        with pytest.raises(E.ConfigError):
            A.AgentConfig(epsilon=1.5)
        with pytest.raises(E.ConfigError):
            A.AgentConfig(gamma=-0.1)
