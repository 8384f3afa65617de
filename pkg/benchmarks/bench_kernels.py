"""Time the hot kernels with numba enabled and disabled.

Each backend runs in its own interpreter because the backend is fixed at
import time by UAVDRL_DISABLE_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat 200]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from uavdrl import _accel, agents as A, channel as C, env as E, experiments as X, nn

repeat = int(sys.argv[1])


def best(fn, n):
    fn()  # warm up (JIT compile)
    times = []
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        times.append((time.perf_counter() - t0) / n)
    return min(times) * 1e6


rng = np.random.default_rng(0)
gains = rng.uniform(1e-11, 1e-9, 30)
p = C.ChannelParams()
net = nn.DuelingNet(seed=0)
adam = nn.Adam.for_net(net)
x1 = rng.random(3)
xb, ab, yb = rng.random((32, 3)), rng.integers(0, 7, 32), rng.normal(size=32)
world = X.preset_world("five_clusters")
state = E.reset(world, 0)
walk = np.random.default_rng(1)


def env_step():
    global state
    state = E.step(state, E.Action.HOVER, world, walk)[0]
    if state.done:
        state = E.reset(world, 0)


def episodes():
    A.train(X.preset_world("three_clusters"), A.AgentConfig(episodes=2), "dql", seed=0)


out = {
    "numba": _accel.USE_NUMBA,
    "sinr_rates_30_users_us": best(lambda: C.active_rates(gains, p), repeat),
    "dueling_forward_us": best(lambda: net(x1), repeat),
    "dueling_train_step_32_us": best(lambda: nn.train_step(net, adam, xb, ab, yb), repeat),
    "env_step_50_users_us": best(env_step, repeat),
    "two_dql_episodes_us": best(episodes, 1),
}
print(json.dumps(out))
"""


def run_backend(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("UAVDRL_DISABLE_NUMBA", None)
    if disable:
        env["UAVDRL_DISABLE_NUMBA"] = "1"
    proc = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200, help="calls per timing sample")
    args = parser.parse_args(argv)

    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    if not fast["numba"]:
        print("numba is not importable; both columns use numpy")
    print(f"{'kernel':28s} {'numba us':>12s} {'numpy us':>12s} {'speedup':>8s}")
    for key in fast:
        if key == "numba":
            continue
        print(f"{key:28s} {fast[key]:12.1f} {slow[key]:12.1f} {slow[key] / fast[key]:8.2f}")


if __name__ == "__main__":
    main()
