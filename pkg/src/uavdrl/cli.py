"""Command-line entry point: ``uavdrl run | sweep | check-gradients``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import experiments as X
from . import nn
from .env import ConfigError


def _base_spec(args) -> X.ExperimentSpec:
    spec = X.load_spec(args.config) if args.config else X.ExperimentSpec()
    world, agent = spec.world, spec.agent
    if args.scenario:
        world = world.with_(clusters=X.PRESETS[args.scenario])
        spec = dataclasses.replace(spec, scenario=args.scenario)
    changes = {}
    if args.beta is not None:
        changes["beta"] = args.beta
    if args.zeta is not None:
        changes["zeta"] = args.zeta
    if args.rplus:
        changes["rplus_kind"] = "exponential" if args.rplus == "exp" else args.rplus
    if args.reward:
        changes["step_reward_kind"] = args.reward
    if changes:
        world = world.with_(**changes)
    if args.episodes is not None:
        agent = dataclasses.replace(agent, episodes=args.episodes)
    spec = dataclasses.replace(spec, world=world, agent=agent)
    if args.algorithm:
        spec = dataclasses.replace(spec, algorithm="dueling_dql" if args.algorithm == "dueling" else args.algorithm)
    if args.seed is not None or args.repeats is not None:
        first = args.seed if args.seed is not None else spec.seeds[0]
        n = args.repeats if args.repeats is not None else spec.repeats
        spec = dataclasses.replace(spec, seeds=tuple(range(first, first + n)), repeats=n)
    if args.out:
        spec = dataclasses.replace(spec, output_dir=args.out)
    return spec


def _add_common(p):
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--scenario", choices=sorted(X.PRESETS))
    p.add_argument("--algorithm", choices=["tabular", "dql", "dueling", "dueling_dql"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, help="first seed; repeats use consecutive seeds")
    p.add_argument("--repeats", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--rplus", choices=["binary", "exp", "exponential"])
    p.add_argument("--reward", choices=["immediate", "episode"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel runs")


def cmd_run(args):
    spec = _base_spec(args)
    summary = X.run(spec, workers=args.workers)
    print(f"wrote {len(summary['runs'])} run(s) to {spec.output_dir}")
    if summary["final_average_reward"] is not None:
        print(f"final average mission reward: {summary['final_average_reward']:.6g}")
    return 0 if all(r["error"] is None for r in summary["runs"]) else 1


def cmd_sweep(args):
    spec = _base_spec(args)
    values = [v for v in args.values.split(",") if v.strip()] if args.values else []
    X.sweep(spec, args.param, values, workers=args.workers)
    print(f"sweep over {args.param}: {len(values)} point(s) in {spec.output_dir}")
    return 0


def cmd_check_gradients(args):
    rng = np.random.default_rng(args.seed)
    worst = {"plain": 0.0, "dueling-mean": 0.0, "dueling-max": 0.0}
    for trial in range(args.trials):
        hidden = tuple(int(h) for h in rng.integers(2, 33, size=rng.integers(1, 3)))
        nets = {
            "plain": nn.Mlp(hidden, seed=trial),
            "dueling-mean": nn.DuelingNet(hidden, (int(rng.integers(2, 17)),), "mean", seed=trial),
            "dueling-max": nn.DuelingNet(hidden, (int(rng.integers(2, 17)),), "max", seed=trial),
        }
        for net in nets.values():
            net.theta += rng.normal(0.0, 0.05, net.n_params)  # zero biases can sit exactly on a ReLU kink
        x = rng.random((4, 3))
        a = rng.integers(0, 7, 4)
        y = rng.normal(size=4)
        for name, net in nets.items():
            worst[name] = max(worst[name], nn.gradient_check(net, x, a, y, n_samples=40, rng=rng))
    for name, err in worst.items():
        print(f"{name:13s} max relative error {err:.3e}")
    ok = max(worst.values()) < args.tol
    print("PASS" if ok else "FAIL", f"(tolerance {args.tol:g})")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="uavdrl", description="UAV trajectory and data-collection RL experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration over several seeds")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one configuration per parameter value")
    _add_common(p)
    p.add_argument("--param", required=True, choices=X.SWEEP_PARAMETERS)
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 0.7,0.8,0.9 or 1:1,2:1")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check-gradients", help="finite-difference check of the network backward pass")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_check_gradients)
    return parser


def main(argv=None) -> int:
    X.configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, nn.DivergenceError, OSError, ValueError) as exc:
        print(f"uavdrl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
