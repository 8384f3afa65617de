"""Scenario presets, INI config loading, seeded multi-run experiments and sweeps.

Outputs are plain CSV with a leading ``# <schema> v<N>`` comment line.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agents as A
from . import nn
from .channel import ChannelParams, Position2
from .env import Cluster, ConfigError, WorldConfig

log = logging.getLogger(__name__)

METRICS_SCHEMA = "uavdrl-metrics v1"
AVERAGE_SCHEMA = "uavdrl-average v1"
TRAJECTORY_SCHEMA = "uavdrl-trajectory v1"
MANIFEST_SCHEMA = "uavdrl-sweep v1"

METRIC_FIELDS = ["episode", "reward", "total_mbit", "users_collected", "steps", "outcome"]
AVERAGE_FIELDS = ["episode", "reward", "total_mbit", "users_collected", "steps", "reached_target_rate", "n_runs"]
TRAJECTORY_FIELDS = ["step", "x", "y", "h", "action", "step_reward", "active_user_count", "cumulative_mbit"]

SWEEP_PARAMETERS = ("beta_zeta", "rplus_kind", "reward_kind", "gamma", "epsilon", "batch_size", "learning_rate")


def _clusters(*specs):
    return tuple(Cluster(Position2(x, y), r, n) for (x, y), r, n in specs)


PRESETS = {
    "three_clusters": _clusters(
        ((600.0, 850.0), 100.0, 10),
        ((850.0, 600.0), 100.0, 10),
        ((850.0, 850.0), 100.0, 10),
    ),
    "five_clusters": _clusters(
        ((200.0, 700.0), 100.0, 10),
        ((450.0, 350.0), 100.0, 10),
        ((550.0, 800.0), 100.0, 10),
        ((800.0, 250.0), 100.0, 10),
        ((850.0, 650.0), 100.0, 10),
    ),
}


def preset_world(name="three_clusters", **overrides) -> WorldConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {sorted(PRESETS)}")
    return WorldConfig(clusters=PRESETS[name], **overrides)


@dataclass
class ExperimentSpec:
    world: WorldConfig = field(default_factory=preset_world)
    agent: A.AgentConfig = field(default_factory=A.AgentConfig)
    algorithm: str = "dql"
    repeats: int = 1
    seeds: tuple = (0,)
    output_dir: Path = Path("runs")
    scenario: str = "three_clusters"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.output_dir = Path(self.output_dir)
        if self.algorithm == "dueling":
            self.algorithm = "dueling_dql"
        if self.algorithm not in A.ALGORITHMS:
            raise ConfigError(f"experiment.algorithm: unknown algorithm {self.algorithm!r}")
        if self.repeats != len(self.seeds):
            raise ConfigError(f"experiment.repeats={self.repeats} but {len(self.seeds)} seeds given")


# ----------------------------------------------------------------- config I/O

_WORLD_KEYS = {
    "area_x": float,
    "area_y": float,
    "grid_step": float,
    "altitude_levels": "floats",
    "start": "floats",
    "target": "floats",
    "d_cons": float,
    "r_min_mbit": float,
    "t_cons": int,
    "user_speed": float,
    "beta": float,
    "zeta": float,
    "rplus_kind": str,
    "step_reward_kind": str,
    "dt": float,
}
_CHANNEL_KEYS = {"beta0_db": float, "bandwidth_hz": float, "noise_dbm": float, "tx_power_w": float}
_AGENT_KEYS = {
    "epsilon": float,
    "gamma": float,
    "learning_rate": float,
    "batch_size": int,
    "buffer_capacity": int,
    "target_sync_period": int,
    "episodes": int,
    "hidden": "ints",
    "stream_hidden": "ints",
    "dueling_mode": str,
    "tabular_learning_rate": float,
}
_EXPERIMENT_KEYS = {"scenario": str, "algorithm": str, "repeats": int, "seeds": "ints", "output_dir": str}
_CLUSTER_KEYS = {"center": "floats", "radius": float, "n_users": int}


def _convert(section, key, raw, kind):
    try:
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind is str:
            return raw.strip()
        return kind(float(raw)) if kind is int else kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _read_section(cp, section, schema):
    out = {}
    for key, raw in cp.items(section):
        if key not in schema:
            raise ConfigError(f"[{section}] unknown key {key!r}; valid keys: {', '.join(sorted(schema))}")
        out[key] = _convert(section, key, raw, schema[key])
    return out


def _normalise_rplus(value: str) -> str:
    return "exponential" if value in ("exp", "exponential") else value


def parse_spec(text: str, source="<string>") -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {"experiment", "world", "channel", "agent"}
    for sec in cp.sections():
        if sec not in known and not sec.startswith("cluster."):
            raise ConfigError(f"{source}: unknown section [{sec}]")

    exp = _read_section(cp, "experiment", _EXPERIMENT_KEYS) if cp.has_section("experiment") else {}
    world = _read_section(cp, "world", _WORLD_KEYS) if cp.has_section("world") else {}
    chan = _read_section(cp, "channel", _CHANNEL_KEYS) if cp.has_section("channel") else {}
    agent = _read_section(cp, "agent", _AGENT_KEYS) if cp.has_section("agent") else {}

    scenario = exp.pop("scenario", "three_clusters")
    if scenario not in PRESETS:
        raise ConfigError(f"[experiment] scenario: unknown preset {scenario!r}; expected one of {sorted(PRESETS)}")
    clusters = PRESETS[scenario]
    cluster_secs = sorted((s for s in cp.sections() if s.startswith("cluster.")), key=lambda s: s.split(".", 1)[1])
    if cluster_secs:
        parsed = []
        for sec in cluster_secs:
            c = _read_section(cp, sec, _CLUSTER_KEYS)
            missing = set(_CLUSTER_KEYS) - set(c)
            if missing:
                raise ConfigError(f"[{sec}] missing keys: {', '.join(sorted(missing))}")
            if len(c["center"]) != 2:
                raise ConfigError(f"[{sec}] center must have two coordinates")
            parsed.append(Cluster(Position2(*c["center"]), c["radius"], c["n_users"]))
        clusters = tuple(parsed)

    if "r_min_mbit" in world:
        world["r_min"] = world.pop("r_min_mbit") * 1e6
    if "rplus_kind" in world:
        world["rplus_kind"] = _normalise_rplus(world["rplus_kind"])
    for key in ("start", "target"):
        if key in world and len(world[key]) != 3:
            raise ConfigError(f"[world] {key} must have three coordinates")
    try:
        channel = ChannelParams.from_db(**chan)
    except ValueError as exc:
        raise ConfigError(f"[channel] {exc}") from None
    try:
        world_cfg = WorldConfig(clusters=clusters, channel=channel, **world)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[world] {exc}") from None
    try:
        agent_cfg = A.AgentConfig(**agent)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[agent] {exc}") from None

    seeds = exp.pop("seeds", None)
    repeats = exp.pop("repeats", None)
    if seeds is None:
        seeds = tuple(range(repeats if repeats is not None else 1))
    if repeats is None:
        repeats = len(seeds)
    return ExperimentSpec(
        world=world_cfg,
        agent=agent_cfg,
        algorithm=exp.pop("algorithm", "dql"),
        repeats=repeats,
        seeds=seeds,
        output_dir=exp.pop("output_dir", "runs"),
        scenario=scenario,
    )


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_spec(path.read_text(), source=path)


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if hasattr(v, "value"):
        return str(v.value)
    return repr(float(v)) if isinstance(v, float) else str(v)


def dump_spec(spec: ExperimentSpec) -> str:
    """INI text that :func:`parse_spec` maps back to an equal spec."""
    w, a, ch = spec.world, spec.agent, spec.world.channel
    lines = [
        "[experiment]",
        f"scenario = {spec.scenario}",
        f"algorithm = {spec.algorithm}",
        f"repeats = {spec.repeats}",
        f"seeds = {_fmt(spec.seeds)}",
        f"output_dir = {spec.output_dir}",
        "",
        "[world]",
    ]
    for key in _WORLD_KEYS:
        value = w.r_min / 1e6 if key == "r_min_mbit" else getattr(w, key)
        lines.append(f"{key} = {_fmt(value)}")
    lines += [
        "",
        "[channel]",
        f"beta0_db = {_fmt(10 * np.log10(ch.beta0))}",
        f"bandwidth_hz = {_fmt(ch.bandwidth_hz)}",
        f"noise_dbm = {_fmt(10 * np.log10(ch.noise_power_w) + 30)}",
        f"tx_power_w = {_fmt(ch.tx_power_w)}",
        "",
        "[agent]",
    ]
    for key in _AGENT_KEYS:
        lines.append(f"{key} = {_fmt(getattr(a, key))}")
    for i, c in enumerate(w.clusters):
        lines += ["", f"[cluster.{i:02d}]", f"center = {_fmt(tuple(c.center))}", f"radius = {_fmt(c.radius)}", f"n_users = {c.n_users}"]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- CSV I/O


def _write_csv(path, schema, fields, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema}\n")
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def _read_csv(path, schema):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {schema}":
            raise ValueError(f"{path}: expected schema line '# {schema}', found {first!r}")
        return list(csv.DictReader(fh))


def write_metrics(metrics, path):
    _write_csv(path, METRICS_SCHEMA, METRIC_FIELDS, (dataclasses.asdict(m) for m in metrics))


def read_metrics(path) -> list:
    return [
        A.EpisodeMetrics(
            episode=int(r["episode"]),
            reward=float(r["reward"]),
            total_mbit=float(r["total_mbit"]),
            users_collected=int(r["users_collected"]),
            steps=int(r["steps"]),
            outcome=r["outcome"],
        )
        for r in _read_csv(path, METRICS_SCHEMA)
    ]


def average_metrics(runs) -> list:
    """Per-episode-index mean across runs (runs may have different lengths)."""
    n_ep = max((len(r) for r in runs), default=0)
    rows = []
    for ep in range(n_ep):
        items = [r[ep] for r in runs if len(r) > ep]
        n = len(items)
        rows.append(
            {
                "episode": ep,
                "reward": sum(m.reward for m in items) / n,
                "total_mbit": sum(m.total_mbit for m in items) / n,
                "users_collected": sum(m.users_collected for m in items) / n,
                "steps": sum(m.steps for m in items) / n,
                "reached_target_rate": sum(m.outcome == "reached_target" for m in items) / n,
                "n_runs": n,
            }
        )
    return rows


def write_average(rows, path):
    _write_csv(path, AVERAGE_SCHEMA, AVERAGE_FIELDS, rows)


def read_average(path) -> list:
    return [
        {k: (int(v) if k in ("episode", "n_runs") else float(v)) for k, v in r.items()}
        for r in _read_csv(path, AVERAGE_SCHEMA)
    ]


def write_trajectory(history, path):
    """One row per visited state, starting with the reset state."""
    if not history:
        raise ValueError("empty trajectory")
    _write_csv(path, TRAJECTORY_SCHEMA, TRAJECTORY_FIELDS, history)


def read_trajectory(path) -> list:
    ints = {"step", "action", "active_user_count"}
    return [{k: (int(v) if k in ints else float(v)) for k, v in r.items()} for r in _read_csv(path, TRAJECTORY_SCHEMA)]


# ----------------------------------------------------------------- running


def _run_one(world, agent_cfg, algorithm, seed):
    try:
        agent, metrics = A.train(world, agent_cfg, algorithm, seed)
        return metrics, agent.last_trajectory, None, agent
    except nn.DivergenceError as exc:
        return [], [], str(exc), None


def run(spec: ExperimentSpec, workers=1) -> dict:
    """Train ``spec.repeats`` independent runs and write their CSVs under ``spec.output_dir``.

    Files: ``run_<i>_seed<s>.csv`` and ``trajectory_<i>_seed<s>.csv`` per run,
    ``average.csv`` across runs, ``summary.json`` and the resolved ``config.ini``.
    """
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_spec(spec))
    jobs = [(spec.world, spec.agent, spec.algorithm, s) for s in spec.seeds]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*job) for job in jobs]

    runs, summary_runs = [], []
    for i, (seed, (metrics, traj, error, agent)) in enumerate(zip(spec.seeds, results)):
        name = f"run_{i}_seed{seed}"
        entry = {"index": i, "seed": seed, "metrics_csv": f"{name}.csv", "error": error}
        if error is not None:
            log.warning("run %d (seed %d) diverged: %s", i, seed, error)
        write_metrics(metrics, out / f"{name}.csv")
        if traj:
            write_trajectory(traj, out / f"trajectory_{i}_seed{seed}.csv")
            entry["trajectory_csv"] = f"trajectory_{i}_seed{seed}.csv"
        if agent is not None and hasattr(agent, "online"):
            nn.save(agent.online, out / f"{name}.qnet")
        elif agent is not None:
            write_qtable(agent.qtable, out / f"{name}.qtable.csv")
        if metrics:
            runs.append(metrics)
            entry["final_reward"] = metrics[-1].reward
        summary_runs.append(entry)
    avg = average_metrics(runs)
    write_average(avg, out / "average.csv")
    summary = {
        "algorithm": spec.algorithm,
        "episodes": spec.agent.episodes,
        "seeds": list(spec.seeds),
        "runs": summary_runs,
        "final_average_reward": avg[-1]["reward"] if avg else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def write_qtable(qtable, path):
    _write_csv(path, "uavdrl-qtable v1", ["cell", *[f"q{i}" for i in range(7)]],
               ({"cell": r[0], **{f"q{i}": r[i + 1] for i in range(7)}} for r in qtable.rows()))


def apply_parameter(spec: ExperimentSpec, parameter: str, value) -> ExperimentSpec:
    """Copy of ``spec`` with one sweep parameter set from its string form."""
    value = str(value).strip()
    try:
        if parameter == "beta_zeta":
            beta, zeta = (float(v) for v in value.split(":"))
            world = spec.world.with_(beta=beta, zeta=zeta)
            return dataclasses.replace(spec, world=world)
        if parameter == "rplus_kind":
            return dataclasses.replace(spec, world=spec.world.with_(rplus_kind=_normalise_rplus(value)))
        if parameter == "reward_kind":
            return dataclasses.replace(spec, world=spec.world.with_(step_reward_kind=value))
        if parameter in ("gamma", "epsilon", "learning_rate"):
            return dataclasses.replace(spec, agent=dataclasses.replace(spec.agent, **{parameter: float(value)}))
        if parameter == "batch_size":
            return dataclasses.replace(spec, agent=dataclasses.replace(spec.agent, batch_size=int(value)))
    except ValueError as exc:
        raise ConfigError(f"sweep value {value!r} for {parameter}: {exc}") from None
    raise ConfigError(f"unknown sweep parameter {parameter!r}; valid: {', '.join(SWEEP_PARAMETERS)}")


def sweep(base: ExperimentSpec, parameter: str, values, workers=1) -> list:
    """One :func:`run` per value, each in ``<output_dir>/<parameter>=<value>``; writes ``manifest.csv``."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; valid: {', '.join(SWEEP_PARAMETERS)}")
    values = [str(v) for v in values]
    points = [apply_parameter(base, parameter, v) for v in values]  # validate all before running any
    base.output_dir.mkdir(parents=True, exist_ok=True)
    manifest, summaries = [], []
    for i, (value, spec) in enumerate(zip(values, points)):
        sub = f"{parameter}={value.replace(':', '-')}"
        spec = dataclasses.replace(spec, output_dir=base.output_dir / sub)
        log.info("sweep point %d/%d: %s=%s", i + 1, len(values), parameter, value)
        summaries.append(run(spec, workers=workers))
        manifest.append({"index": i, "parameter": parameter, "value": value, "output_dir": sub})
    _write_csv(base.output_dir / "manifest.csv", MANIFEST_SCHEMA, ["index", "parameter", "value", "output_dir"], manifest)
    return summaries


def read_manifest(path) -> list:
    return [dict(r, index=int(r["index"])) for r in _read_csv(path, MANIFEST_SCHEMA)]


def configure_logging():
    level = os.environ.get("UAVDRL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
