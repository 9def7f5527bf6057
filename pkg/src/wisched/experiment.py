"""Experiment configuration files and the traffic-weight sweep runner.

Config files are TOML (or JSON with the same structure). Unknown keys are
rejected with the full dotted path so typos fail loudly instead of silently
training the wrong thing.

Schema (all tables optional unless noted):

    [[system.monitors]]            # required, one or more groups
    count = 3                      # optional shorthand, default 1
    num_states = 10
    self_prob = 0.6
    weight = 1.0

    [[system.traffics]]            # zero or more groups
    count = 1
    duration = 3
    weight = 1.0

    [channels]                     # required
    bandwidths = [1.0, 1.0]
    snr = 1.0
    log_base = 2.0

    [channels.gains]               # required
    mode = "shared"                # "shared" | "per-pair" | "random-walk"
    stay_prob = 0.6
    levels = [1.0, 3.0, 7.0]       # shared mode
    levels_by_pair = [[...], ...]  # per-pair mode, row-major over (j, m)
    num_levels = 10                # random-walk mode
    span = 10.0
    base_low = 0.0
    base_high = 40.0
    seed = 7

    [training]                     # Hyperparams fields plus episodes/seed
    buffer_slots = 512
    update_epochs = 10
    episodes = 200
    seed = 1
    ...

    [whittle]
    dc = 0.1
    c_low = 0.1
    c_high = 4000.0
    x_max = 500

    [experiment]
    eval_episodes = 30
    eval_horizon = 512
    out_dir = "runs"

    [sweep]
    multipliers = [0.0, 0.5, 1.0, 2.0, 4.0]
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import tomli

from .baselines import AoiGreedy, RandomFeasible, WhittleGreedy, monte_carlo_eval
from .errors import ConfigError
from .mappo import Hyperparams, Trainer
from .model import GainChain, ProcessModel, SystemConfig, TrafficModel, validate_config
from .whittle import SearchGrid, build_table

__all__ = [
    "ExperimentSpec",
    "load_spec",
    "emit_csv",
    "run_sweep",
    "resolve_out",
    "SWEEP_COLUMNS",
    "SWEEP_POLICIES",
]

SWEEP_COLUMNS = ("multiplier", "policy", "accuracy", "accuracy_se", "throughput", "throughput_se")
SWEEP_POLICIES = ("wi-mappo", "aoi-greedy", "whittle-greedy", "random-feasible")

_SCHEMA = {
    "system": {
        "monitors": {"count", "num_states", "self_prob", "weight"},
        "traffics": {"count", "duration", "weight"},
    },
    "channels": {
        "bandwidths": None,
        "snr": None,
        "log_base": None,
        "gains": {
            "mode",
            "stay_prob",
            "levels",
            "levels_by_pair",
            "num_levels",
            "span",
            "base_low",
            "base_high",
            "seed",
        },
    },
    "training": {
        "buffer_slots",
        "update_epochs",
        "clip",
        "value_coef",
        "entropy_coef",
        "discount",
        "actor_lr",
        "critic_lr",
        "hidden",
        "activation",
        "standardize_advantages",
        "aoii_scale",
        "episodes",
        "seed",
    },
    "whittle": {"dc", "c_low", "c_high", "x_max"},
    "experiment": {"eval_episodes", "eval_horizon", "out_dir"},
    "sweep": {"multipliers"},
}


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one run needs: the system, the training knobs, the index
    search window, and the evaluation protocol."""

    system: SystemConfig
    hyper: Hyperparams
    episodes: int
    seed: int
    search: SearchGrid
    x_max: int
    eval_episodes: int
    eval_horizon: int
    out_dir: str
    multipliers: tuple[float, ...]


def _reject_unknown(raw: dict) -> None:
    for top, val in raw.items():
        if top not in _SCHEMA:
            raise ConfigError(f"unknown config section [{top}]")
        allowed = _SCHEMA[top]
        if isinstance(allowed, set):
            for key in val:
                if key not in allowed:
                    raise ConfigError(f"unknown key {top}.{key}")
            continue
        for key, sub in val.items():
            if key not in allowed:
                raise ConfigError(f"unknown key {top}.{key}")
            inner = allowed[key]
            if inner is None:
                continue
            entries = sub if isinstance(sub, list) else [sub]
            for entry in entries:
                for k2 in entry:
                    if k2 not in inner:
                        raise ConfigError(f"unknown key {top}.{key}.{k2}")


def _build_chains(gains: dict, num_traffics: int, num_channels: int):
    mode = gains.get("mode", "shared")
    stay = float(gains.get("stay_prob", 0.6))
    if mode == "shared":
        if "levels" not in gains:
            raise ConfigError("channels.gains.levels is required in shared mode")
        chain = GainChain.random_walk([float(v) for v in gains["levels"]], stay)
        return [[chain] * num_channels for _ in range(num_traffics)]
    if mode == "per-pair":
        rows = gains.get("levels_by_pair")
        if rows is None or len(rows) != num_traffics * num_channels:
            raise ConfigError(
                "channels.gains.levels_by_pair must list one level set per "
                f"(device, channel) pair, expected {num_traffics * num_channels}"
            )
        chains = []
        for j in range(num_traffics):
            row = []
            for m in range(num_channels):
                levels = [float(v) for v in rows[j * num_channels + m]]
                row.append(GainChain.random_walk(levels, stay))
            chains.append(row)
        return chains
    if mode == "random-walk":
        num_levels = int(gains.get("num_levels", 10))
        span = float(gains.get("span", 10.0))
        lo = float(gains.get("base_low", 0.0))
        hi = float(gains.get("base_high", 40.0))
        seed = int(gains.get("seed", 0))
        rng = np.random.default_rng(seed)
        chains = []
        for _j in range(num_traffics):
            row = []
            for _m in range(num_channels):
                base = rng.uniform(lo, hi)
                levels = np.linspace(base, base + span, num_levels)
                row.append(GainChain.random_walk(levels, stay))
            chains.append(row)
        return chains
    raise ConfigError(f"channels.gains.mode must be shared, per-pair, or random-walk, got {mode!r}")


def load_spec(path) -> ExperimentSpec:
    """Parse and validate a TOML or JSON experiment file."""
    text = None
    if str(path).endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    _reject_unknown(raw)

    system = raw.get("system", {})
    monitors: list[ProcessModel] = []
    for group in system.get("monitors", []):
        count = int(group.get("count", 1))
        for _ in range(count):
            monitors.append(
                ProcessModel(
                    num_states=int(group.get("num_states", 10)),
                    self_prob=float(group["self_prob"]),
                    weight=float(group.get("weight", 1.0)),
                )
            )
    traffics: list[TrafficModel] = []
    for group in system.get("traffics", []):
        count = int(group.get("count", 1))
        for _ in range(count):
            traffics.append(
                TrafficModel(
                    duration=int(group["duration"]),
                    weight=float(group.get("weight", 1.0)),
                )
            )

    channels = raw.get("channels", {})
    if "bandwidths" not in channels:
        raise ConfigError("channels.bandwidths is required")
    bandwidths = [float(b) for b in channels["bandwidths"]]
    if "gains" not in channels and traffics:
        raise ConfigError("channels.gains is required when traditional devices exist")
    chains = _build_chains(channels.get("gains", {}), len(traffics), len(bandwidths))

    training = dict(raw.get("training", {}))
    episodes = int(training.pop("episodes", 100))
    seed = int(training.pop("seed", 0))
    if "hidden" in training:
        training["hidden"] = tuple(int(h) for h in training["hidden"])
    hyper = Hyperparams(**training)

    cfg = SystemConfig(
        monitors=monitors,
        traffics=traffics,
        bandwidths=bandwidths,
        chains=chains,
        snr=float(channels.get("snr", 1.0)),
        log_base=float(channels.get("log_base", 2.0)),
        discount=hyper.discount,
    )
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError("; ".join(report.issues))

    whittle = raw.get("whittle", {})
    search = SearchGrid(
        dc=float(whittle.get("dc", 0.1)),
        c_low=float(whittle.get("c_low", 0.1)),
        c_high=float(whittle.get("c_high", 4000.0)),
    )
    exp = raw.get("experiment", {})
    sweep = raw.get("sweep", {})
    return ExperimentSpec(
        system=cfg,
        hyper=hyper,
        episodes=episodes,
        seed=seed,
        search=search,
        x_max=int(whittle.get("x_max", 500)),
        eval_episodes=int(exp.get("eval_episodes", 30)),
        eval_horizon=int(exp.get("eval_horizon", 500)),
        out_dir=str(exp.get("out_dir", "runs")),
        multipliers=tuple(float(v) for v in sweep.get("multipliers", (0.0, 0.5, 1.0, 2.0, 4.0))),
    )


def emit_csv(path, columns, rows) -> None:
    """Write rows (dicts) to CSV. Floats are written with repr so that
    reading the file back reproduces them bit for bit."""

    def cell(v):
        if isinstance(v, float):
            return repr(v)
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([cell(row[c]) for c in columns])


def _scaled_system(spec: ExperimentSpec, multiplier: float) -> SystemConfig:
    traffics = [replace(t, weight=t.weight * multiplier) for t in spec.system.traffics]
    return SystemConfig(
        monitors=spec.system.monitors,
        traffics=traffics,
        bandwidths=spec.system.bandwidths,
        chains=spec.system.chains,
        snr=spec.system.snr,
        log_base=spec.system.log_base,
        discount=spec.system.discount,
    )


def _sweep_point(spec: ExperimentSpec, multiplier: float) -> list[dict]:
    cfg = _scaled_system(spec, multiplier)
    table = build_table(cfg.monitors, x_max=spec.x_max, search=spec.search)
    trainer = Trainer(cfg, table, spec.hyper, seed=spec.seed)
    trainer.train(spec.episodes)
    policies = {
        "wi-mappo": trainer.policy(greedy=True),
        "aoi-greedy": AoiGreedy(cfg),
        "whittle-greedy": WhittleGreedy(table),
        "random-feasible": RandomFeasible(cfg, seed=spec.seed + 1),
    }
    rows = []
    for name in SWEEP_POLICIES:
        res = monte_carlo_eval(
            cfg, policies[name], spec.eval_episodes, spec.eval_horizon, seed=spec.seed + 2
        )
        rows.append(
            {
                "multiplier": multiplier,
                "policy": name,
                "accuracy": res.accuracy,
                "accuracy_se": res.accuracy_se,
                "throughput": res.throughput,
                "throughput_se": res.throughput_se,
            }
        )
    return rows


def run_sweep(spec: ExperimentSpec, out_path, workers: int = 1) -> list[dict]:
    """Train and evaluate at every traffic-weight multiplier; returns the rows
    written to out_path. workers > 1 distributes multipliers over processes."""
    rows: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_point, spec, mult) for mult in spec.multipliers]
            for fut in futures:
                rows.extend(fut.result())
    else:
        for mult in spec.multipliers:
            rows.extend(_sweep_point(spec, mult))
    emit_csv(out_path, SWEEP_COLUMNS, rows)
    return rows


def resolve_out(path) -> str:
    """Apply the output-directory override: a relative output path lands in
    $WISCHED_OUT_DIR when that variable is set."""
    base = os.environ.get("WISCHED_OUT_DIR")
    p = str(path)
    if base and not os.path.isabs(p):
        return os.path.join(base, p)
    return p
