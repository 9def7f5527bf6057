"""Command line entry point.

Subcommands:

    wisched whittle-table --config FILE --out FILE [--x-max N]
        Build the per-monitor index table and save it.

    wisched train --config FILE --out DIR [--seed N] [--episodes N] [--table FILE]
        Train the scheduler; writes log.csv, checkpoint.npz, and table.json
        under the output directory.

    wisched evaluate --config FILE --policy NAME [--checkpoint FILE]
        [--table FILE] [--episodes N] [--horizon N] [--seed N] [--out FILE]
        Monte Carlo evaluation of one policy; prints a summary line and can
        write a one-row CSV.

    wisched oracle --config FILE --cost C --out FILE [--x-max N]
        Solve each distinct monitor class's single-device average-cost problem
        at transmission cost C and dump age/action/bias columns.

    wisched sweep --config FILE --out FILE [--workers N]
        Traffic-weight sweep over the configured multipliers.

Relative --out paths land under $WISCHED_OUT_DIR when that variable is set;
no other setting is read from the environment.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .baselines import (
    AoiGreedy,
    DoNothing,
    RandomFeasible,
    WhittleGreedy,
    WhittleMyopic,
    monte_carlo_eval,
)
from .experiment import load_spec, resolve_out, run_sweep
from .mappo import Trainer, load_policy, save_checkpoint
from .oracle import relative_value_iteration, subproblem_mdp
from .whittle import SubProblem, build_table, load_table, save_table

__all__ = ["main"]

POLICY_NAMES = ("wi-mappo", "aoi-greedy", "whittle-greedy", "whittle-myopic", "random", "do-nothing")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wisched", description="joint age/throughput scheduler")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("whittle-table", help="build and save the index table")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--x-max", type=int, default=None)

    tr = sub.add_parser("train", help="train the scheduler")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--episodes", type=int, default=None)
    tr.add_argument("--table", default=None)

    ev = sub.add_parser("evaluate", help="Monte Carlo evaluation of one policy")
    ev.add_argument("--config", required=True)
    ev.add_argument("--policy", required=True, choices=POLICY_NAMES)
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--table", default=None)
    ev.add_argument("--episodes", type=int, default=None)
    ev.add_argument("--horizon", type=int, default=None)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--out", default=None)

    orc = sub.add_parser("oracle", help="exact single-monitor solution dump")
    orc.add_argument("--config", required=True)
    orc.add_argument("--cost", type=float, required=True)
    orc.add_argument("--out", required=True)
    orc.add_argument("--x-max", type=int, default=200)

    sw = sub.add_parser("sweep", help="traffic-weight sweep")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--workers", type=int, default=1)
    return p


def _load_or_build_table(spec, table_path):
    if table_path is not None:
        return load_table(table_path)
    return build_table(spec.system.monitors, x_max=spec.x_max, search=spec.search)


def _cmd_whittle_table(args) -> int:
    spec = load_spec(args.config)
    x_max = args.x_max if args.x_max is not None else spec.x_max
    table = build_table(spec.system.monitors, x_max=x_max, search=spec.search)
    out = resolve_out(args.out)
    save_table(table, out)
    print(f"table with {len(table.columns)} distinct columns (x_max={table.x_max}) -> {out}")
    return 0


def _cmd_train(args) -> int:
    spec = load_spec(args.config)
    seed = spec.seed if args.seed is None else args.seed
    episodes = spec.episodes if args.episodes is None else args.episodes
    out_dir = resolve_out(args.out)
    os.makedirs(out_dir, exist_ok=True)
    table = _load_or_build_table(spec, args.table)
    trainer = Trainer(spec.system, table, spec.hyper, seed=seed)
    history = trainer.train(episodes, log_path=os.path.join(out_dir, "log.csv"))
    save_checkpoint(trainer, os.path.join(out_dir, "checkpoint.npz"))
    save_table(trainer.table, os.path.join(out_dir, "table.json"))
    last = history[-1]
    print(
        f"episode {last['episode']}: reward {last['mean_reward']:.4f} "
        f"accuracy {last['mean_accuracy']:.4f} throughput {last['mean_throughput']:.4f} "
        f"violations {last['violations']}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    spec = load_spec(args.config)
    seed = spec.seed if args.seed is None else args.seed
    episodes = spec.eval_episodes if args.episodes is None else args.episodes
    horizon = spec.eval_horizon if args.horizon is None else args.horizon
    cfg = spec.system

    needs_table = args.policy in ("wi-mappo", "whittle-greedy", "whittle-myopic")
    table = _load_or_build_table(spec, args.table) if needs_table else None
    if args.policy == "wi-mappo":
        if args.checkpoint is None:
            print("evaluate: --checkpoint is required for policy wi-mappo", file=sys.stderr)
            return 2
        policy = load_policy(args.checkpoint, cfg, table, greedy=True, seed=seed)
    elif args.policy == "aoi-greedy":
        policy = AoiGreedy(cfg)
    elif args.policy == "whittle-greedy":
        policy = WhittleGreedy(table)
    elif args.policy == "whittle-myopic":
        policy = WhittleMyopic(cfg, table)
    elif args.policy == "random":
        policy = RandomFeasible(cfg, seed=seed + 1)
    else:
        policy = DoNothing()

    res = monte_carlo_eval(cfg, policy, episodes, horizon, seed=seed)
    print(
        f"{args.policy}: reward {res.reward:.4f} +- {res.reward_se:.4f}, "
        f"accuracy {res.accuracy:.4f} +- {res.accuracy_se:.4f}, "
        f"throughput {res.throughput:.4f} +- {res.throughput_se:.4f} "
        f"({episodes} episodes x {horizon} slots)"
    )
    if args.out is not None:
        out = resolve_out(args.out)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["policy", "reward", "reward_se", "accuracy", "accuracy_se", "throughput", "throughput_se"]
            )
            writer.writerow(
                [args.policy]
                + [repr(v) for v in (res.reward, res.reward_se, res.accuracy, res.accuracy_se, res.throughput, res.throughput_se)]
            )
    return 0


def _cmd_oracle(args) -> int:
    spec = load_spec(args.config)
    out = resolve_out(args.out)
    rows = []
    solved: dict[tuple, tuple] = {}
    for device_id, pm in enumerate(spec.system.monitors, start=1):
        key = (pm.num_states, pm.self_prob, pm.weight)
        if key not in solved:
            sp = SubProblem.from_process(pm)
            mdp = subproblem_mdp(sp, args.cost, x_max=args.x_max)
            gain, bias, policy = relative_value_iteration(mdp)
            solved[key] = (gain, bias, policy)
        gain, bias, policy = solved[key]
        # the solver maximizes reward = -(w x + a c); negate back to a cost
        for x in range(args.x_max + 1):
            rows.append((device_id, x, int(policy[x]), bias[x], -gain))
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device", "age", "transmit", "bias", "average_cost"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], repr(float(row[3])), repr(float(row[4]))])
    print(f"oracle dump for {len(spec.system.monitors)} monitors at cost {args.cost} -> {out}")
    return 0


def _cmd_sweep(args) -> int:
    spec = load_spec(args.config)
    out = resolve_out(args.out)
    rows = run_sweep(spec, out, workers=args.workers)
    print(f"{len(rows)} rows over multipliers {list(spec.multipliers)} -> {out}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "whittle-table": _cmd_whittle_table,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "oracle": _cmd_oracle,
        "sweep": _cmd_sweep,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
