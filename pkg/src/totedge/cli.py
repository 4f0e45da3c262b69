"""Command-line entry point: ``totedge {fit,train,eval,sweep,trace}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tot
from .baselines import load_policy
from .env import ToTEnv, lg_reference
from .errors import ConfigError
from .genai import QWEN_PROFILE, FitSample, fit_delay, fit_quality, gen_delay, gen_quality, rmse
from .harness import (
    HEURISTICS,
    ExperimentConfig,
    evaluate,
    load_config,
    make_policy,
    run_episode,
    run_sweep,
    summarize,
    train_policy,
    write_results,
)

log = logging.getLogger("totedge")

FIT_GRID = tuple(range(50, 201, 25))


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with env/train/sweep sections")
    common.add_argument("--seed", type=int, help="override the seed")
    common.add_argument("--out-dir", type=Path, default=Path("runs"), help="output directory (default: runs)")
    common.add_argument("--distance-unit", choices=("km", "m"), help="unit of link distance in the path-loss law")
    common.add_argument("--actor-q", choices=("q1", "min"), help="critic value used by the actor loss")
    common.add_argument("--literal-reward", action="store_true", help="train on the non-negated delay reward")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="totedge", description="Tree-of-Thoughts edge scheduling toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common], help="fit quality and delay laws to (tokens, score, delay) data")
    f.add_argument("--data", type=Path, help="CSV with columns tokens,score[,delay]; default synthesises data")
    f.add_argument("--noise", type=float, default=0.0, help="score noise std for synthetic data")

    t = sub.add_parser("train", parents=[common], help="train a learned policy")
    t.add_argument("--kind", choices=("dsac", "sac_mlp", "ddqn"), default="dsac")
    t.add_argument("--episodes", type=int)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or heuristic policy")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--policy", choices=sorted(HEURISTICS))
    e.add_argument("--seeds", type=int, nargs="+", help="environment seeds (default 0..4)")
    e.add_argument("--episodes", type=int, default=1)
    e.add_argument("--timing", action="store_true", help="record per-decision wall-clock")

    sub.add_parser("sweep", parents=[common], help="run the sweep section of the config")

    r = sub.add_parser("trace", parents=[common], help="emit one episode timeline as JSON")
    rsrc = r.add_mutually_exclusive_group()
    rsrc.add_argument("--checkpoint", type=Path)
    rsrc.add_argument("--policy", choices=sorted(HEURISTICS), default="greedy_eft")
    r.add_argument("--episode", type=int, default=0)
    return p


def _experiment(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else ExperimentConfig()
    env_over, train_over = {}, {}
    if args.distance_unit:
        env_over["distance_unit"] = args.distance_unit
    if args.literal_reward:
        env_over["literal_reward"] = True
    if args.actor_q:
        train_over["actor_q"] = args.actor_q
    if args.seed is not None:
        env_over["seed"] = args.seed
        train_over["seed"] = args.seed
    return replace(exp, env=replace(exp.env, **env_over), train=replace(exp.train, **train_over))


def cmd_fit(args) -> int:
    if args.data:
        with args.data.open() as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "tokens" not in rows[0] or "score" not in rows[0]:
            raise ConfigError("needs columns tokens,score[,delay]", key=str(args.data))
        tokens = [float(r["tokens"]) for r in rows]
        scores = [float(r["score"]) for r in rows]
        delays = [float(r["delay"]) for r in rows] if "delay" in rows[0] else None
    else:
        rng = np.random.default_rng(args.seed or 0)
        tokens = [float(c) for c in FIT_GRID]
        scores = [gen_quality(QWEN_PROFILE, c) + args.noise * rng.standard_normal() for c in tokens]
        delays = [gen_delay(QWEN_PROFILE, c) for c in tokens]
    sigma, rho = fit_quality([FitSample(c, s) for c, s in zip(tokens, scores)])
    out = {"sigma": sigma, "rho": rho}
    out["score_rmse"] = rmse([10.0 - sigma * np.exp(-rho * c) for c in tokens], scores)
    if delays is not None:
        eta, psi = fit_delay([FitSample(c, d) for c, d in zip(tokens, delays)])
        out.update(eta=eta, psi=psi, delay_rmse=rmse([eta * c + psi for c in tokens], delays))
    print(json.dumps(out, indent=2))
    return 0


def cmd_train(args) -> int:
    exp = _experiment(args)
    cfg = exp.train if args.episodes is None else replace(exp.train, episodes=args.episodes)
    _, rows = train_policy(args.kind, exp.env, cfg, args.out_dir)
    last = rows[-1]
    print(f"trained {args.kind} for {len(rows)} episodes; last T_tot {last['t_tot_s']:.3f} s -> {args.out_dir}")
    return 0


def _policy_and_env(args, exp):
    if getattr(args, "checkpoint", None):
        policy, env_config = load_policy(args.checkpoint)
        if args.config:  # config can override evaluation settings of matching size
            env_config = exp.env
        elif args.seed is not None:
            env_config = replace(env_config, seed=args.seed)
        return policy, env_config
    return make_policy(args.policy), exp.env


def cmd_eval(args) -> int:
    exp = _experiment(args)
    policy, env_config = _policy_and_env(args, exp)
    seeds = args.seeds or ([env_config.seed] if args.seed is not None else list(range(5)))
    rows = evaluate(policy, env_config, seeds, args.episodes, args.timing)
    write_results(args.out_dir / "eval.csv", rows)
    t_lg = lg_reference(env_config)[0]
    for (name, _), s in summarize(rows).items():
        print(f"{name}: T_tot {s['t_tot_s']:.3f} s (LG {t_lg:.1f} s), Score_tot {s['score_tot']:.3f}, "
              f"constraint rate {s['constraint_rate']:.2f}")
    return 0


def cmd_sweep(args) -> int:
    exp = _experiment(args)
    if exp.sweep is None:
        raise ConfigError("config has no sweep section", key="sweep")
    rows = run_sweep(exp.sweep, exp.env, exp.train)
    path = args.out_dir / "sweep.csv"
    write_results(path, rows)
    failed = sum(1 for r in rows if r.error)
    print(f"{len(rows)} rows -> {path}" + (f" ({failed} failed)" if failed else ""))
    return 0


def cmd_trace(args) -> int:
    exp = _experiment(args)
    policy, env_config = _policy_and_env(args, exp)
    env = ToTEnv(env_config)
    rng = np.random.default_rng([env_config.seed, 0x5EED])
    run_episode(env, policy, rng, args.episode)
    out = tot.trace(env.schedule)
    out.update(policy=getattr(policy, "name", "?"), seed=env_config.seed, episode=args.episode)
    print(json.dumps(out, indent=2))
    return 0


COMMANDS = {"fit": cmd_fit, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "trace": cmd_trace}


def cli_main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
