"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 run error, 4 a requested
comparison assertion failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import harness
from .harness import ConfigError, ExperimentConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_CHECK = 4

OUTPUT_ROOT_VAR = "DIALAB_OUT"


def _resolve_out(cfg: ExperimentConfig, out: str | None) -> ExperimentConfig:
    import dataclasses
    if out is None and cfg.out is None:
        root = os.environ.get(OUTPUT_ROOT_VAR, "runs")
        out = os.path.join(root, f"{cfg.algorithm}-{cfg.space}",
                           f"seed-{cfg.seed}")
    if out is not None:
        cfg = dataclasses.replace(cfg, out=out)
    return cfg


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    cfg = _resolve_out(cfg, args.out)
    rows = harness.train_run(cfg, resume=args.resume)
    final = rows[-1]
    print(f"trained {final[0]} dialogues; final eval success "
          f"{final[1]:.3f}, mean return {final[2]:.3f} -> {cfg.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    _, _, env = harness.build_world(cfg)
    if args.policy == "agent":
        agent = harness.build_agent(cfg, env)
        if not args.checkpoint:
            raise ConfigError("--policy agent needs --checkpoint")
        agent.load(args.checkpoint)
        action_fn = agent.eval_action
    elif args.policy == "handcrafted":
        action_fn = corpus_mod.HandcraftedPolicy(cfg.space)
    elif args.policy == "random":
        action_fn = corpus_mod.RandomPolicy(
            env.n_actions, corpus_mod_rng(cfg.seed))
    else:
        raise ConfigError(f"unknown policy '{args.policy}'")
    episodes = args.episodes or cfg.eval_episodes
    success, mean_return, mean_length = harness.evaluate(
        action_fn, env, episodes, cfg.seed)
    print(f"success_rate={success:.4f} mean_return={mean_return:.4f} "
          f"mean_length={mean_length:.2f} ({episodes} dialogues)")
    return EXIT_OK


def corpus_mod_rng(seed: int):
    from .seeding import rng_stream
    return rng_stream(seed, "random-policy")


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.set)
    if cfg.algorithm not in ("da2c", "tda2c"):
        raise ConfigError("pretraining applies to the actor-critic algorithms")
    _, _, env = harness.build_world(cfg)
    agent = harness.build_agent(cfg, env)
    stats = harness.run_pretraining(cfg, env, agent)
    agent.save(args.out)
    print(f"pretrained ({stats}); checkpoint -> {args.out}")
    return EXIT_OK


def cmd_generate_corpus(args) -> int:
    cfg = load_config(args.config, args.set)
    _, _, env = harness.build_world(cfg)
    schedule = corpus_mod.BlunderSchedule()
    built = corpus_mod.generate_corpus(env, args.n, seed=cfg.seed,
                                       schedule=schedule)
    corpus_mod.save_corpus(built, args.out)
    ratings = [d.rating for d in built.dialogues]
    hist = {r: ratings.count(r) for r in (0, 1, 2, 3)}
    print(f"wrote {len(built)} dialogues to {args.out}; ratings {hist}")
    return EXIT_OK


def cmd_rate(args) -> int:
    built = corpus_mod.load_corpus(args.corpus)
    hist = {r: 0 for r in (0, 1, 2, 3)}
    for d in built.dialogues:
        hist[corpus_mod.rate(d)] += 1
    total = len(built)
    print(f"{total} dialogues; ratings {hist}; "
          f"expert fraction {hist[3] / max(total, 1):.3f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    curves = {}
    for item in args.runs:
        if "=" not in item:
            raise ConfigError(f"run spec '{item}' is not label=dir")
        label, path = item.split("=", 1)
        curves[label] = harness.load_run_curves(path)
    report = harness.compare_runs(curves, threshold=args.threshold,
                                  threshold_frac=args.frac)
    print(report.format())
    if args.expect_order:
        wanted = args.expect_order.split(",")
        got = report.order()
        if got[: len(wanted)] != wanted:
            print(f"ordering check FAILED: wanted {wanted}, got {got}")
            return EXIT_CHECK
        print("ordering check passed")
    return EXIT_OK


def cmd_chat(args) -> int:
    cfg = load_config(args.config, args.set)
    harness.chat_session(cfg, checkpoint=args.checkpoint, goal=args.goal)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    curves = {}
    for item in args.runs:
        if "=" not in item:
            raise ConfigError(f"run spec '{item}' is not label=dir")
        label, path = item.split("=", 1)
        curves[label] = harness.load_run_curves(path)
    with open(args.out, "w") as fh:
        fh.write("label,dialogues,success_median,success_min,success_max,"
                 "return_median\n")
        for label, seed_curves in curves.items():
            grid = [r[0] for r in seed_curves[0]]
            for i, d in enumerate(grid):
                succ = [c[i][1] for c in seed_curves]
                rets = [c[i][2] for c in seed_curves]
                fh.write(f"{label},{d},{np.median(succ):.6f},{min(succ):.6f},"
                         f"{max(succ):.6f},{np.median(rets):.6f}\n")
    print(f"plot data -> {args.out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialab",
        description="Train, evaluate and compare dialogue managers on the "
                    "restaurant domain")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")

    p = sub.add_parser("train", help="train one run and write its curve")
    add_config(p)
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="exploration-free evaluation")
    add_config(p)
    p.add_argument("--policy", default="agent",
                   choices=("agent", "handcrafted", "random"))
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("pretrain", help="run the two-stage pretraining only")
    add_config(p)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("generate-corpus", help="log handcrafted dialogues")
    add_config(p)
    p.add_argument("--n", type=int, default=2118)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_corpus)

    p = sub.add_parser("rate", help="re-rate a corpus file")
    p.add_argument("--corpus", required=True)
    p.set_defaults(fn=cmd_rate)

    p = sub.add_parser("compare", help="median dialogues-to-threshold report")
    p.add_argument("runs", nargs="+", metavar="LABEL=DIR")
    p.add_argument("--threshold", type=float)
    p.add_argument("--frac", type=float, default=0.9)
    p.add_argument("--expect-order", help="comma-separated fastest-first labels")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("chat", help="act-level interactive session")
    add_config(p)
    p.add_argument("--checkpoint")
    p.add_argument("--goal", help="e.g. 'food=italian area=north phone address'")
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("plot-data", help="aggregate curves into plot-ready CSV")
    p.add_argument("runs", nargs="+", metavar="LABEL=DIR")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
