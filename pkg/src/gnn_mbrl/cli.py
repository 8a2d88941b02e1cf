"""Command-line entry point: ``gnn-mbrl {gen,train,eval,render}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from ._io import atomic_write_bytes, atomic_write_text
from .config import ConfigFileError, load_run_config
from .datagen import DatasetError, generate_dataset, read_dataset, write_dataset
from .evaluation import PLANNERS, ALIASES, ENV_VARIANTS, EvalConfig, evaluate_suite, write_report
from .gnn import ConfigError, metrics_csv, save_model, train
from .sim import InvalidConfigError, render_frame

PGM_HEADER = b"P5\n32 32\n255\n"


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'section.key = value' config file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config entry (repeatable)",
    )


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_gen(args) -> int:
    run = load_run_config(args.config, args.overrides)
    if args.length < 2:
        raise UsageError("--length must be >= 2")
    ds = generate_dataset(run.world, args.mode, args.episodes, args.length, args.seed, args.frames)
    write_dataset(ds, args.out)
    action_space = 9 if args.mode == "discrete" else 2
    dtype = "one-hot" if args.mode == "discrete" else "float32 pair"
    print("mode\taction_space\tactions_dtype\tepisodes\tlength\tmean_episode_reward")
    print(f"{args.mode}\t{action_space}\t{dtype}\t{ds.n_episodes}\t{ds.episode_len}\t{ds.mean_episode_reward():.3f}")
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.overrides)
    if not args.data.exists():
        raise UsageError(f"dataset {args.data} does not exist")
    ds = read_dataset(args.data)
    if ds.world.digest() != run.world.digest():
        raise UsageError(
            f"dataset world config {ds.world.digest()} differs from run config {run.world.digest()}; "
            "pass the config used for generation"
        )
    action_dim = 9 if ds.mode == "discrete" else 2
    if args.mode and args.mode != ds.mode:
        raise UsageError(f"--mode {args.mode} does not match dataset mode {ds.mode}")
    cfg = replace(run.gnn, action_dim=action_dim)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    clock = None if args.no_timing else time.perf_counter
    model, rows = train(ds, cfg, clock=clock, log=_say if args.verbose else None)
    save_model(model, args.out)
    atomic_write_text(args.metrics, metrics_csv(rows))
    if rows:
        first = next(r for r in rows if r.type == "train")
        last = [r for r in rows if r.type == "train"][-1]
        print(f"train error {first.error:.6g} -> {last.error:.6g} over {cfg.epochs} epochs")
    else:
        print("epochs = 0: wrote initialised model")
    return 0


def cmd_eval(args) -> int:
    run = load_run_config(args.config, args.overrides)
    planner = ALIASES.get(args.planner, args.planner)
    if planner in ("gnn_mpc", "mcts") and args.model is None:
        raise UsageError(f"planner {planner} requires --model")
    cfg = EvalConfig(
        env_variant=args.env or run.eval.env_variant,
        planner=planner,
        episodes=args.episodes,
        steps_per_episode=args.steps,
        model_path=str(args.model) if args.model is not None else None,
        seed=args.seed,
    )
    clock = None if args.no_timing else time.perf_counter
    row = evaluate_suite(cfg, run.world, run.cem, run.mcts, clock=clock, log=_say if args.verbose else None)
    write_report([row], args.out)
    print(f"{row.env} {row.planner} episodes={row.episodes} steps={row.steps} "
          f"rate={row.collision_rate_mean:.4f}+-{row.collision_rate_std:.4f}")
    return 0


def cmd_render(args) -> int:
    ds = read_dataset(args.data)
    if not 0 <= args.episode < ds.n_episodes:
        raise UsageError(f"episode {args.episode} out of range 0..{ds.n_episodes - 1}")
    ep = ds.episode(args.episode)
    frames = ep.frames
    if frames is None:
        frames = [render_frame(s.astype("float64"), ds.world) for s in ep.states]
    for t, frame in enumerate(frames):
        atomic_write_bytes(args.out / f"frame_{t:04d}.pgm", PGM_HEADER + frame.tobytes())
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnn-mbrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random-policy dataset")
    p.add_argument("--mode", choices=("discrete", "continuous"), required=True)
    p.add_argument("--episodes", type=_positive_int, required=True)
    p.add_argument("--length", type=_positive_int, required=True, help="steps per episode (>= 2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", action="store_true", help="also store 32x32 frames")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the graph-network dynamics model")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=_nonneg_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("discrete", "continuous"), help="assert the dataset mode")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--metrics", type=Path, required=True, help="metrics CSV path")
    p.add_argument("--no-timing", action="store_true", help="write time=0 for byte-reproducible CSVs")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a planner's collision rate")
    p.add_argument("--planner", choices=PLANNERS + tuple(ALIASES), required=True)
    p.add_argument("--episodes", type=_positive_int, required=True)
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--env", choices=sorted(ENV_VARIANTS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="report directory")
    p.add_argument("--no-timing", action="store_true", help="write wall_time=0 for byte-reproducible reports")
    p.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="dump an episode as PGM frames")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--episode", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigFileError, ConfigError, InvalidConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"{parser.prog} {args.command}: runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
