"""Desk-scale planner comparison: random vs ground-truth MPC vs GNN MPC.

For each mass variant a model is trained on data from that variant, then all
planners are evaluated on the same per-episode seeds.

    python3 scripts/table2_desk.py --envs m=1 m=2 --episodes 20 --steps 50 --out runs/table2
"""

import argparse
from pathlib import Path

from gnn_mbrl.datagen import generate_dataset
from gnn_mbrl.evaluation import ENV_VARIANTS, EvalConfig, env_world, evaluate_suite, write_report
from gnn_mbrl.gnn import GnnConfig, metrics_csv, save_model, train
from gnn_mbrl._io import atomic_write_text
from gnn_mbrl.sim import WorldConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--envs", nargs="+", default=["m=2"], choices=sorted(ENV_VARIANTS))
    p.add_argument("--train-episodes", type=int, default=100)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/table2"))
    args = p.parse_args()

    rows = []
    for env in args.envs:
        world = env_world(WorldConfig(), env)
        ds = generate_dataset(world, "continuous", args.train_episodes, 100, seed=args.seed + 1)
        model, metrics = train(ds, GnnConfig.for_world(world, "continuous", epochs=args.epochs, seed=args.seed),
                               log=lambda m: print(f"[{env}] {m}", flush=True))
        ckpt = args.out / f"model_{env.replace('=', '')}.ckpt"
        save_model(model, ckpt)
        atomic_write_text(ckpt.with_suffix(".csv"), metrics_csv(metrics))
        for planner in ("random", "ground_truth_mpc", "gnn_mpc"):
            cfg = EvalConfig(env_variant=env, planner=planner, episodes=args.episodes, steps_per_episode=args.steps,
                             model_path=str(ckpt) if planner == "gnn_mpc" else None, seed=args.seed)
            row = evaluate_suite(cfg, WorldConfig())
            rows.append(row)
            print(f"{env}\t{planner}\t{row.collision_rate_mean:.4f} +- {row.collision_rate_std:.4f}\t{row.wall_time:.0f}s", flush=True)
    write_report(rows, args.out)
    print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
