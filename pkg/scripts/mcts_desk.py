"""MCTS with a trained discrete model vs the discrete random baseline.

    python3 scripts/mcts_desk.py --episodes 10 --steps 100 --depth 10
"""

import argparse
from pathlib import Path

from gnn_mbrl.datagen import generate_dataset
from gnn_mbrl.evaluation import EvalConfig, evaluate_suite, write_report
from gnn_mbrl.gnn import GnnConfig, save_model, train
from gnn_mbrl.planners import MctsConfig
from gnn_mbrl.sim import WorldConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--train-episodes", type=int, default=100)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--simulations", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/mcts"))
    args = p.parse_args()

    world = WorldConfig()
    ds = generate_dataset(world, "discrete", args.train_episodes, 100, seed=args.seed + 1)
    model, _ = train(ds, GnnConfig.for_world(world, "discrete", epochs=args.epochs, seed=args.seed))
    ckpt = args.out / "model_discrete.ckpt"
    save_model(model, ckpt)
    mcts = MctsConfig(n_simulations=args.simulations, max_depth=args.depth)
    rows = []
    for planner in ("stove_style_random", "mcts"):
        cfg = EvalConfig(planner=planner, episodes=args.episodes, steps_per_episode=args.steps,
                         model_path=str(ckpt) if planner == "mcts" else None, seed=args.seed)
        row = evaluate_suite(cfg, world, mcts=mcts)
        rows.append(row)
        print(f"{planner}\t{row.collision_rate_mean:.4f} +- {row.collision_rate_std:.4f}\t{row.wall_time:.0f}s", flush=True)
    write_report(rows, args.out)


if __name__ == "__main__":
    main()
