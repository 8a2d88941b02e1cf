"""Random-policy mean episode reward for both action modes.

    python3 scripts/table1.py --episodes 1000 --length 100 --seed 42
"""

import argparse
import time

from gnn_mbrl.datagen import generate_dataset
from gnn_mbrl.sim import WorldConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()

    world = WorldConfig()
    print("mode\taction_space\tepisodes\tlength\tmean_episode_reward\tseconds")
    for mode, n_actions in (("discrete", 9), ("continuous", 2)):
        t0 = time.perf_counter()
        ds = generate_dataset(world, mode, args.episodes, args.length, args.seed)
        print(f"{mode}\t{n_actions}\t{args.episodes}\t{args.length}\t{ds.mean_episode_reward():.3f}\t{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
