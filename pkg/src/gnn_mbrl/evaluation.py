"""Planner-vs-baseline evaluation and collision-rate reports.

Evaluation counts collisions positively (+1 per ego-collision step), the
reverse of the training reward.  Every planner sees the same per-episode
environment seeds, so rate differences come from the planner alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .gnn import CheckpointError, ConfigError, GnnModel, load_model
from .planners import CemConfig, MctsConfig, ModelOracle, SimOracle, mcts_plan, mpc_plan
from .seeding import derive, episode_seed
from .sim import ACTION_BOUND, N_DISCRETE_ACTIONS, AvoidanceEnv, ContinuousAction, DiscreteAction, WorldConfig

ENV_VARIANTS = {"m=1": 1.0, "m=2": 2.0}
PLANNERS = ("gnn_mpc", "random", "ground_truth_mpc", "mcts", "stove_style_random")
ALIASES = {"ground_truth": "ground_truth_mpc"}
LEARNED = ("gnn_mpc", "mcts")
DISCRETE = ("mcts", "stove_style_random")
SUMMARY_HEADER = "env,planner,episodes,steps,rate_mean,rate_std,wall_time"


@dataclass(frozen=True)
class EvalConfig:
    env_variant: str = "m=2"
    planner: str = "random"
    episodes: int = 20
    steps_per_episode: int = 50
    model_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "planner", ALIASES.get(self.planner, self.planner))
        if self.env_variant not in ENV_VARIANTS:
            raise ConfigError(f"env_variant must be one of {sorted(ENV_VARIANTS)}")
        if self.planner not in PLANNERS:
            raise ConfigError(f"planner must be one of {PLANNERS}")
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ConfigError("episodes and steps_per_episode must be >= 1")
        if (self.planner in LEARNED) != (self.model_path is not None):
            need = "requires" if self.planner in LEARNED else "does not take"
            raise ConfigError(f"planner {self.planner!r} {need} a model checkpoint")

    @property
    def mode(self) -> str:
        return "discrete" if self.planner in DISCRETE else "continuous"


@dataclass
class EvalRow:
    env: str
    planner: str
    episodes: int
    steps: int
    collision_rate_mean: float
    collision_rate_std: float
    wall_time: float
    episode_rates: list[float] = field(default_factory=list, repr=False)


def env_world(base: WorldConfig, variant: str) -> WorldConfig:
    return replace(base, ball_mass=ENV_VARIANTS[variant])


def run_episode(env: AvoidanceEnv, policy, steps: int, seed: int):
    """Roll one episode; ``policy(state_array, t) -> Action``.

    Returns ``(collisions, per_step_rewards)`` with +1 per collision step.
    """
    world = env.reset(seed)
    rewards = np.zeros(steps)
    for t in range(steps):
        res = env.step(policy(world.to_array(), t))
        world = res.next
        rewards[t] = 1.0 if res.ego_collided else 0.0
    return int(rewards.sum()), rewards


def random_policy(mode: str, seed: int):
    rng = np.random.default_rng([seed, 2])
    if mode == "discrete":
        return lambda state, t: DiscreteAction(int(rng.integers(N_DISCRETE_ACTIONS)))
    return lambda state, t: ContinuousAction(*rng.uniform(-ACTION_BOUND, ACTION_BOUND, 2))


def mpc_policy(oracle, cem: CemConfig, seed: int):
    plan = None

    def act(state, t):
        nonlocal plan
        action, plan = mpc_plan(oracle, state, cem, derive(seed, 3, t), prev_plan=plan)
        return action

    return act


def mcts_policy(oracle, mcts: MctsConfig, seed: int):
    return lambda state, t: mcts_plan(oracle, state, mcts, derive(seed, 4, t))[0]


def _load_checked_model(cfg: EvalConfig, world: WorldConfig) -> GnnModel:
    try:
        model = load_model(cfg.model_path)
    except (OSError, CheckpointError) as exc:
        raise ConfigError(f"cannot load checkpoint {cfg.model_path}: {exc}") from exc
    if model.cfg.mode != cfg.mode:
        raise ConfigError(f"checkpoint is a {model.cfg.mode} model; planner {cfg.planner!r} needs {cfg.mode}")
    if model.world_hash and model.world_hash != world.digest():
        raise ConfigError(
            f"checkpoint was trained on world config {model.world_hash}, "
            f"evaluation env {cfg.env_variant} is {world.digest()}"
        )
    return model


def make_policy_factory(cfg: EvalConfig, world: WorldConfig, cem: CemConfig, mcts: MctsConfig):
    """Validate everything up front and return ``seed -> policy``."""
    if cfg.planner in ("random", "stove_style_random"):
        return lambda seed: random_policy(cfg.mode, seed)
    if cfg.planner == "ground_truth_mpc":
        oracle = SimOracle(world, "continuous")
        return lambda seed: mpc_policy(oracle, cem, seed)
    model = _load_checked_model(cfg, world)
    oracle = ModelOracle(model)
    if cfg.planner == "gnn_mpc":
        return lambda seed: mpc_policy(oracle, cem, seed)
    return lambda seed: mcts_policy(oracle, mcts, seed)


def evaluate_suite(
    cfg: EvalConfig,
    world: WorldConfig | None = None,
    cem: CemConfig | None = None,
    mcts: MctsConfig | None = None,
    clock=time.perf_counter,
    log=None,
) -> EvalRow:
    world = env_world(world or WorldConfig(), cfg.env_variant)
    factory = make_policy_factory(cfg, world, cem or CemConfig(), mcts or MctsConfig())
    env = AvoidanceEnv(world, cfg.mode)
    t0 = clock() if clock else 0.0
    rates, total = [], 0
    for e in range(cfg.episodes):
        seed = episode_seed(cfg.seed, e)
        collisions, _ = run_episode(env, factory(seed), cfg.steps_per_episode, seed)
        total += collisions
        rates.append(collisions / cfg.steps_per_episode)
        if log:
            log(f"{cfg.planner} episode {e + 1}/{cfg.episodes} rate {rates[-1]:.4f}")
    arr = np.array(rates)
    return EvalRow(
        env=cfg.env_variant,
        planner=cfg.planner,
        episodes=cfg.episodes,
        steps=cfg.steps_per_episode,
        collision_rate_mean=total / (cfg.episodes * cfg.steps_per_episode),
        collision_rate_std=float(arr.std()),
        wall_time=(clock() - t0) if clock else 0.0,
        episode_rates=rates,
    )


def episodes_filename(row: EvalRow) -> str:
    return f"{row.env.replace('=', '')}_{row.planner}_episodes.csv"


def summary_csv(rows: list[EvalRow]) -> str:
    lines = [SUMMARY_HEADER]
    for r in rows:
        lines.append(
            f"{r.env},{r.planner},{r.episodes},{r.steps},"
            f"{r.collision_rate_mean:.6f},{r.collision_rate_std:.6f},{r.wall_time:.3f}"
        )
    return "\n".join(lines) + "\n"


def episodes_csv(row: EvalRow) -> str:
    return "\n".join(["episode,rate"] + [f"{i},{x:.6f}" for i, x in enumerate(row.episode_rates)]) + "\n"


def write_report(rows: list[EvalRow], out_dir) -> list[Path]:
    """Write ``summary.csv`` plus one per-episode CSV per row; returns the paths."""
    if not rows:
        raise ValueError("write_report needs at least one row")
    out_dir = Path(out_dir)
    written = []
    try:
        path = out_dir / "summary.csv"
        atomic_write_text(path, summary_csv(rows))
        written.append(path)
        for row in rows:
            path = out_dir / episodes_filename(row)
            atomic_write_text(path, episodes_csv(row))
            written.append(path)
    except OSError as exc:
        raise OSError(f"failed writing report to {path}: {exc}") from exc
    return written
