"""Action selection: cross-entropy method, receding-horizon MPC and UCT search.

Planners talk to a dynamics oracle, any callable
``oracle(states (B, 3, 4), actions) -> (next_states (B, 3, 4), rewards (B,))``
where ``actions`` is ``(B, 2)`` accelerations (continuous) or ``(B,)``
indices (discrete).  Rewards follow the environment convention: -1 per ego
collision step, so planners maximise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .gnn import GnnModel
from .sim import ACTION_BOUND, N_DISCRETE_ACTIONS, ContinuousAction, DiscreteAction, WorldConfig, discrete_accels, step_arrays


class DynamicsOracle(Protocol):
    def __call__(self, states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class SimOracle:
    """Ground-truth oracle: a clone of the simulator."""

    def __init__(self, cfg: WorldConfig, mode: str = "continuous"):
        self.cfg = cfg
        self.mode = mode

    def __call__(self, states, actions):
        actions = np.asarray(actions)
        if self.mode == "discrete":
            accels = discrete_accels(actions.astype(np.int64).reshape(-1), self.cfg)
        else:
            accels = actions.reshape(-1, 2)
        nxt, rewards, _, _ = step_arrays(states, accels, self.cfg)
        return nxt, rewards


class ModelOracle:
    """Learned oracle backed by the graph network."""

    def __init__(self, model: GnnModel):
        self.model = model
        self.mode = model.cfg.mode

    def __call__(self, states, actions):
        return self.model.forward(states, actions)


@dataclass(frozen=True)
class CemConfig:
    plan_horizon: int = 15
    n_samples: int = 64
    n_elites: int = 6
    n_iters: int = 5
    init_std: float = 1.0
    min_std: float = 0.05
    action_low: float = -ACTION_BOUND
    action_high: float = ACTION_BOUND
    warm_start: bool = True

    def __post_init__(self):
        if not 1 <= self.n_elites <= self.n_samples:
            raise ValueError("need 1 <= n_elites <= n_samples")
        if self.n_iters < 1 or self.plan_horizon < 1:
            raise ValueError("n_iters and plan_horizon must be >= 1")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be < action_high")
        if self.init_std <= 0 or self.min_std < 0:
            raise ValueError("init_std must be > 0 and min_std >= 0")


@dataclass(frozen=True)
class MctsConfig:
    n_simulations: int = 100
    max_depth: int = 10
    uct_c: float = 1.4
    discount: float = 0.95
    n_actions: int = N_DISCRETE_ACTIONS

    def __post_init__(self):
        if self.max_depth < 1 or self.n_simulations < 1:
            raise ValueError("max_depth and n_simulations must be >= 1")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")
        if not 1 <= self.n_actions <= N_DISCRETE_ACTIONS:
            raise ValueError(f"n_actions must be in 1..{N_DISCRETE_ACTIONS}")


# --- CEM -----------------------------------------------------------------------


@dataclass
class CemResult:
    best_seq: np.ndarray  # (H, 2)
    best_value: float
    mean: np.ndarray  # final sampling mean, (H, 2)
    std: np.ndarray
    history: list[float] = field(default_factory=list)  # best-ever value after each iteration
    nan_count: int = 0


def per_sequence(f: Callable[[np.ndarray], float]):
    """Lift a single-sequence objective ``(H, 2) -> float`` to a batched one."""

    def batched(seqs):
        return np.array([f(s) for s in seqs], dtype=np.float64)

    return batched


def cem_optimize(objective, cfg: CemConfig, seed: int, init_mean: np.ndarray | None = None) -> CemResult:
    """Maximise a batched objective ``(N, H, 2) -> (N,)`` over the action box.

    The clamped current mean is evaluated alongside the N samples each
    iteration.  The Gaussian is refit to the raw (pre-clamp) elites and the
    mean is kept inside the box.
    """
    rng = np.random.default_rng(seed)
    lo, hi = cfg.action_low, cfg.action_high
    shape = (cfg.plan_horizon, 2)
    mean = np.zeros(shape) if init_mean is None else np.clip(np.asarray(init_mean, dtype=np.float64), lo, hi)
    if mean.shape != shape:
        raise ValueError(f"init_mean must have shape {shape}, got {mean.shape}")
    std = np.full(shape, cfg.init_std)
    best_seq, best_value = np.clip(mean, lo, hi), -math.inf
    history: list[float] = []
    nan_count = 0
    for _ in range(cfg.n_iters):
        raw = np.concatenate([mean[None], mean + std * rng.standard_normal((cfg.n_samples,) + shape)])
        cand = np.clip(raw, lo, hi)
        values = np.asarray(objective(cand), dtype=np.float64).reshape(-1)
        bad = np.isnan(values)
        if bad.any():
            nan_count += int(bad.sum())
            values = np.where(bad, -math.inf, values)
        top = int(np.argmax(values))
        if values[top] > best_value:
            best_value, best_seq = float(values[top]), cand[top].copy()
        history.append(best_value)
        elites = raw[np.argsort(-values, kind="stable")[: cfg.n_elites]]
        mean = np.clip(elites.mean(axis=0), lo, hi)
        std = np.maximum(elites.std(axis=0), cfg.min_std)
    return CemResult(best_seq, best_value, mean, std, history, nan_count)


def rollout_return(oracle: DynamicsOracle, state: np.ndarray, seqs: np.ndarray) -> np.ndarray:
    """Sum of oracle rewards along each action sequence, all starting at ``state``."""
    seqs = np.asarray(seqs)
    s = np.repeat(np.asarray(state, dtype=np.float64)[None], seqs.shape[0], axis=0)
    total = np.zeros(seqs.shape[0])
    for t in range(seqs.shape[1]):
        s, r = oracle(s, seqs[:, t])
        total += r
    return total


def mpc_plan(oracle: DynamicsOracle, state, cfg: CemConfig, seed: int, prev_plan: np.ndarray | None = None):
    """One receding-horizon decision.

    Returns ``(action, plan)``: the first action of the best sequence found,
    and that sequence, which the caller may pass back as ``prev_plan``.
    """
    init_mean = None
    if cfg.warm_start and prev_plan is not None:
        init_mean = np.concatenate([np.asarray(prev_plan)[1:], np.zeros((1, 2))])
    res = cem_optimize(lambda seqs: rollout_return(oracle, state, seqs), cfg, seed, init_mean)
    ax, ay = res.best_seq[0]
    return ContinuousAction(ax, ay), res.best_seq


# --- MCTS ----------------------------------------------------------------------


class _Node:
    __slots__ = ("state", "reward", "depth", "children", "visits", "value_sum")

    def __init__(self, state, reward, depth, n_actions):
        self.state = state
        self.reward = reward  # reward on the edge into this node
        self.depth = depth
        self.children: list[_Node | None] = [None] * n_actions
        self.visits = 0
        self.value_sum = 0.0


@dataclass
class MctsStats:
    visits: np.ndarray  # root child visit counts
    q: np.ndarray  # root child mean returns (nan if unvisited)


def mcts_plan(oracle: DynamicsOracle, state, cfg: MctsConfig, seed: int):
    """UCT search over discrete actions.

    Children are expanded in index order, rollouts use uniformly random
    actions down to ``max_depth`` and returns are discounted.  The root
    action with the most visits wins, ties going to the lower index.
    Returns ``(action, stats)``.
    """
    rng = np.random.default_rng(seed)
    nA, gamma, c = cfg.n_actions, cfg.discount, cfg.uct_c
    root = _Node(np.asarray(state, dtype=np.float64), 0.0, 0, nA)

    def transition(s, a):
        nxt, r = oracle(s[None], np.array([a]))
        return nxt[0], float(r[0])

    for _ in range(cfg.n_simulations):
        node, path = root, [root]
        while node.depth < cfg.max_depth:
            untried = next((a for a in range(nA) if node.children[a] is None), None)
            if untried is not None:
                s, r = transition(node.state, untried)
                child = _Node(s, r, node.depth + 1, nA)
                node.children[untried] = child
                path.append(child)
                node = child
                break
            log_n = math.log(node.visits)
            best, best_score = 0, -math.inf
            for a, ch in enumerate(node.children):
                score = ch.value_sum / ch.visits + c * math.sqrt(log_n / ch.visits)
                if score > best_score:
                    best, best_score = a, score
            node = node.children[best]
            path.append(node)

        ret, disc, s = 0.0, 1.0, node.state
        for _ in range(node.depth, cfg.max_depth):
            s, r = transition(s, int(rng.integers(nA)))
            ret += disc * r
            disc *= gamma
        for nd in reversed(path[1:]):
            ret = nd.reward + gamma * ret
            nd.visits += 1
            nd.value_sum += ret
        root.visits += 1

    visits = np.array([0 if ch is None else ch.visits for ch in root.children])
    q = np.array([np.nan if ch is None or ch.visits == 0 else ch.value_sum / ch.visits for ch in root.children])
    return DiscreteAction(int(np.argmax(visits))), MctsStats(visits, q)
