"""Message-passing dynamics and reward model over the 3-ball object graph.

Every node carries ``[x, y, vx, vy, ego_flag]`` (normalised) with the action
appended to the ego node.  Messages run over the six directed edges of the
complete graph, are summed at the receiver, and an update MLP predicts a
per-ball state delta.  The reward head reads the ego's last update-trunk
activation.  Forward and backward passes are written out by hand in NumPy
and batched over a leading axis.
"""

from __future__ import annotations

import struct
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .sim import ACTION_BOUND, N_DISCRETE_ACTIONS, WorldConfig

N_NODES = 3
STATE_DIM = 4
N_LAYERS = 3  # two tanh hidden layers + linear output
RECV = np.array([0, 0, 1, 1, 2, 2])
SEND = np.array([1, 2, 0, 2, 0, 1])
CKPT_MAGIC = b"GNNCKPT1"
METRICS_HEADER = "step,time,error,v_error,reward_mse,type"


class ConfigError(ValueError):
    pass


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class GnnConfig:
    hidden_dim: int = 64
    action_dim: int = 2
    pos_scale: float = 10.0
    vel_scale: float = 6.0
    reward_loss_weight: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    rollout_steps: int = 10
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.action_dim not in (2, N_DISCRETE_ACTIONS):
            raise ConfigError(f"action_dim must be 2 or {N_DISCRETE_ACTIONS}")
        if self.pos_scale <= 0 or self.vel_scale <= 0:
            raise ConfigError("scales must be positive")
        if self.reward_loss_weight < 0:
            raise ConfigError("reward_loss_weight must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.rollout_steps < 1:
            raise ConfigError("batch_size >= 1, epochs >= 0, rollout_steps >= 1 required")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must be in [0, 1)")

    @property
    def mode(self) -> str:
        return "continuous" if self.action_dim == 2 else "discrete"

    @classmethod
    def for_world(cls, world: WorldConfig, mode: str = "continuous", **kw) -> "GnnConfig":
        action_dim = 2 if mode == "continuous" else N_DISCRETE_ACTIONS
        kw.setdefault("pos_scale", world.arena_side)
        kw.setdefault("vel_scale", world.max_speed)
        return cls(action_dim=action_dim, **kw)


def _mlp_dims(cfg: GnnConfig) -> dict[str, tuple[int, int]]:
    h = cfg.hidden_dim
    return {
        "node": (STATE_DIM + 1 + cfg.action_dim, h),
        "edge": (2 * h + 3, h),
        "update": (2 * h, STATE_DIM),
        "reward": (h, 1),
    }


def param_shapes(cfg: GnnConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes."""
    h = cfg.hidden_dim
    shapes = {}
    for name, (d_in, d_out) in _mlp_dims(cfg).items():
        sizes = [d_in, h, h, d_out]
        for k in range(N_LAYERS):
            shapes[f"{name}.W{k}"] = (sizes[k], sizes[k + 1])
            shapes[f"{name}.b{k}"] = (sizes[k + 1],)
    return shapes


def init_params(cfg: GnnConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _mlp_fwd(params, prefix, x):
    """Returns output and the per-layer activations needed for backprop."""
    lead = x.shape[:-1]
    acts = [x.reshape(-1, x.shape[-1])]
    for k in range(N_LAYERS):
        z = acts[-1] @ params[f"{prefix}.W{k}"] + params[f"{prefix}.b{k}"]
        acts.append(np.tanh(z) if k < N_LAYERS - 1 else z)
    acts = [a.reshape(lead + a.shape[-1:]) for a in acts]
    return acts[-1], acts


def _mlp_bwd(params, prefix, acts, dout, grads):
    """Accumulates parameter grads into ``grads`` and returns d(input)."""
    d = dout
    for k in reversed(range(N_LAYERS)):
        if k < N_LAYERS - 1:
            d = d * (1.0 - acts[k + 1] ** 2)
        a_in = acts[k]
        grads[f"{prefix}.W{k}"] += a_in.reshape(-1, a_in.shape[-1]).T @ d.reshape(-1, d.shape[-1])
        grads[f"{prefix}.b{k}"] += d.reshape(-1, d.shape[-1]).sum(axis=0)
        d = (d.reshape(-1, d.shape[-1]) @ params[f"{prefix}.W{k}"].T).reshape(a_in.shape)
    return d


class GnnModel:
    def __init__(self, cfg: GnnConfig, params: dict[str, np.ndarray] | None = None, world_hash: str = ""):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params
        self.world_hash = world_hash
        self._scale = np.array([cfg.pos_scale, cfg.pos_scale, cfg.vel_scale, cfg.vel_scale])

    def copy(self) -> "GnnModel":
        return GnnModel(self.cfg, {k: v.copy() for k, v in self.params.items()}, self.world_hash)

    # -- normalisation --------------------------------------------------

    def normalize(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=np.float64) / self._scale

    def denormalize(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=np.float64) * self._scale

    def encode_actions(self, actions) -> np.ndarray:
        """Continuous ``(B, 2)`` accelerations or discrete ``(B,)`` indices."""
        actions = np.asarray(actions)
        if self.cfg.action_dim == 2:
            return actions.astype(np.float64).reshape(-1, 2) / ACTION_BOUND
        idx = actions.astype(np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= N_DISCRETE_ACTIONS):
            raise ValueError("discrete action index out of range")
        return np.eye(N_DISCRETE_ACTIONS)[idx]

    # -- forward --------------------------------------------------------

    def _forward(self, states, actions):
        p = self.params
        states = np.asarray(states, dtype=np.float64)
        x = states / self._scale
        B = x.shape[0]
        a = self.encode_actions(actions)
        extra = np.zeros((B, N_NODES, 1 + self.cfg.action_dim))
        extra[:, 0, 0] = 1.0
        extra[:, 0, 1:] = a
        feats = np.concatenate([x, extra], axis=-1)
        h, node_acts = _mlp_fwd(p, "node", feats)

        dpos = x[:, SEND, :2] - x[:, RECV, :2]
        dist = np.sqrt((dpos**2).sum(axis=-1, keepdims=True))
        e_in = np.concatenate([h[:, RECV], h[:, SEND], dpos, dist], axis=-1)
        msg, edge_acts = _mlp_fwd(p, "edge", e_in)
        agg = msg.reshape(B, N_NODES, N_NODES - 1, -1).sum(axis=2)

        u_in = np.concatenate([h, agg], axis=-1)
        delta, upd_acts = _mlp_fwd(p, "update", u_in)
        ego_emb = upd_acts[N_LAYERS - 1][:, 0]
        r_hat, rew_acts = _mlp_fwd(p, "reward", ego_emb)
        cache = (node_acts, edge_acts, upd_acts, rew_acts)
        return states, delta, r_hat[:, 0], cache

    def forward(self, states, actions):
        """Batched one-step prediction.

        ``states``: ``(B, 3, 4)`` raw; returns ``(next_states (B, 3, 4), rewards (B,))``.
        """
        states, delta, r_hat, _ = self._forward(states, actions)
        # non-finite parameters always surface as non-finite outputs
        if not (np.isfinite(delta).all() and np.isfinite(r_hat).all()):
            raise FloatingPointError("non-finite model output (corrupt parameters or inputs)")
        return states + delta * self._scale, r_hat

    def predict(self, state, action):
        """Single ``(3, 4)`` state and one action."""
        nxt, r = self.forward(np.asarray(state)[None], np.asarray(action)[None])
        return nxt[0], float(r[0])

    def rollout(self, state, actions):
        """Iterate the model along an action sequence.

        ``state`` is ``(3, 4)`` or ``(B, 3, 4)``; ``actions`` is ``(H, ...)``
        or ``(B, H, ...)`` correspondingly.  Returns ``(states, rewards)`` of
        shape ``(..., H, 3, 4)`` and ``(..., H)``.
        """
        state = np.asarray(state, dtype=np.float64)
        actions = np.asarray(actions)
        single = state.ndim == 2
        if single:
            state, actions = state[None], actions[None]
        H = actions.shape[1]
        if H < 1:
            raise ValueError("rollout horizon must be >= 1")
        out_s = np.empty((state.shape[0], H, N_NODES, STATE_DIM))
        out_r = np.empty((state.shape[0], H))
        s = state
        for t in range(H):
            s, r = self.forward(s, actions[:, t])
            out_s[:, t], out_r[:, t] = s, r
        if single:
            return out_s[0], out_r[0]
        return out_s, out_r

    # -- loss and gradients ----------------------------------------------

    def loss_terms(self, states, actions, next_states, rewards):
        """Per-term batch means ``(position_mse, velocity_mse, reward_mse)`` in normalised space."""
        states, delta, r_hat, _ = self._forward(states, actions)
        target = (np.asarray(next_states, dtype=np.float64) - states) / self._scale
        err = delta - target
        pos = float((err[..., :2] ** 2).mean())
        vel = float((err[..., 2:] ** 2).mean())
        rew = float(((r_hat - np.asarray(rewards, dtype=np.float64)) ** 2).mean())
        return pos, vel, rew

    def loss(self, states, actions, next_states, rewards) -> float:
        pos, vel, rew = self.loss_terms(states, actions, next_states, rewards)
        return pos + vel + self.cfg.reward_loss_weight * rew

    def loss_and_grad(self, states, actions, next_states, rewards):
        """Returns ``(loss, (pos, vel, rew), grads)`` with exact reverse-mode gradients."""
        p = self.params
        lam = self.cfg.reward_loss_weight
        states, delta, r_hat, cache = self._forward(states, actions)
        node_acts, edge_acts, upd_acts, rew_acts = cache
        B = states.shape[0]
        h_dim = self.cfg.hidden_dim
        target = (np.asarray(next_states, dtype=np.float64) - states) / self._scale
        err = delta - target
        r_err = r_hat - np.asarray(rewards, dtype=np.float64)
        pos = float((err[..., :2] ** 2).mean())
        vel = float((err[..., 2:] ** 2).mean())
        rew = float((r_err**2).mean())
        total = pos + vel + lam * rew

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        # each MSE term averages over B * 3 * 2 entries
        d_delta = 2.0 * err / (B * N_NODES * 2)
        d_rhat = (2.0 * lam * r_err / B)[:, None]

        d_ego = _mlp_bwd(p, "reward", rew_acts, d_rhat, grads)
        # update MLP: inject the reward head's gradient at the trunk output
        d = d_delta
        for k in reversed(range(N_LAYERS)):
            if k < N_LAYERS - 1:
                d = d * (1.0 - upd_acts[k + 1] ** 2)
            a_in = upd_acts[k]
            grads[f"update.W{k}"] += a_in.reshape(-1, a_in.shape[-1]).T @ d.reshape(-1, d.shape[-1])
            grads[f"update.b{k}"] += d.reshape(-1, d.shape[-1]).sum(axis=0)
            d = (d.reshape(-1, d.shape[-1]) @ p[f"update.W{k}"].T).reshape(a_in.shape)
            if k == N_LAYERS - 1:
                d[:, 0] += d_ego
        d_u_in = d
        d_h = d_u_in[..., :h_dim].copy()
        d_agg = d_u_in[..., h_dim:]

        d_msg = np.repeat(d_agg, N_NODES - 1, axis=1)
        d_e_in = _mlp_bwd(p, "edge", edge_acts, d_msg, grads)
        for e in range(len(RECV)):
            d_h[:, RECV[e]] += d_e_in[:, e, :h_dim]
            d_h[:, SEND[e]] += d_e_in[:, e, h_dim : 2 * h_dim]
        _mlp_bwd(p, "node", node_acts, d_h, grads)
        return total, (pos, vel, rew), grads


# --- training ------------------------------------------------------------------


@dataclass
class TrainMetricsRow:
    step: int
    time: float
    error: float
    v_error: float
    reward_mse: float
    type: str

    def csv_line(self) -> str:
        return f"{self.step},{self.time:.3f},{self.error:.10g},{self.v_error:.10g},{self.reward_mse:.10g},{self.type}"


def metrics_csv(rows: list[TrainMetricsRow]) -> str:
    return "\n".join([METRICS_HEADER] + [r.csv_line() for r in rows]) + "\n"


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def split_episodes(n_episodes: int, holdout_fraction: float):
    """Trailing episodes are held out; at least one stays for training."""
    n_hold = int(round(n_episodes * holdout_fraction))
    n_hold = min(n_hold, n_episodes - 1)
    return np.arange(n_episodes - n_hold), np.arange(n_episodes - n_hold, n_episodes)


def _dataset_actions(ds, idx):
    a = ds.actions[idx]
    return a.astype(np.int64) if ds.mode == "discrete" else a.astype(np.float64)


def rollout_errors(model: GnnModel, ds, episodes, k: int):
    """Mean normalised position/velocity/reward errors of k-step open-loop rollouts.

    One rollout per held-out episode, starting at its first state.
    """
    episodes = np.asarray(episodes)
    if episodes.size == 0:
        return None
    k = min(k, ds.episode_len - 1)
    s0 = ds.states[episodes, 0].astype(np.float64)
    acts = _dataset_actions(ds, episodes)[:, :k]
    pred_s, pred_r = model.rollout(s0, acts)
    true_s = ds.states[episodes, 1 : k + 1].astype(np.float64)
    err = (pred_s - true_s) / model._scale
    r_err = pred_r - ds.rewards[episodes, :k].astype(np.float64)
    return float((err[..., :2] ** 2).mean()), float((err[..., 2:] ** 2).mean()), float((r_err**2).mean())


def rollout_speed_ratio(model: GnnModel, ds, episodes, k: int):
    """Mean predicted ball speed over mean true speed along k-step rollouts (1.0 = unbiased)."""
    episodes = np.asarray(episodes)
    if episodes.size == 0:
        return None
    k = min(k, ds.episode_len - 1)
    pred_s, _ = model.rollout(ds.states[episodes, 0].astype(np.float64), _dataset_actions(ds, episodes)[:, :k])
    true_s = ds.states[episodes, 1 : k + 1].astype(np.float64)
    speed = lambda x: np.sqrt((x[..., 2:] ** 2).sum(axis=-1)).mean()
    return float(speed(pred_s) / max(speed(true_s), 1e-12))


def one_step_errors(model: GnnModel, ds, episodes=None):
    """Held-out one-step ``(model_pos_mse, zero_delta_pos_mse)`` in normalised space."""
    s, a, s_next, _ = ds.transitions(episodes)
    a = a.astype(np.int64) if ds.mode == "discrete" else a
    pred, _ = model.forward(s, a)
    scale = model._scale[:2]
    model_mse = float((((pred - s_next)[..., :2] / scale) ** 2).mean())
    zero_mse = float((((s - s_next)[..., :2] / scale) ** 2).mean())
    return model_mse, zero_mse


def train(ds, cfg: GnnConfig, clock=time.perf_counter, log=None):
    """Fit the model on one-step transitions with Adam.

    One ``train`` row (mean minibatch terms over the epoch) and, when a
    hold-out slice exists, one ``rollout`` row are logged per epoch.
    ``clock=None`` records ``time`` as 0 for byte-reproducible CSVs.
    """
    if ds.mode != cfg.mode:
        raise ConfigError(f"dataset mode {ds.mode!r} does not match action_dim={cfg.action_dim}")
    model = GnnModel(cfg, world_hash=ds.world.digest())
    rows: list[TrainMetricsRow] = []
    if cfg.epochs == 0:
        return model, rows
    train_eps, hold_eps = split_episodes(ds.n_episodes, cfg.holdout_fraction)
    s, a, s_next, r = ds.transitions(train_eps)
    a = a.astype(np.int64) if ds.mode == "discrete" else a.astype(np.float64)
    n = s.shape[0]
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params, lr=cfg.learning_rate)
    t0 = clock() if clock else 0.0
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _, terms, grads = model.loss_and_grad(s[idx], a[idx], s_next[idx], r[idx])
            opt.step(model.params, grads)
            sums += np.array(terms) * len(idx)
            step += 1
        elapsed = (clock() - t0) if clock else 0.0
        rows.append(TrainMetricsRow(step, elapsed, *(sums / n), "train"))
        roll = rollout_errors(model, ds, hold_eps, cfg.rollout_steps)
        if roll is not None:
            rows.append(TrainMetricsRow(step, elapsed, *roll, "rollout"))
        if log:
            msg = f"epoch {epoch + 1}/{cfg.epochs} " + " ".join(f"{x:.5g}" for x in sums / n)
            ratio = rollout_speed_ratio(model, ds, hold_eps, cfg.rollout_steps)
            log(msg if ratio is None else f"{msg} speed_ratio {ratio:.3f}")
    return model, rows


# --- checkpoints ---------------------------------------------------------------


def _config_block(model: GnnModel) -> bytes:
    lines = [f"{k}={v!r}" for k, v in asdict(model.cfg).items()]
    lines.append(f"world_hash={model.world_hash!r}")
    return "\n".join(lines).encode()


def save_model(model: GnnModel, path) -> None:
    block = _config_block(model)
    parts = [CKPT_MAGIC, struct.pack("<I", len(block)), block, struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def _parse_config_block(text: str):
    types = {f.name: f.type for f in fields(GnnConfig)}
    kw, world_hash = {}, ""
    for line in text.splitlines():
        key, _, raw = line.partition("=")
        if key == "world_hash":
            world_hash = raw.strip("'")
        elif key in types:
            kw[key] = float(raw) if types[key] in ("float", float) else int(raw)
        else:
            raise CheckpointError(f"unknown config key {key!r} in checkpoint")
    return GnnConfig(**kw), world_hash


def load_model(path) -> GnnModel:
    buf = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"truncated checkpoint {path}: need {off + n} bytes, have {len(buf)}")
        chunk = buf[off : off + n]
        off += n
        return chunk

    if take(8) != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    (blen,) = struct.unpack("<I", take(4))
    try:
        cfg, world_hash = _parse_config_block(take(blen).decode())
    except (ValueError, ConfigError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    expected = param_shapes(cfg)
    (n_layers,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(n_layers):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        if name not in expected:
            raise CheckpointError(f"unexpected layer {name!r}")
        if tuple(shape) != expected[name]:
            raise CheckpointError(f"layer {name!r} has shape {shape}, config implies {expected[name]}")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"missing layers {sorted(missing)}")
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes in checkpoint")
    return GnnModel(cfg, {k: params[k] for k in expected}, world_hash)
