"""Random-policy trajectory datasets and their binary on-disk format.

Layout (little-endian)::

    header   magic "BILLARD1", mode u8, n_episodes u32, episode_len u32,
             n_balls u32, state_dim u32, has_frames u8,
             world config (L f64, r f64, m f64, dt f64, substeps u32,
             n_balls u32, accel f64, max_speed f64, force_mode u8),
             seed u64
    episode  states   T*3*4 f32
             actions  T u8 (discrete) | T*2 f32 (continuous)
             rewards  T f32
             dones    T u8
             frames   T*32*32 u8 (only when has_frames)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .seeding import episode_seed
from .sim import (
    ACTION_BOUND,
    GRID_SIZE,
    N_DISCRETE_ACTIONS,
    ContinuousAction,
    DiscreteAction,
    WorldConfig,
    discrete_accels,
    init_world,
    render_frame,
    step_arrays,
)

MAGIC = b"BILLARD1"
MODES = ("discrete", "continuous")
N_BALLS = 3
STATE_DIM = 4

_HEADER = struct.Struct("<8sBIIIIB")
_WORLD = struct.Struct("<ddddIIddB")
_SEED = struct.Struct("<Q")
HEADER_SIZE = _HEADER.size + _WORLD.size + _SEED.size


class DatasetError(Exception):
    pass


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


@dataclass
class EpisodeRecord:
    states: np.ndarray  # (T, 3, 4) float32
    actions: np.ndarray  # (T,) uint8 or (T, 2) float32
    rewards: np.ndarray  # (T,) float32
    dones: np.ndarray  # (T,) bool
    frames: np.ndarray | None = None  # (T, 32, 32) uint8

    def action(self, t: int):
        if self.actions.ndim == 1:
            return DiscreteAction(int(self.actions[t]))
        ax, ay = self.actions[t]
        return ContinuousAction(float(ax), float(ay))


@dataclass
class Dataset:
    """Episodes stacked along a leading axis."""

    mode: str
    world: WorldConfig
    seed: int
    states: np.ndarray  # (N, T, 3, 4) float32
    actions: np.ndarray  # (N, T) uint8 | (N, T, 2) float32
    rewards: np.ndarray  # (N, T) float32
    dones: np.ndarray  # (N, T) bool
    frames: np.ndarray | None = None  # (N, T, 32, 32) uint8

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def episode_len(self) -> int:
        return self.states.shape[1]

    def episode(self, i: int) -> EpisodeRecord:
        return EpisodeRecord(
            self.states[i],
            self.actions[i],
            self.rewards[i],
            self.dones[i],
            None if self.frames is None else self.frames[i],
        )

    def mean_episode_reward(self) -> float:
        return float(self.rewards.astype(np.float64).sum(axis=1).mean())

    def accels(self) -> np.ndarray:
        """Ego accelerations for every stored action, ``(N, T, 2)`` float64."""
        if self.mode == "discrete":
            return discrete_accels(self.actions.astype(np.int64), self.world)
        return self.actions.astype(np.float64)

    def transitions(self, episodes=None):
        """One-step tuples ``(s, a, s_next, r)`` from the chosen episodes, float64."""
        idx = np.arange(self.n_episodes) if episodes is None else np.asarray(episodes)
        s = self.states[idx, :-1].astype(np.float64)
        s_next = self.states[idx, 1:].astype(np.float64)
        a = self.actions[idx, :-1]
        r = self.rewards[idx, :-1].astype(np.float64)
        a = a.reshape((-1,) + a.shape[2:])
        return s.reshape(-1, N_BALLS, STATE_DIM), a, s_next.reshape(-1, N_BALLS, STATE_DIM), r.reshape(-1)


def generate_dataset(
    cfg: WorldConfig,
    mode: str,
    n_episodes: int,
    episode_len: int,
    seed: int,
    with_frames: bool = False,
) -> Dataset:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if episode_len < 2:
        raise ValueError("episode_len must be >= 2")
    if cfg.n_balls != N_BALLS:
        raise ValueError(f"datasets require n_balls = {N_BALLS}")

    T = episode_len
    seeds = [episode_seed(seed, e) for e in range(n_episodes)]
    world = np.stack([init_world(cfg, s).to_array() for s in seeds])
    if mode == "discrete":
        actions = np.stack(
            [np.random.default_rng([s, 1]).integers(0, N_DISCRETE_ACTIONS, T) for s in seeds]
        ).astype(np.uint8)
        accels = discrete_accels(actions.astype(np.int64), cfg)
    else:
        actions = np.stack(
            [np.random.default_rng([s, 1]).uniform(-ACTION_BOUND, ACTION_BOUND, (T, 2)) for s in seeds]
        ).astype(np.float32)
        accels = actions.astype(np.float64)

    # episodes are independent rows of one batch; the kernels are elementwise
    states = np.empty((n_episodes, T, N_BALLS, STATE_DIM), dtype=np.float32)
    rewards = np.empty((n_episodes, T), dtype=np.float32)
    for t in range(T):
        states[:, t] = world
        world, r, _, _ = step_arrays(world, accels[:, t], cfg)
        rewards[:, t] = r
    dones = np.zeros((n_episodes, T), dtype=bool)
    dones[:, -1] = True

    frames = None
    if with_frames:
        frames = np.empty((n_episodes, T, GRID_SIZE, GRID_SIZE), dtype=np.uint8)
        for e in range(n_episodes):
            for t in range(T):
                frames[e, t] = render_frame(states[e, t].astype(np.float64), cfg)
    return Dataset(mode, cfg, int(seed), states, actions, rewards, dones, frames)


def replay_error(ds: Dataset, episodes=None) -> float:
    """Max absolute deviation between stored states and a fresh re-simulation.

    Each episode restarts from its stored first state and replays the stored
    actions; episodes are stepped together as one batch.
    """
    idx = np.arange(ds.n_episodes) if episodes is None else np.asarray(episodes)
    accels = ds.accels()[idx]
    stored = ds.states[idx].astype(np.float64)
    world = stored[:, 0]
    worst = 0.0
    for t in range(ds.episode_len - 1):
        world, _, _, _ = step_arrays(world, accels[:, t], ds.world)
        worst = max(worst, float(np.abs(world - stored[:, t + 1]).max()))
    return worst


# --- serialisation -----------------------------------------------------------


def _episode_bytes(ds: Dataset) -> int:
    T = ds.episode_len
    per = T * N_BALLS * STATE_DIM * 4 + T * 4 + T
    per += T if ds.mode == "discrete" else T * 8
    if ds.frames is not None:
        per += T * GRID_SIZE * GRID_SIZE
    return per


def encode_dataset(ds: Dataset) -> bytes:
    w = ds.world
    parts = [
        _HEADER.pack(
            MAGIC,
            MODES.index(ds.mode),
            ds.n_episodes,
            ds.episode_len,
            N_BALLS,
            STATE_DIM,
            int(ds.frames is not None),
        ),
        _WORLD.pack(
            w.arena_side, w.ball_radius, w.ball_mass, w.dt, w.substeps, w.n_balls,
            w.accel_magnitude, w.max_speed, int(w.force_mode),
        ),
        _SEED.pack(ds.seed),
    ]
    act_dtype = "<u1" if ds.mode == "discrete" else "<f4"
    for e in range(ds.n_episodes):
        parts.append(ds.states[e].astype("<f4").tobytes())
        parts.append(ds.actions[e].astype(act_dtype).tobytes())
        parts.append(ds.rewards[e].astype("<f4").tobytes())
        parts.append(ds.dones[e].astype("<u1").tobytes())
        if ds.frames is not None:
            parts.append(ds.frames[e].astype("<u1").tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes) -> Dataset:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:8]!r}, expected {MAGIC!r}")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFileError(f"header needs {HEADER_SIZE} bytes, file has {len(buf)}")
    _, mode_id, n_ep, T, n_balls, state_dim, has_frames = _HEADER.unpack_from(buf, 0)
    if n_balls != N_BALLS or state_dim != STATE_DIM:
        raise DimensionMismatchError(
            f"header dims n_balls={n_balls}, state_dim={state_dim}; expected {N_BALLS}, {STATE_DIM}"
        )
    if mode_id >= len(MODES):
        raise DatasetError(f"unknown mode id {mode_id}")
    L, r, m, dt, sub, nb, acc, vmax, force = _WORLD.unpack_from(buf, _HEADER.size)
    world = WorldConfig(L, r, m, dt, sub, nb, acc, vmax, bool(force))
    if world.n_balls != N_BALLS:
        raise DimensionMismatchError(f"embedded world config has n_balls={world.n_balls}")
    (seed,) = _SEED.unpack_from(buf, _HEADER.size + _WORLD.size)
    mode = MODES[mode_id]

    states = np.empty((n_ep, T, N_BALLS, STATE_DIM), dtype=np.float32)
    actions = np.empty((n_ep, T) if mode == "discrete" else (n_ep, T, 2), dtype=np.uint8 if mode == "discrete" else np.float32)
    rewards = np.empty((n_ep, T), dtype=np.float32)
    dones = np.empty((n_ep, T), dtype=bool)
    frames = np.empty((n_ep, T, GRID_SIZE, GRID_SIZE), dtype=np.uint8) if has_frames else None
    tmp = Dataset(mode, world, seed, states, actions, rewards, dones, frames)
    expected = HEADER_SIZE + n_ep * _episode_bytes(tmp)
    if len(buf) < expected:
        full = (len(buf) - HEADER_SIZE) // _episode_bytes(tmp)
        raise TruncatedFileError(
            f"header declares {n_ep} episodes ({expected} bytes) but file has {len(buf)} bytes "
            f"({full} complete episodes)"
        )
    if len(buf) > expected:
        raise DatasetError(f"{len(buf) - expected} trailing bytes after {n_ep} episodes")

    off = HEADER_SIZE

    def take(dtype, shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
        off += count * np.dtype(dtype).itemsize
        return arr

    for e in range(n_ep):
        states[e] = take("<f4", (T, N_BALLS, STATE_DIM))
        actions[e] = take("<u1", (T,)) if mode == "discrete" else take("<f4", (T, 2))
        rewards[e] = take("<f4", (T,))
        dones[e] = take("<u1", (T,)).astype(bool)
        if has_frames:
            frames[e] = take("<u1", (T, GRID_SIZE, GRID_SIZE))
    return tmp


def metadata_text(ds: Dataset) -> str:
    lines = [
        f"mode={ds.mode}",
        f"n_episodes={ds.n_episodes}",
        f"episode_len={ds.episode_len}",
        f"seed={ds.seed}",
        f"has_frames={ds.frames is not None}",
        f"mean_episode_reward={ds.mean_episode_reward():.6f}",
        f"config_hash={ds.world.digest()}",
    ]
    lines += [f"world.{f.name}={getattr(ds.world, f.name)!r}" for f in fields(ds.world)]
    return "\n".join(lines) + "\n"


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_dataset(ds: Dataset, path) -> None:
    atomic_write_bytes(path, encode_dataset(ds))
    atomic_write_text(metadata_path(path), metadata_text(ds))


def read_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())
