"""2-D billiards physics and the ball-avoidance environment.

All physics runs on arrays of shape ``(..., n_balls, 4)`` holding
``(x, y, vx, vy)`` per ball, so a single world and a batch of candidate
worlds (as used by the planners) go through exactly the same arithmetic.
The dataclass types below are thin value wrappers for the scalar API.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

N_DISCRETE_ACTIONS = 9
ACTION_BOUND = 2.0
GRID_SIZE = 32
MAX_RESET_ATTEMPTS = 10_000

_DIAG = math.sqrt(0.5)
# index 0 is rest, then E, NE, N, NW, W, SW, S, SE
_COMPASS = np.array(
    [
        [0.0, 0.0],
        [1.0, 0.0],
        [_DIAG, _DIAG],
        [0.0, 1.0],
        [-_DIAG, _DIAG],
        [-1.0, 0.0],
        [-_DIAG, -_DIAG],
        [0.0, -1.0],
        [_DIAG, -_DIAG],
    ]
)


class InvalidConfigError(ValueError):
    pass


class InvalidActionError(ValueError):
    pass


class CorruptStateError(ValueError):
    pass


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True)
class BallState:
    pos: Vec2
    vel: Vec2

    def as_row(self) -> np.ndarray:
        return np.array([self.pos.x, self.pos.y, self.vel.x, self.vel.y])

    @classmethod
    def from_row(cls, row) -> "BallState":
        return cls(Vec2(float(row[0]), float(row[1])), Vec2(float(row[2]), float(row[3])))


@dataclass(frozen=True)
class WorldConfig:
    arena_side: float = 10.0
    ball_radius: float = 1.0
    ball_mass: float = 2.0
    dt: float = 0.5
    substeps: int = 5
    n_balls: int = 3
    accel_magnitude: float = 1.5
    max_speed: float = 6.0
    force_mode: bool = False

    def __post_init__(self):
        if not self.arena_side > 4 * self.ball_radius:
            raise InvalidConfigError(
                f"arena_side {self.arena_side} must exceed 4 * ball_radius ({4 * self.ball_radius})"
            )
        if self.ball_radius <= 0 or self.ball_mass <= 0:
            raise InvalidConfigError("ball_radius and ball_mass must be positive")
        if not self.dt > 0:
            raise InvalidConfigError("dt must be positive")
        if self.substeps < 1:
            raise InvalidConfigError("substeps must be >= 1")
        if self.n_balls < 1:
            raise InvalidConfigError("n_balls must be >= 1")
        if self.max_speed <= 0:
            raise InvalidConfigError("max_speed must be positive")

    def digest(self) -> str:
        """Short stable hash used to cross-check datasets, checkpoints and runs."""
        text = "\n".join(f"{k}={v!r}" for k, v in asdict(self).items())
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def lo(self) -> float:
        return self.ball_radius

    @property
    def hi(self) -> float:
        return self.arena_side - self.ball_radius


@dataclass(frozen=True)
class WorldState:
    """Ball 0 is the ego (red) ball."""

    balls: tuple[BallState, ...]
    t: int = 0

    def to_array(self) -> np.ndarray:
        return np.stack([b.as_row() for b in self.balls])

    @classmethod
    def from_array(cls, arr, t: int = 0) -> "WorldState":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(tuple(BallState.from_row(row) for row in arr), t)


@dataclass(frozen=True)
class DiscreteAction:
    index: int

    def __post_init__(self):
        if not 0 <= int(self.index) < N_DISCRETE_ACTIONS:
            raise InvalidActionError(f"discrete action index {self.index} not in 0..8")
        object.__setattr__(self, "index", int(self.index))


@dataclass(frozen=True)
class ContinuousAction:
    ax: float
    ay: float

    def __post_init__(self):
        # clamp on construction
        object.__setattr__(self, "ax", float(np.clip(self.ax, -ACTION_BOUND, ACTION_BOUND)))
        object.__setattr__(self, "ay", float(np.clip(self.ay, -ACTION_BOUND, ACTION_BOUND)))

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay])


Action = DiscreteAction | ContinuousAction


@dataclass(frozen=True)
class StepResult:
    next: WorldState
    reward: float
    ego_collided: bool
    degenerate_contacts: int = field(default=0, compare=False)


def _round_f32(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def init_world(cfg: WorldConfig, seed: int) -> WorldState:
    """Sample a non-overlapping start configuration.

    Positions and velocities are rounded to float32-representable values so
    that a dataset stored in 32-bit floats holds the exact start state.
    """
    rng = np.random.default_rng(seed)
    n, r = cfg.n_balls, cfg.ball_radius
    for _ in range(MAX_RESET_ATTEMPTS):
        pos = _round_f32(rng.uniform(cfg.lo, cfg.hi, size=(n, 2)))
        pos = np.clip(pos, cfg.lo, cfg.hi)
        ok = True
        for i in range(n):
            for j in range(i + 1, n):
                if math.hypot(*(pos[i] - pos[j])) <= 2 * r:
                    ok = False
        if ok:
            vel = _round_f32(rng.uniform(-1.0, 1.0, size=(n, 2)))
            return WorldState.from_array(np.concatenate([pos, vel], axis=1), t=0)
    raise InvalidConfigError(
        f"could not place {n} balls of radius {r} in arena {cfg.arena_side} "
        f"after {MAX_RESET_ATTEMPTS} attempts"
    )


def discrete_to_accel(index: int, cfg: WorldConfig) -> Vec2:
    if not 0 <= index < N_DISCRETE_ACTIONS:
        raise InvalidActionError(f"discrete action index {index} not in 0..8")
    ax, ay = _COMPASS[index] * cfg.accel_magnitude
    return Vec2(float(ax), float(ay))


def discrete_accels(indices, cfg: WorldConfig) -> np.ndarray:
    """Vectorised ``discrete_to_accel``: ``(...,)`` ints to ``(..., 2)``."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= N_DISCRETE_ACTIONS):
        raise InvalidActionError("discrete action index out of range 0..8")
    return _COMPASS[indices] * cfg.accel_magnitude


def action_to_accel(action: Action, cfg: WorldConfig) -> np.ndarray:
    if isinstance(action, DiscreteAction):
        return _COMPASS[action.index] * cfg.accel_magnitude
    if isinstance(action, ContinuousAction):
        return action.as_array()
    raise InvalidActionError(f"unsupported action {action!r}")


# --- array kernels -----------------------------------------------------------


def _wall(pos: np.ndarray, vel: np.ndarray, lo: float, hi: float) -> None:
    """In-place mirror reflection at the arena walls."""
    below = pos < lo
    above = pos > hi
    pos[below] = 2 * lo - pos[below]
    vel[below] = np.abs(vel[below])
    pos[above] = 2 * hi - pos[above]
    vel[above] = -np.abs(vel[above])


def _pair_collide(pos, vel, i, j, r, mi, mj, contact_log=None, touching=False):
    """Resolve contacts between balls i and j for every batch element in place.

    Returns (overlap mask, degenerate mask).  When ``contact_log`` is a list,
    ``(i, j, vel_before, vel_after)`` is appended for each resolved impulse,
    velocities shaped ``(k, 2, 2)``.  ``touching`` also resolves pairs at
    exactly ``2r``.
    """
    dx = pos[..., j, 0] - pos[..., i, 0]
    dy = pos[..., j, 1] - pos[..., i, 1]
    dist = np.sqrt(dx * dx + dy * dy)
    overlap = (dist <= 2 * r) if touching else (dist < 2 * r)
    if not overlap.any():
        return overlap, np.zeros_like(overlap)
    degenerate = overlap & (dist == 0.0)
    safe = np.where(dist > 0.0, dist, 1.0)
    nx = np.where(degenerate, 1.0, dx / safe)
    ny = np.where(degenerate, 0.0, dy / safe)

    # approaching when relative normal velocity (j relative to i) is negative
    vn = (vel[..., j, 0] - vel[..., i, 0]) * nx + (vel[..., j, 1] - vel[..., i, 1]) * ny
    approaching = overlap & (vn < 0)
    msum = mi + mj
    if contact_log is not None and approaching.any():
        before = vel[..., [i, j], :][approaching].copy()
    ci = np.where(approaching, 2 * mj / msum * vn, 0.0)
    cj = np.where(approaching, 2 * mi / msum * vn, 0.0)
    vel[..., i, 0] += ci * nx
    vel[..., i, 1] += ci * ny
    vel[..., j, 0] -= cj * nx
    vel[..., j, 1] -= cj * ny
    if contact_log is not None and approaching.any():
        contact_log.append((i, j, before, vel[..., [i, j], :][approaching].copy()))

    depth = np.where(overlap, 2 * r - dist, 0.0)
    si = depth * (mj / msum)
    sj = depth * (mi / msum)
    pos[..., i, 0] -= si * nx
    pos[..., i, 1] -= si * ny
    pos[..., j, 0] += sj * nx
    pos[..., j, 1] += sj * ny
    return overlap, degenerate


def _clamp_speed(vel: np.ndarray, vmax: float) -> None:
    speed = np.sqrt(vel[..., 0] ** 2 + vel[..., 1] ** 2)
    fast = speed > vmax
    if fast.any():
        scale = np.where(fast, vmax / np.where(fast, speed, 1.0), 1.0)
        vel *= scale[..., None]


def step_arrays(states: np.ndarray, accels: np.ndarray, cfg: WorldConfig, contact_log=None):
    """Advance a batch of worlds by one environment step.

    states: ``(B, n, 4)`` float64; accels: ``(B, 2)`` ego accelerations.
    Returns ``(next_states, rewards, ego_collided, n_degenerate)``.
    """
    states = np.asarray(states, dtype=np.float64)
    accels = np.asarray(accels, dtype=np.float64)
    if not (np.isfinite(states).all() and np.isfinite(accels).all()):
        raise CorruptStateError("non-finite value in state or action")
    out = states.copy()
    pos = out[..., :2]
    vel = out[..., 2:]
    n = out.shape[-2]
    r, m = cfg.ball_radius, cfg.ball_mass
    h = cfg.dt / cfg.substeps
    a = accels / m if cfg.force_mode else accels
    collided = np.zeros(out.shape[:-2], dtype=bool)
    n_degenerate = 0
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for _ in range(cfg.substeps):
        vel[..., 0, :] += a * h
        _clamp_speed(vel, cfg.max_speed)
        pos += vel * h
        _wall(pos, vel, cfg.lo, cfg.hi)
        for i, j in pairs:
            overlap, degenerate = _pair_collide(pos, vel, i, j, r, m, m, contact_log)
            if i == 0:
                collided |= overlap
            n_degenerate += int(degenerate.sum())
        # separation can push a ball past a wall; project back without touching velocity
        np.clip(pos, cfg.lo, cfg.hi, out=pos)
        _clamp_speed(vel, cfg.max_speed)
    rewards = np.where(collided, -1.0, 0.0)
    return out, rewards, collided, n_degenerate


# --- scalar API --------------------------------------------------------------


def resolve_ball_collision(bi: BallState, bj: BallState, mi: float, mj: float, radius: float = 1.0):
    """Elastic frictionless impulse between two touching balls.

    Returns ``(bi', bj', degenerate)`` where ``degenerate`` flags coincident
    centres (the fallback normal (1, 0) was used).
    """
    arr = np.stack([bi.as_row(), bj.as_row()])[None]
    pos, vel = arr[..., :2], arr[..., 2:]
    _, degenerate = _pair_collide(pos, vel, 0, 1, radius, mi, mj, touching=True)
    return BallState.from_row(arr[0, 0]), BallState.from_row(arr[0, 1]), bool(degenerate[0])


def resolve_wall(b: BallState, cfg: WorldConfig) -> BallState:
    row = b.as_row()
    pos, vel = row[:2], row[2:]
    _wall(pos, vel, cfg.lo, cfg.hi)
    return BallState.from_row(row)


def step(world: WorldState, action: Action, cfg: WorldConfig) -> StepResult:
    accel = action_to_accel(action, cfg)
    nxt, rewards, collided, n_deg = step_arrays(world.to_array()[None], accel[None], cfg)
    return StepResult(
        next=WorldState.from_array(nxt[0], t=world.t + 1),
        reward=float(rewards[0]),
        ego_collided=bool(collided[0]),
        degenerate_contacts=n_deg,
    )


def render_frame(world: WorldState | np.ndarray, cfg: WorldConfig) -> np.ndarray:
    """Rasterise to a 32x32 uint8 grid, row 0 at the top (max y).

    Ball k is drawn with intensity ``255 - 40 k``; the ego is drawn last.
    """
    arr = world.to_array() if isinstance(world, WorldState) else np.asarray(world, dtype=np.float64)
    cell = cfg.arena_side / GRID_SIZE
    centers = (np.arange(GRID_SIZE) + 0.5) * cell
    px = centers[None, :]
    py = centers[::-1][:, None]
    grid = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.uint8)
    r2 = cfg.ball_radius ** 2
    for k in list(range(1, arr.shape[0])) + [0]:
        x, y = arr[k, 0], arr[k, 1]
        inside = (px - x) ** 2 + (py - y) ** 2 <= r2
        grid[inside] = 255 - 40 * k
    return grid


def mirror_x(states: np.ndarray, cfg: WorldConfig) -> np.ndarray:
    """Reflect states about the arena's vertical axis."""
    out = np.array(states, dtype=np.float64, copy=True)
    out[..., 0] = cfg.arena_side - out[..., 0]
    out[..., 2] = -out[..., 2]
    return out


def with_balls(cfg: WorldConfig, n_balls: int) -> WorldConfig:
    return replace(cfg, n_balls=n_balls)


class AvoidanceEnv:
    """Stateful wrapper used by evaluation loops: ``reset`` / ``step``."""

    def __init__(self, cfg: WorldConfig, mode: str = "continuous"):
        if mode not in ("discrete", "continuous"):
            raise InvalidConfigError(f"unknown action mode {mode!r}")
        self.cfg = cfg
        self.mode = mode
        self.world: WorldState | None = None

    def reset(self, seed: int) -> WorldState:
        self.world = init_world(self.cfg, seed)
        return self.world

    def step(self, action: Action) -> StepResult:
        if self.world is None:
            raise RuntimeError("reset() must be called before step()")
        if self.mode == "discrete" and not isinstance(action, DiscreteAction):
            raise InvalidActionError("discrete environment expects DiscreteAction")
        if self.mode == "continuous" and not isinstance(action, ContinuousAction):
            raise InvalidActionError("continuous environment expects ContinuousAction")
        res = step(self.world, action, self.cfg)
        self.world = res.next
        return res
