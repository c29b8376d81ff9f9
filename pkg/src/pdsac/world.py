"""Kinematic drone world: a walled room with axis-aligned box obstacles,
a horizontal multi-beam lidar, and a sparse arrive/collide reward.

Dynamics are forward-Euler velocity commands on (x, y, z, yaw); there is no
attitude, drag, or inertia. All geometry is deterministic, so an episode is
a pure function of (config, seed, action sequence).
"""

import importlib.resources
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, LayoutError

ARRIVED = "arrived"
COLLIDED = "collided"
TIMEOUT = "timeout"
RUNNING = "running"

GOAL_SAMPLE_CAP = 10000


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    if np.ndim(w) == 0:
        return math.pi if w == -math.pi else float(w)
    return np.where(w == -math.pi, math.pi, w)


@dataclass(frozen=True)
class Box:
    """Axis-aligned obstacle, center + full size."""

    cx: float
    cy: float
    cz: float
    sx: float
    sy: float
    sz: float

    @property
    def z_lo(self):
        return self.cz - self.sz / 2.0

    @property
    def z_hi(self):
        return self.cz + self.sz / 2.0

    def contains(self, p):
        return (
            abs(p[0] - self.cx) <= self.sx / 2.0
            and abs(p[1] - self.cy) <= self.sy / 2.0
            and self.z_lo <= p[2] <= self.z_hi
        )


@dataclass(frozen=True)
class WorldConfig:
    env_id: int = 1
    layout_version: int = 1
    half_extent: float = 5.0
    start: tuple = (0.0, 0.0, 1.0, 0.0)
    boxes: tuple = ()
    eval_targets: tuple = ()
    # lidar
    n_beams: int = 23
    fov: float = 1.5 * math.pi
    max_range: float = 10.0
    # dynamics
    dt: float = 0.2
    max_steps: int = 500
    v_lin_scale: float = 0.25
    v_yaw_scale: float = 0.1
    v_alt_scale: float = 0.25
    # flight band and reward
    z_min: float = 0.2
    z_max: float = 4.0
    c_d: float = 0.85
    c_o: float = 0.65
    r_arrive: float = 200.0
    r_collide: float = -20.0
    r_idle: float = 0.0
    goal_z_range: tuple = (0.5, 3.5)


def replace_config(cfg, **kw):
    return replace(cfg, **kw)


@dataclass(frozen=True)
class Action:
    """Velocity command in world units (m/s, rad/s, m/s)."""

    v_lin: float
    v_yaw: float
    v_alt: float

    @classmethod
    def from_raw(cls, raw, cfg):
        """Scale a policy output in [-1, 1]^3."""
        return cls(
            v_lin=float(raw[0]) * cfg.v_lin_scale,
            v_yaw=float(raw[1]) * cfg.v_yaw_scale,
            v_alt=float(raw[2]) * cfg.v_alt_scale,
        )


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float


@dataclass
class Observation:
    ranges: np.ndarray
    goal_dist: float
    goal_angle: float
    goal_dz: float

    def vector(self):
        v = np.empty(self.ranges.size + 3, dtype=np.float64)
        v[: self.ranges.size] = self.ranges
        v[-3] = self.goal_dist
        v[-2] = self.goal_angle
        v[-1] = self.goal_dz
        return v


@dataclass
class WorldState:
    pose: Pose
    goal: np.ndarray
    step_count: int


def beam_angles(cfg):
    half = cfg.fov / 2.0
    return np.linspace(-half, half, cfg.n_beams)


def raycast(pose, cfg):
    """Analytic beam distances at the pose's altitude, capped at max_range.

    Walls bound every beam; obstacle boxes count only when their z-span
    contains the beam plane. Ray/slab intersection per box.
    """
    ang = pose.yaw + beam_angles(cfg)
    dx = np.cos(ang)
    dy = np.sin(ang)
    he = cfg.half_extent
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(
            dx > 0.0,
            (he - pose.x) / dx,
            np.where(dx < 0.0, (-he - pose.x) / dx, np.inf),
        )
        ty = np.where(
            dy > 0.0,
            (he - pose.y) / dy,
            np.where(dy < 0.0, (-he - pose.y) / dy, np.inf),
        )
    t = np.minimum(tx, ty)
    active = [b for b in cfg.boxes if b.z_lo <= pose.z <= b.z_hi]
    if active:
        lo = np.array([[b.cx - b.sx / 2.0, b.cy - b.sy / 2.0] for b in active])
        hi = np.array([[b.cx + b.sx / 2.0, b.cy + b.sy / 2.0] for b in active])
        origin = np.array([pose.x, pose.y])
        d = np.stack([dx, dy], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[None, :, :] - origin) / d[:, None, :]
            t2 = (hi[None, :, :] - origin) / d[:, None, :]
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        tnear = tmin.max(axis=2)
        tfar = tmax.min(axis=2)
        hit = (tnear <= tfar) & (tfar > 0.0)
        tbox = np.where(hit, np.maximum(tnear, 0.0), np.inf)
        t = np.minimum(t, tbox.min(axis=1))
    return np.minimum(t, cfg.max_range)


def clearance(x, y, z, cfg):
    """Horizontal distance to the nearest wall or altitude-active obstacle."""
    c = cfg.half_extent - max(abs(x), abs(y))
    for b in cfg.boxes:
        if b.z_lo <= z <= b.z_hi:
            ddx = max(abs(x - b.cx) - b.sx / 2.0, 0.0)
            ddy = max(abs(y - b.cy) - b.sy / 2.0, 0.0)
            c = min(c, math.hypot(ddx, ddy))
    return c


def compute_reward(obs, z, cfg):
    """Sparse reward: arrive > collide > idle, thresholds strict."""
    if obs.goal_dist < cfg.c_d:
        return cfg.r_arrive, ARRIVED
    if float(np.min(obs.ranges)) < cfg.c_o or z < cfg.z_min or z > cfg.z_max:
        return cfg.r_collide, COLLIDED
    return cfg.r_idle, RUNNING


def sample_goal(rng, cfg):
    """Uniform free-space goal, rejecting obstacle interiors and the start
    neighbourhood. Raises after GOAL_SAMPLE_CAP failed draws."""
    start = np.asarray(cfg.start[:3], dtype=np.float64)
    he = cfg.half_extent
    z_lo, z_hi = cfg.goal_z_range
    for _ in range(GOAL_SAMPLE_CAP):
        g = np.array(
            [
                rng.uniform(-he, he),
                rng.uniform(-he, he),
                rng.uniform(z_lo, z_hi),
            ]
        )
        if np.linalg.norm(g - start) < cfg.c_d:
            continue
        if any(b.contains(g) for b in cfg.boxes):
            continue
        return g
    raise ConfigError(
        f"goal sampling exhausted {GOAL_SAMPLE_CAP} draws; region unsatisfiable"
    )


class World:
    """One environment instance. Owns the goal-sampling rng; everything
    else is a pure function of the state."""

    def __init__(self, config, seed):
        x, y, z, _ = config.start
        if not (config.z_min <= z <= config.z_max):
            raise ConfigError(f"start altitude {z} outside flight band")
        if clearance(x, y, z, config) < config.c_o:
            raise ConfigError("start pose is in collision")
        self.config = config
        self._rng = np.random.default_rng(seed)
        self._state = None

    @property
    def state(self):
        return self._state

    def reset(self, goal=None, start=None):
        cfg = self.config
        if start is None:
            start = cfg.start
        if goal is None:
            goal = sample_goal(self._rng, cfg)
        self._state = WorldState(
            pose=Pose(*[float(v) for v in start]),
            goal=np.asarray(goal, dtype=np.float64),
            step_count=0,
        )
        return self._observe()

    def _observe(self):
        s = self._state
        p = s.pose
        ranges = raycast(p, self.config)
        delta = s.goal - np.array([p.x, p.y, p.z])
        return Observation(
            ranges=ranges,
            goal_dist=float(np.linalg.norm(delta)),
            goal_angle=wrap_angle(math.atan2(delta[1], delta[0]) - p.yaw),
            goal_dz=float(delta[2]),
        )

    def step(self, action):
        """Advance one tick: translate along the old yaw, then integrate yaw
        and altitude; returns (obs, reward, done, outcome)."""
        cfg = self.config
        s = self._state
        p = s.pose
        nx = p.x + action.v_lin * math.cos(p.yaw) * cfg.dt
        ny = p.y + action.v_lin * math.sin(p.yaw) * cfg.dt
        nyaw = wrap_angle(p.yaw + action.v_yaw * cfg.dt)
        nz = p.z + action.v_alt * cfg.dt
        s.pose = Pose(nx, ny, nz, nyaw)
        s.step_count += 1
        obs = self._observe()
        reward, outcome = compute_reward(obs, nz, cfg)
        # the lidar has a 90-degree blind cone behind the drone; a backward
        # drift into a wall must still terminate inside the room
        if outcome == RUNNING and clearance(nx, ny, nz, cfg) < cfg.c_o:
            reward, outcome = cfg.r_collide, COLLIDED
        done = outcome != RUNNING
        if not done and s.step_count >= cfg.max_steps:
            done, outcome = True, TIMEOUT
        return obs, reward, done, outcome


# ---- layout loading ----


def load_layouts(path=None):
    if path is None:
        res = importlib.resources.files("pdsac").joinpath("data/layouts.json")
        text = res.read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise LayoutError(f"layout file is not valid json: {e}") from e
    if "layout_version" not in data or "environments" not in data:
        raise LayoutError("layout file missing layout_version/environments")
    return data


def config_from_layout(data, env_id, **overrides):
    envs = data["environments"]
    key = str(env_id)
    if key not in envs:
        raise LayoutError(f"unknown environment id {env_id!r}")
    e = envs[key]
    boxes = tuple(
        Box(*(list(o["center"]) + list(o["size"]))) for o in e["obstacles"]
    )
    targets = tuple(tuple(float(v) for v in t) for t in e["eval_targets"])
    cfg = WorldConfig(
        env_id=int(env_id),
        layout_version=int(data["layout_version"]),
        half_extent=float(e["room"]["half_extent"]),
        start=tuple(float(v) for v in e["start"]),
        boxes=boxes,
        eval_targets=targets,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def make_environment(env_id, seed, layout_path=None, **overrides):
    cfg = config_from_layout(load_layouts(layout_path), env_id, **overrides)
    return World(cfg, seed)
