"""Kinematic dolly-in world: unicycle base, pan/tilt turret, spherical subject."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .imaging import (
    BinaryMask,
    CameraIntrinsics,
    ShotMetrics,
    render_mask,
    shot_metrics,
)

START_POSITIONS = ("left", "right", "centre")

OBS_NAMES = (
    "area",
    "area_error",
    "centroid_x",
    "centroid_x_error",
    "centroid_y",
    "centroid_y_error",
    "pan",
    "tilt",
    "subject_offset",
)
OBS_LOW = np.array([0.0, -1.0, 0.0, -1.0, 0.0, -1.0, -1.0, -1.0, -1.0])
OBS_HIGH = np.ones(9)
ACTION_NAMES = ("throttle", "steering", "pan", "tilt")


class EnvUsageError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class WorldState:
    robot_x: float
    robot_y: float
    robot_heading: float
    pan: float
    tilt: float
    subject_x: float
    subject_y: float
    subject_z: float
    subject_radius: float
    camera_height: float
    t: int = 0


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.05
    max_speed: float = 0.5
    max_turn_rate: float = 1.5
    max_pan_rate: float = 1.0
    max_tilt_rate: float = 1.0
    pan_limit: float = 1.3
    tilt_limit: float = 0.6
    episode_len: int = 1500
    arena_x: Tuple[float, float] = (-3.0, 1.0)
    arena_y: Tuple[float, float] = (-2.0, 2.0)
    goal_x: float = 0.0
    goal_y: float = 0.0
    subject_radius: float = 0.1
    subject_z: float = 0.1
    camera_height: float = 0.2
    # start geometry: robot faces +x from `standoff` metres behind the goal;
    # left/right shift it sideways by `lateral_offset`
    standoff: float = 1.5
    lateral_offset: float = 0.5
    start_jitter: float = 0.2
    min_standoff: float = 0.3
    width_px: int = 120
    height_px: int = 90
    fov_h: float = 1.0
    target_area: float = 0.10
    area_max: float = 0.60
    start_position: str = "mixed"
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")
        if not 0.0 < self.target_area < self.area_max <= 1.0:
            raise ConfigError("need 0 < target_area < area_max <= 1")
        if self.start_position not in START_POSITIONS + ("mixed",):
            raise ConfigError(f"unknown start_position {self.start_position!r}")
        if self.start_jitter < 0 or self.start_jitter >= self.standoff - self.min_standoff:
            raise ConfigError("start_jitter must be in [0, standoff - min_standoff)")
        if self.subject_radius <= 0 or self.min_standoff <= self.subject_radius:
            raise ConfigError("min_standoff must exceed the subject radius")
        # the bumper must keep the visible area inside the reward domain
        cam = self.camera
        r = cam.focal_px * self.subject_radius / self.min_standoff
        if math.pi * r * r + 4 * r > self.area_max * cam.total_pixels:
            raise ConfigError("min_standoff too small: subject could exceed area_max")
        for pos in START_POSITIONS:
            x, y = self.start_xy(pos, 0.0)
            for jit in (-self.start_jitter, self.start_jitter):
                jx = x - jit
                if not (self.arena_x[0] <= jx <= self.arena_x[1] and self.arena_y[0] <= y <= self.arena_y[1]):
                    raise ConfigError(f"start position {pos!r} lies outside the arena")

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.width_px, self.height_px, self.fov_h)

    def start_xy(self, position: str, jitter: float) -> Tuple[float, float]:
        lateral = {"left": -self.lateral_offset, "right": self.lateral_offset, "centre": 0.0}[position]
        return self.goal_x - (self.standoff + jitter), self.goal_y + lateral


@dataclass(frozen=True)
class PerturbationConfig:
    actuation_gain_std: float = 0.1
    observation_noise_std: float = 0.02
    actuation_latency: int = 1
    mask_dropout_prob: float = 0.05
    rng_seed: int = 12345

    def __post_init__(self):
        if self.actuation_gain_std < 0 or self.observation_noise_std < 0:
            raise ConfigError("perturbation stds must be non-negative")
        if self.actuation_latency < 0:
            raise ConfigError("actuation_latency must be non-negative")
        if not 0.0 <= self.mask_dropout_prob < 1.0:
            raise ConfigError("mask_dropout_prob must lie in [0, 1)")

    @classmethod
    def zero(cls, rng_seed: int = 12345) -> "PerturbationConfig":
        return cls(0.0, 0.0, 0, 0.0, rng_seed)


@dataclass(frozen=True)
class ActionVector:
    """Four actuation commands in [-1, 1]; inactive channels are forced to zero."""

    values: Tuple[float, float, float, float]
    active: Tuple[bool, bool, bool, bool] = (True, True, True, True)

    def __post_init__(self):
        vals = tuple(float(v) if a else 0.0 for v, a in zip(self.values, self.active))
        if len(vals) != 4 or len(self.active) != 4:
            raise ValueError("action vectors have exactly four channels")
        if any(not -1.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"action components must lie in [-1, 1]: {vals}")
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def assemble_observation(world: WorldState, metrics: ShotMetrics, cfg: EnvConfig) -> np.ndarray:
    """Observation for a frame where the subject is visible."""
    w, h = cfg.width_px, cfg.height_px
    a = metrics.area_frac
    return np.array([
        a,
        min(max((a - cfg.target_area) / cfg.target_area, -1.0), 1.0),
        metrics.centroid_x / w,
        (metrics.centroid_x - w / 2) / (w / 2),
        metrics.centroid_y / h,
        (metrics.centroid_y - h / 2) / (h / 2),
        world.pan / cfg.pan_limit,
        world.tilt / cfg.tilt_limit,
        min(max(metrics.subject_offset / math.pi, -1.0), 1.0),
    ])


class DollyEnv:
    """Single-threaded episode stepper. ``step`` returns (observation, metrics, done)."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.cam = cfg.camera
        self.world: Optional[WorldState] = None
        self.obs: Optional[np.ndarray] = None
        self.metrics: Optional[ShotMetrics] = None
        self.done = True
        self.start_position: Optional[str] = None

    # -- episode control -------------------------------------------------

    def reset(self, seed: Optional[int] = None, start: Optional[str] = None) -> np.ndarray:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
        drawn = START_POSITIONS[int(rng.integers(3))]
        position = start or cfg.start_position
        if position == "mixed":
            position = drawn
        if position not in START_POSITIONS:
            raise ConfigError(f"unknown start position {position!r}")
        jitter = float(rng.uniform(-cfg.start_jitter, cfg.start_jitter))
        x, y = cfg.start_xy(position, jitter)
        self.start_position = position
        self.world = WorldState(
            robot_x=x,
            robot_y=y,
            robot_heading=0.0,
            pan=0.0,
            tilt=0.0,
            subject_x=cfg.goal_x,
            subject_y=cfg.goal_y,
            subject_z=cfg.subject_z,
            subject_radius=cfg.subject_radius,
            camera_height=cfg.camera_height,
            t=0,
        )
        self.done = False
        self._last_visible = np.array([0.5, 0.0, 0.5, 0.0, 0.0])
        self.metrics = self._measure()
        self.obs = self._observe(self.metrics)
        return self.obs.copy()

    def step(self, action) -> Tuple[np.ndarray, ShotMetrics, bool]:
        if self.world is None:
            raise EnvUsageError("step() called before reset()")
        if self.done:
            raise EnvUsageError("step() called after the episode finished")
        self._integrate(self._actuate(_action_array(action)))
        self.world.t += 1
        self.metrics = self._measure()
        self.obs = self._observe(self.metrics)
        self.done = self.world.t >= self.cfg.episode_len
        return self.obs.copy(), self.metrics, self.done

    # -- internals -------------------------------------------------------

    def _integrate(self, a: np.ndarray) -> None:
        cfg, s = self.cfg, self.world
        v = float(a[0]) * cfg.max_speed
        omega = float(a[1]) * cfg.max_turn_rate
        s.robot_x += v * math.cos(s.robot_heading) * cfg.dt
        s.robot_y += v * math.sin(s.robot_heading) * cfg.dt
        s.robot_heading += omega * cfg.dt
        if abs(s.robot_heading) > math.pi:
            s.robot_heading = math.atan2(math.sin(s.robot_heading), math.cos(s.robot_heading))
        s.pan = min(max(s.pan + float(a[2]) * cfg.max_pan_rate * cfg.dt, -cfg.pan_limit), cfg.pan_limit)
        s.tilt = min(max(s.tilt + float(a[3]) * cfg.max_tilt_rate * cfg.dt, -cfg.tilt_limit), cfg.tilt_limit)
        s.robot_x = min(max(s.robot_x, cfg.arena_x[0]), cfg.arena_x[1])
        s.robot_y = min(max(s.robot_y, cfg.arena_y[0]), cfg.arena_y[1])
        # bumper: the base cannot get closer than min_standoff to the subject
        dx, dy = s.robot_x - s.subject_x, s.robot_y - s.subject_y
        d = math.hypot(dx, dy)
        if d < cfg.min_standoff:
            if d == 0.0:
                dx, dy, d = -1.0, 0.0, 1.0
            s.robot_x = s.subject_x + dx / d * cfg.min_standoff
            s.robot_y = s.subject_y + dy / d * cfg.min_standoff

    def _actuate(self, a: np.ndarray) -> np.ndarray:
        return a

    def _filter_mask(self, mask: BinaryMask) -> BinaryMask:
        return mask

    def _measure(self) -> ShotMetrics:
        mask = self._filter_mask(render_mask(self.world, self.cam))
        return shot_metrics(mask, self.cam, self.world.pan)

    def _observe(self, metrics: ShotMetrics) -> np.ndarray:
        if metrics.subject_visible:
            obs = assemble_observation(self.world, metrics, self.cfg)
            self._last_visible = obs[[2, 3, 4, 5, 8]].copy()
            return obs
        cfg = self.cfg
        sx, ex, sy, ey, so = self._last_visible
        return np.array([
            0.0,
            -1.0,
            sx,
            1.0 if ex >= 0 else -1.0,
            sy,
            1.0 if ey >= 0 else -1.0,
            self.world.pan / cfg.pan_limit,
            self.world.tilt / cfg.tilt_limit,
            so,
        ])


class PerturbedEnv(DollyEnv):
    """Clean simulator plus actuation gain, latency, observation noise and mask dropout."""

    def __init__(self, cfg: EnvConfig, pcfg: PerturbationConfig):
        super().__init__(cfg)
        self.pcfg = pcfg
        self.rng = np.random.default_rng(pcfg.rng_seed)
        self.gain = 1.0
        self._queue: deque = deque()

    def reset(self, seed: Optional[int] = None, start: Optional[str] = None,
              perturb_seed: Optional[int] = None) -> np.ndarray:
        if perturb_seed is not None:
            self.rng = np.random.default_rng(perturb_seed)
        self.gain = 1.0 + self.pcfg.actuation_gain_std * float(self.rng.standard_normal())
        self._queue = deque(np.zeros(4) for _ in range(self.pcfg.actuation_latency))
        return super().reset(seed, start)

    def _actuate(self, a: np.ndarray) -> np.ndarray:
        self._queue.append(a)
        return self._queue.popleft() * self.gain

    def _observe(self, metrics: ShotMetrics) -> np.ndarray:
        obs = super()._observe(metrics)
        noise = self.rng.standard_normal(obs.shape) * self.pcfg.observation_noise_std
        return np.clip(obs + noise, OBS_LOW, OBS_HIGH)

    def _filter_mask(self, mask: BinaryMask) -> BinaryMask:
        keep = self.rng.random(mask.bits.shape) >= self.pcfg.mask_dropout_prob
        return BinaryMask(mask.bits & keep)


def _action_array(action) -> np.ndarray:
    if isinstance(action, ActionVector):
        return action.as_array()
    a = np.asarray(action, dtype=float)
    if a.shape != (4,):
        raise EnvUsageError(f"expected a 4-channel action, got shape {a.shape}")
    if np.any(np.abs(a) > 1.0):
        raise EnvUsageError(f"action components must lie in [-1, 1]: {a}")
    return a


def make_env(cfg: EnvConfig, pcfg: Optional[PerturbationConfig] = None) -> DollyEnv:
    return DollyEnv(cfg) if pcfg is None else PerturbedEnv(cfg, pcfg)

