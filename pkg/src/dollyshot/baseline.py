"""Proportional-derivative baseline mapping shot errors to the four actuation channels.

Channel mapping (fixed):
    a1 throttle <- area error        a_E - A        (too small drives forward)
    a2 steering <- centroid-x error  (x - w/2)/(w/2) (subject right turns right)
    a3 pan      <- centroid-x error
    a4 tilt     <- centroid-y error  (h/2 - y)/(h/2) (subject high tilts up)
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .imaging import ShotMetrics
from .policies import Policy
from .simenv import EnvConfig

log = logging.getLogger(__name__)

CHANNELS = ("throttle", "steering", "pan", "tilt")


@dataclass(frozen=True)
class ChannelGains:
    kp: float
    kd: float = 0.0


@dataclass(frozen=True)
class PDGains:
    # shipped defaults: `dollyshot tune-pd --trials 30 --reward complex` on the clean desk simulator
    throttle: ChannelGains = ChannelGains(62.5, 0.04)
    steering: ChannelGains = ChannelGains(6.25, 0.00125)
    pan: ChannelGains = ChannelGains(0.16, 0.02)
    tilt: ChannelGains = ChannelGains(0.256, 0.01)
    lost_decay: float = 0.9

    def channels(self) -> Tuple[ChannelGains, ...]:
        return (self.throttle, self.steering, self.pan, self.tilt)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PDGains":
        unknown = set(d) - set(CHANNELS) - {"lost_decay"}
        if unknown:
            raise ValueError(f"unknown PD gain keys: {sorted(unknown)}")
        kw = {k: ChannelGains(**v) if isinstance(v, dict) else ChannelGains(*v) for k, v in d.items() if k in CHANNELS}
        if "lost_decay" in d:
            kw["lost_decay"] = float(d["lost_decay"])
        return replace(cls(), **kw)


def pd_step(error: float, prev_error: Optional[float], gains: ChannelGains, dt: float) -> float:
    """clamp(kp*e + kd*de/dt, -1, 1); the derivative term is zero without a previous error."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    deriv = 0.0 if prev_error is None else (error - prev_error) / dt
    return min(max(gains.kp * error + gains.kd * deriv, -1.0), 1.0)


def shot_errors(metrics: ShotMetrics, env_cfg: EnvConfig) -> Tuple[float, float, float, float]:
    w, h = env_cfg.width_px, env_cfg.height_px
    ea = env_cfg.target_area - metrics.area_frac
    ex = (metrics.centroid_x - w / 2) / (w / 2)
    ey = (h / 2 - metrics.centroid_y) / (h / 2)
    return ea, ex, ex, ey


class PDController(Policy):
    """Stateful PD policy. While the subject is lost, the last commands decay geometrically."""

    name = "pd"

    def __init__(self, gains: PDGains, env_cfg: EnvConfig, active: Sequence[bool] = (True, True, True, True)):
        self.gains = gains
        self.env_cfg = env_cfg
        self.active = tuple(bool(a) for a in active)
        self.reset(0)

    def reset(self, seed: int = 0) -> None:
        self.prev_errors: Optional[Tuple[float, ...]] = None
        self.last_command = np.zeros(4)

    def act(self, obs, metrics: ShotMetrics) -> np.ndarray:
        return self.pd_policy(metrics)

    def pd_policy(self, metrics: ShotMetrics) -> np.ndarray:
        if not metrics.subject_visible:
            self.last_command = self.last_command * self.gains.lost_decay
            self.prev_errors = None
            return self.last_command.copy()
        errors = shot_errors(metrics, self.env_cfg)
        prev = self.prev_errors or (None,) * 4
        dt = self.env_cfg.dt
        cmd = np.array([
            pd_step(e, p, g, dt) if on else 0.0
            for e, p, g, on in zip(errors, prev, self.gains.channels(), self.active)
        ])
        self.prev_errors = errors
        self.last_command = cmd
        return cmd.copy()


def coordinate_search(gains: PDGains, score: Callable[[PDGains], float], rounds: int = 6,
                      factors: Sequence[float] = (0.5, 0.8, 1.25, 2.0),
                      kd_seed: float = 0.01, min_gain: float = 0.05) -> Tuple[PDGains, float, list]:
    """Greedy multiplicative search over every kp/kd until a round brings no improvement.

    ``score`` returns a value to maximise (mean evaluation reward).
    """
    best = score(gains)
    history = [(0, "initial", best)]
    for rnd in range(1, rounds + 1):
        improved = False
        for ch in CHANNELS:
            for term in ("kp", "kd"):
                for f in factors:
                    cg = getattr(gains, ch)
                    cur = getattr(cg, term)
                    new = cur * f if cur > 0 else (kd_seed if f > 1 and term == "kd" else 0.0)
                    if term == "kp" and new < min_gain:
                        continue
                    if new == cur:
                        continue
                    cand = replace(gains, **{ch: replace(cg, **{term: new})})
                    s = score(cand)
                    if s > best + 1e-9:
                        gains, best, improved = cand, s, True
                        history.append((rnd, f"{ch}.{term}={new:.6g}", s))
                        log.info("round %d: %s.%s -> %.6g, score %.4f", rnd, ch, term, new, s)
        if not improved:
            break
    return gains, best, history
