"""Per-step shot rewards. Every component is <= 0 and reaches 0 exactly on target."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .imaging import DeltaParams, ShotMetrics, delta_metric

REWARD_KINDS = ("area_original", "position", "combined", "complex")
COMPONENTS = ("area_original", "area_scaled", "position", "object_offset", "smoothness")


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.5
    w2: float = 0.5
    w3: float = 0.0
    k: float = 0.05
    a_E: float = 0.10
    a_max: float = 0.60
    x_E: float = 60.0
    y_E: float = 45.0
    frame_width: float = 120.0
    theta_max: float = 1.8
    smooth_coeff: float = 0.1
    smooth_threshold: float = 0.2
    # fidelity switch: use the printed signed upper branch of the scaled area reward
    signed_upper: bool = False

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.smooth_coeff) < 0:
            raise ValueError("weights must be non-negative")
        if not 0.0 < self.k < self.a_E < self.a_max:
            raise ValueError("need 0 < k < a_E < a_max")
        if self.theta_max <= 0:
            raise ValueError("theta_max must be positive")
        if not 0.0 < self.x_E < self.frame_width:
            raise ValueError("x_E must lie inside the frame")

    @classmethod
    def for_env(cls, env_cfg, kind: str = "combined", **overrides) -> "RewardWeights":
        """Defaults tied to an EnvConfig: targets, frame size and offset saturation."""
        base = dict(
            k=env_cfg.target_area / 2,
            a_E=env_cfg.target_area,
            a_max=env_cfg.area_max,
            x_E=env_cfg.width_px / 2,
            y_E=env_cfg.height_px / 2,
            frame_width=float(env_cfg.width_px),
            theta_max=env_cfg.fov_h / 2 + env_cfg.pan_limit,
        )
        if kind == "complex":
            base.update(w1=0.4, w2=0.4, w3=0.2)
        base.update(overrides)
        return cls(**base)


def r_area_original(area: float, wts: RewardWeights) -> float:
    return -abs(delta_metric(area, DeltaParams(wts.a_E, wts.a_max)))


def r_position(centroid_x: Optional[float], wts: RewardWeights, frame_width: Optional[float] = None) -> float:
    if centroid_x is None:
        return -1.0
    width = wts.frame_width if frame_width is None else frame_width
    return -abs(delta_metric(centroid_x, DeltaParams(wts.x_E, width)))


def r_area_scaled(area: float, wts: RewardWeights) -> float:
    if not 0.0 <= area <= wts.a_max:
        raise ValueError(f"area {area} outside [0, {wts.a_max}]")
    if area <= wts.k:
        return -0.5 + (abs(area - wts.k) / wts.k) * -0.5
    if wts.signed_upper:
        return (area - wts.a_E) / wts.a_E * 0.5
    return -(abs(area - wts.a_E) / wts.a_E) * 0.5


def area_scaled_discontinuity(wts: RewardWeights) -> float:
    """Size of the designed jump in the scaled area reward at the threshold k."""
    return abs(-0.5 - (-abs(wts.k - wts.a_E) / wts.a_E * 0.5))


def r_combined(metrics: ShotMetrics, wts: RewardWeights) -> float:
    return wts.w1 * r_area_scaled(metrics.area_frac, wts) + wts.w2 * r_position(metrics.centroid_x, wts)


def r_object_offset(theta: Optional[float], wts: RewardWeights) -> float:
    if theta is None:
        return -1.0
    return -min(abs(theta) / wts.theta_max, 1.0)


def smoothness_penalty(curr, prev, wts: RewardWeights) -> float:
    # inactive channels are zero in both vectors, so they never contribute
    excess = np.abs(np.asarray(curr, dtype=float) - np.asarray(prev, dtype=float)) - wts.smooth_threshold
    return -wts.smooth_coeff * float(np.sum(np.maximum(excess, 0.0)))


def r_complex(metrics: ShotMetrics, theta: Optional[float], curr, prev,
              wts: RewardWeights) -> Tuple[float, Dict[str, float]]:
    parts = {
        "area_scaled": r_area_scaled(metrics.area_frac, wts),
        "position": r_position(metrics.centroid_x, wts),
        "object_offset": r_object_offset(theta, wts),
        "smoothness": smoothness_penalty(curr, prev, wts),
    }
    total = (wts.w1 * parts["area_scaled"] + wts.w2 * parts["position"]
             + wts.w3 * parts["object_offset"] + parts["smoothness"])
    return total, parts


def step_reward(kind: str, metrics: ShotMetrics, curr, prev,
                wts: RewardWeights) -> Tuple[float, Dict[str, float]]:
    """Reward of the given kind plus every component (and raw signed deltas) for logging."""
    parts = {
        "area_original": r_area_original(metrics.area_frac, wts),
        "area_scaled": r_area_scaled(metrics.area_frac, wts),
        "position": r_position(metrics.centroid_x, wts),
        "object_offset": r_object_offset(metrics.subject_offset, wts),
        "smoothness": smoothness_penalty(curr, prev, wts),
        "delta_area": delta_metric(metrics.area_frac, DeltaParams(wts.a_E, wts.a_max)),
        "delta_position": (delta_metric(metrics.centroid_x, DeltaParams(wts.x_E, wts.frame_width))
                           if metrics.centroid_x is not None else float("nan")),
    }
    if kind == "area_original":
        total = parts["area_original"]
    elif kind == "position":
        total = parts["position"]
    elif kind == "combined":
        total = wts.w1 * parts["area_scaled"] + wts.w2 * parts["position"]
    elif kind == "complex":
        total = (wts.w1 * parts["area_scaled"] + wts.w2 * parts["position"]
                 + wts.w3 * parts["object_offset"] + parts["smoothness"])
    else:
        raise ValueError(f"unknown reward kind {kind!r}")
    return total, parts
