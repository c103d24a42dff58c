"""Policies that drive a DollyEnv, and the episode rollout shared by training and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .imaging import ShotMetrics
from .rewards import COMPONENTS, RewardWeights, step_reward
from .simenv import DollyEnv, PerturbedEnv

TRACE_COLUMNS = (
    ("t", "a1", "a2", "a3", "a4")
    + tuple(f"s{i}" for i in range(1, 10))
    + ("reward",)
    + COMPONENTS
    + ("delta_area", "delta_position")
)


class Policy:
    """Maps the current observation (and shot metrics) to a 4-channel action."""

    name = "policy"

    def reset(self, seed: int) -> None:
        pass

    def act(self, obs: np.ndarray, metrics: ShotMetrics) -> np.ndarray:
        raise NotImplementedError


class ZeroPolicy(Policy):
    name = "zero"

    def act(self, obs, metrics):
        return np.zeros(4)


class RandomPolicy(Policy):
    """Uniform actions on the active channels; reseeded every episode."""

    name = "random"

    def __init__(self, active: Sequence[bool] = (True, True, True, True)):
        self.active = np.array(active, dtype=bool)
        self.rng = np.random.default_rng(0)

    def reset(self, seed):
        self.rng = np.random.default_rng([seed, 0x5EED])

    def act(self, obs, metrics):
        return np.where(self.active, self.rng.uniform(-1.0, 1.0, size=4), 0.0)


class AgentPolicy(Policy):
    """Deterministic actor(s); several agents merge their action channels."""

    def __init__(self, agents, name: Optional[str] = None):
        self.agents = list(agents) if isinstance(agents, (list, tuple)) else [agents]
        self.name = name or "+".join(a.cfg.kind for a in self.agents)

    def act(self, obs, metrics):
        full = np.zeros(4)
        for agent in self.agents:
            agent.cfg.expand(agent.select_action(agent.cfg.project(obs), explore=False), into=full)
        return full


@dataclass
class EpisodeStats:
    start: str
    seed: int
    cumulative_reward: float
    mean_area: float
    mean_centroid_x: float
    mean_centroid_y: float
    final_area: float
    final_centroid_x: float
    final_centroid_y: float
    steps: int
    component_sums: dict = field(default_factory=dict)
    trace: Optional[List[tuple]] = None


def rollout(env: DollyEnv, policy: Policy, reward_kind: str, wts: RewardWeights, seed: int,
            start: Optional[str] = None, perturb_seed: Optional[int] = None,
            record: bool = False) -> EpisodeStats:
    """Run one full episode.

    Centroids of lost frames hold their last visible value; frames before the
    subject is first seen have no centroid and are left out of the centroid
    means (which are NaN if the subject is never seen).
    """
    if isinstance(env, PerturbedEnv):
        obs = env.reset(seed, start, perturb_seed=perturb_seed)
    else:
        obs = env.reset(seed, start)
    policy.reset(seed)
    metrics = env.metrics
    cx, cy = metrics.centroid_x, metrics.centroid_y
    prev = np.zeros(4)
    total = 0.0
    sums = dict.fromkeys(COMPONENTS, 0.0)
    area_sum = cx_sum = cy_sum = 0.0
    n_centroid = 0
    trace = [] if record else None
    done = False
    while not done:
        action = np.clip(np.asarray(policy.act(obs, metrics), dtype=float), -1.0, 1.0)
        obs, metrics, done = env.step(action)
        r, parts = step_reward(reward_kind, metrics, action, prev, wts)
        total += r
        for k in COMPONENTS:
            sums[k] += parts[k]
        if metrics.subject_visible:
            cx, cy = metrics.centroid_x, metrics.centroid_y
        area_sum += metrics.area_frac
        if cx is not None:
            cx_sum += cx
            cy_sum += cy
            n_centroid += 1
        if record:
            trace.append((env.world.t, *action, *obs, r, *(parts[k] for k in COMPONENTS),
                          parts["delta_area"], parts["delta_position"]))
        prev = action
    n = env.world.t
    return EpisodeStats(
        start=env.start_position,
        seed=seed,
        cumulative_reward=total,
        mean_area=area_sum / n,
        mean_centroid_x=cx_sum / n_centroid if n_centroid else math.nan,
        mean_centroid_y=cy_sum / n_centroid if n_centroid else math.nan,
        final_area=metrics.area_frac,
        final_centroid_x=math.nan if cx is None else cx,
        final_centroid_y=math.nan if cy is None else cy,
        steps=n,
        component_sums=sums,
        trace=trace,
    )
