"""TD3 learner: replay ring, clipped target smoothing, twin critics, delayed actor."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .neural import (
    AdamState,
    NetworkParams,
    adam_step,
    backward,
    forward,
    init_network,
    polyak_blend,
)

log = logging.getLogger(__name__)


class ScheduleError(RuntimeError):
    pass


class NonFiniteTargetError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TD3Hyper:
    batch_size: int = 128
    lr: float = 0.0005
    gamma: float = 0.99
    tau: float = 0.005
    buffer_capacity: int = 10_000_000
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    policy_delay: int = 2
    exploration_noise_std: float = 0.1
    episodes: int = 5000
    episode_len: int = 1500
    warmup_steps: int = 5000
    hidden: Tuple[int, ...] = (400, 300)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # time-limit ends are truncations, not terminal states
    bootstrap_on_timeout: bool = True
    eval_every: int = 50
    eval_episodes: int = 5
    checkpoint_every: int = 100
    early_stop_patience: Optional[int] = None
    early_stop_epsilon: float = 0.0
    early_stop_window: int = 100
    # keep a copy of the agent from its best periodic evaluation
    keep_best: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.target_noise_clip <= 0:
            raise ValueError("target_noise_clip must be positive")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must hold at least one batch")


AGENT_LAYOUTS = {
    "throttle": ((0, 1), (0,)),
    "steering": ((2, 3), (1,)),
    "combined": ((0, 1, 2, 3), (0, 1)),
    "complex": (tuple(range(9)), tuple(range(4))),
}
REWARD_FOR_AGENT = {
    "throttle": "area_original",
    "steering": "position",
    "combined": "combined",
    "complex": "complex",
}


@dataclass(frozen=True)
class AgentConfig:
    kind: str
    state_indices: Tuple[int, ...]
    action_indices: Tuple[int, ...]

    @classmethod
    def of(cls, kind: str) -> "AgentConfig":
        if kind not in AGENT_LAYOUTS:
            raise ValueError(f"unknown agent kind {kind!r}")
        s, a = AGENT_LAYOUTS[kind]
        return cls(kind, s, a)

    @property
    def state_dim(self) -> int:
        return len(self.state_indices)

    @property
    def action_dim(self) -> int:
        return len(self.action_indices)

    @property
    def reward_kind(self) -> str:
        return REWARD_FOR_AGENT[self.kind]

    @property
    def active_mask(self) -> Tuple[bool, ...]:
        return tuple(i in self.action_indices for i in range(4))

    def project(self, obs: np.ndarray) -> np.ndarray:
        return obs[list(self.state_indices)]

    def expand(self, action: np.ndarray, into: Optional[np.ndarray] = None) -> np.ndarray:
        full = np.zeros(4) if into is None else into
        full[list(self.action_indices)] = action
        return full


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Ring store of transitions, overwriting oldest-first once full.

    Storage grows geometrically up to ``capacity`` so large nominal
    capacities cost nothing until used.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, rng: np.random.Generator):
        self.capacity = int(capacity)
        self.state_dim, self.action_dim = state_dim, action_dim
        self.rng = rng
        self.size = 0
        self.cursor = 0
        self._alloc(min(self.capacity, 4096))

    def _alloc(self, n: int) -> None:
        old = getattr(self, "_s", None)
        s, a = np.zeros((n, self.state_dim)), np.zeros((n, self.action_dim))
        r, s2, d = np.zeros(n), np.zeros((n, self.state_dim)), np.zeros(n)
        if old is not None:
            k = self.size
            s[:k], a[:k], r[:k], s2[:k], d[:k] = self._s[:k], self._a[:k], self._r[:k], self._s2[:k], self._d[:k]
        self._s, self._a, self._r, self._s2, self._d = s, a, r, s2, d

    def __len__(self):
        return self.size

    def add(self, state, action, reward: float, next_state, done: bool) -> None:
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        i = self.cursor
        if i >= len(self._r):
            self._alloc(min(self.capacity, 2 * len(self._r)))
        self._s[i], self._a[i], self._r[i], self._s2[i], self._d[i] = state, action, reward, next_state, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int) -> Batch:
        if n > self.size:
            raise ValueError(f"cannot sample {n} from {self.size} transitions")
        idx = self.rng.integers(0, self.size, size=n)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])

    def stats(self) -> dict:
        return {"capacity": self.capacity, "occupancy": self.size, "cursor": self.cursor}


class TD3Agent:
    def __init__(self, agent_cfg: AgentConfig, hyper: TD3Hyper, seed: int):
        self.cfg = agent_cfg
        self.hyper = hyper
        init_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        self.rng = noise_rng
        n_s, n_a, hidden = agent_cfg.state_dim, agent_cfg.action_dim, tuple(hyper.hidden)
        self.actor = init_network((n_s,) + hidden + (n_a,), init_rng, "tanh_scaled", 1.0, final_scale=3e-3)
        self.critic1 = init_network((n_s + n_a,) + hidden + (1,), init_rng)
        self.critic2 = init_network((n_s + n_a,) + hidden + (1,), init_rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        opt = dict(lr=hyper.lr, beta1=hyper.adam_beta1, beta2=hyper.adam_beta2, eps=hyper.adam_eps)
        self.actor_opt = AdamState.for_params(self.actor, **opt)
        self.critic1_opt = AdamState.for_params(self.critic1, **opt)
        self.critic2_opt = AdamState.for_params(self.critic2, **opt)
        self.steps_taken = 0
        self.learn_iterations = 0
        self.actor_updates = 0
        self._actor_iteration = 0

    # -- acting ------------------------------------------------------------

    def select_action(self, state: np.ndarray, explore: bool = False) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.cfg.state_dim,):
            raise ValueError(f"{self.cfg.kind} agent expects {self.cfg.state_dim} state values, got {state.shape}")
        if explore:
            self.steps_taken += 1
            if self.steps_taken <= self.hyper.warmup_steps:
                return self.rng.uniform(-1.0, 1.0, size=self.cfg.action_dim)
        action = forward(self.actor, state)[0]
        if explore:
            action = action + self.rng.normal(0.0, self.hyper.exploration_noise_std, size=action.shape)
            action = np.clip(action, -1.0, 1.0)
        return action

    def target_action(self, next_states: np.ndarray, return_noise: bool = False):
        h = self.hyper
        mu = forward(self.actor_target, next_states)[0]
        noise = np.clip(self.rng.normal(0.0, 1.0, size=mu.shape) * h.target_noise_std,
                        -h.target_noise_clip, h.target_noise_clip)
        action = np.clip(mu + noise, -1.0, 1.0)
        return (action, noise) if return_noise else action

    # -- learning ----------------------------------------------------------

    def critic_targets(self, batch: Batch) -> np.ndarray:
        a2 = self.target_action(batch.next_states)
        sa2 = np.concatenate([batch.next_states, a2], axis=1)
        q1 = forward(self.critic1_target, sa2)[0][:, 0]
        q2 = forward(self.critic2_target, sa2)[0][:, 0]
        y = batch.rewards + self.hyper.gamma * (1.0 - batch.dones) * np.minimum(q1, q2)
        if not np.all(np.isfinite(y)):
            raise NonFiniteTargetError("non-finite critic target; update aborted")
        return y

    def critic_update(self, batch: Batch) -> Tuple[float, float]:
        y = self.critic_targets(batch)
        sa = np.concatenate([batch.states, batch.actions], axis=1)
        losses = []
        for net, opt in ((self.critic1, self.critic1_opt), (self.critic2, self.critic2_opt)):
            q, cache = forward(net, sa)
            err = q[:, 0] - y
            losses.append(float(np.mean(err * err)))
            grads = backward(net, cache, (2.0 / len(y)) * err[:, None])
            adam_step(net, grads.params, opt)
        self.learn_iterations += 1
        return losses[0], losses[1]

    def actor_update(self, batch: Batch) -> float:
        d = self.hyper.policy_delay
        if self.learn_iterations % d != 0 or self._actor_iteration == self.learn_iterations:
            raise ScheduleError(f"actor update only allowed once every {d} critic iterations")
        mu, a_cache = forward(self.actor, batch.states)
        q, q_cache = forward(self.critic1, np.concatenate([batch.states, mu], axis=1))
        # maximise mean Q1(s, mu(s)); critic parameters are not stepped here
        dq = np.full_like(q, -1.0 / len(q))
        g_sa = backward(self.critic1, q_cache, dq, input_gradient=True).inputs
        grads = backward(self.actor, a_cache, g_sa[:, self.cfg.state_dim:])
        adam_step(self.actor, grads.params, self.actor_opt)
        self._actor_iteration = self.learn_iterations
        self.actor_updates += 1
        return -float(np.mean(q))

    def update_targets(self) -> None:
        tau = self.hyper.tau
        polyak_blend(self.critic1_target, self.critic1, tau)
        polyak_blend(self.critic2_target, self.critic2, tau)
        polyak_blend(self.actor_target, self.actor, tau)

    def learn(self, batch: Batch) -> Dict[str, float]:
        """One learning iteration: critics, the delayed actor step when due, then targets."""
        l1, l2 = self.critic_update(batch)
        out = {"critic1_loss": l1, "critic2_loss": l2}
        if self.learn_iterations % self.hyper.policy_delay == 0:
            out["actor_loss"] = self.actor_update(batch)
        self.update_targets()
        return out

    # -- persistence -------------------------------------------------------

    def networks(self) -> Dict[str, NetworkParams]:
        return {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }

    def header(self) -> dict:
        return {
            "agent_kind": self.cfg.kind,
            "state_indices": list(self.cfg.state_indices),
            "action_indices": list(self.cfg.action_indices),
            "hyper": _jsonable(asdict(self.hyper)),
            "counters": {
                "steps_taken": self.steps_taken,
                "learn_iterations": self.learn_iterations,
                "actor_updates": self.actor_updates,
            },
            "rng_state": _jsonable(self.rng.bit_generator.state),
        }

    @classmethod
    def from_checkpoint(cls, header: dict, nets: Dict[str, NetworkParams]) -> "TD3Agent":
        hyper_d = dict(header["hyper"])
        hyper_d["hidden"] = tuple(hyper_d["hidden"])
        hyper = TD3Hyper(**hyper_d)
        agent = cls(AgentConfig.of(header["agent_kind"]), hyper, seed=0)
        for name, net in agent.networks().items():
            net.assign(nets[name])
        c = header["counters"]
        agent.steps_taken, agent.learn_iterations, agent.actor_updates = (
            c["steps_taken"], c["learn_iterations"], c["actor_updates"])
        agent.rng.bit_generator.state = header["rng_state"]
        return agent


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
