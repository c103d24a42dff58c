"""Episode loop for TD3 training, for a single agent or two independent agents."""

from __future__ import annotations

import copy
import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .neural import dump_checkpoint, load_checkpoint
from .policies import AgentPolicy, rollout
from .rewards import RewardWeights, step_reward
from .simenv import DollyEnv, EnvConfig
from .td3 import AgentConfig, ReplayBuffer, TD3Agent, TD3Hyper, _jsonable

log = logging.getLogger(__name__)


@dataclass
class Learner:
    name: str
    agent: TD3Agent
    buffer: ReplayBuffer
    reward_kind: str
    enabled: bool = True


@dataclass
class TrainResult:
    agents: Dict[str, TD3Agent]
    log: List[dict]
    evals: List[tuple] = field(default_factory=list)
    stopped_early: bool = False
    checkpoints: List[Path] = field(default_factory=list)
    best_agents: Optional[Dict[str, TD3Agent]] = None
    best_episode: Optional[int] = None
    best_eval: Optional[float] = None
    eval_seeds: List[int] = field(default_factory=list)


def fmt(x) -> str:
    """Shortest round-trip text for floats, so repeated runs give identical bytes."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def train(env_cfg: EnvConfig, agent_cfg: AgentConfig, hyper: TD3Hyper, seed: int,
          wts: Optional[RewardWeights] = None, out_dir: Optional[Path] = None,
          callbacks: Sequence[Callable[[dict], None]] = ()) -> TrainResult:
    wts = wts or RewardWeights.for_env(env_cfg, agent_cfg.reward_kind)
    return _train_loop(env_cfg, [(agent_cfg.kind, agent_cfg, agent_cfg.reward_kind, True)],
                       hyper, seed, wts, agent_cfg.reward_kind, out_dir, callbacks)


def independent_pair_train(env_cfg: EnvConfig, hyper: TD3Hyper, seed: int,
                           wts: Optional[RewardWeights] = None, out_dir: Optional[Path] = None,
                           callbacks: Sequence[Callable[[dict], None]] = (),
                           disabled: Sequence[str] = ()) -> TrainResult:
    """Throttle and steering agents act together but learn separately from their own rewards.

    The episode reward logged (and used for evaluation) is the combined reward.
    """
    wts = wts or RewardWeights.for_env(env_cfg, "combined")
    specs = [
        ("throttle", AgentConfig.of("throttle"), "area_original", "throttle" not in disabled),
        ("steering", AgentConfig.of("steering"), "position", "steering" not in disabled),
    ]
    return _train_loop(env_cfg, specs, hyper, seed, wts, "combined", out_dir, callbacks)


def _train_loop(env_cfg, specs, hyper: TD3Hyper, seed: int, wts: RewardWeights, log_kind: str,
                out_dir: Optional[Path], callbacks) -> TrainResult:
    env_cfg = replace(env_cfg, episode_len=hyper.episode_len)
    env = DollyEnv(env_cfg)
    ss_env, ss_eval, *ss_learners = np.random.SeedSequence(seed).spawn(2 + len(specs))
    env_rng = np.random.default_rng(ss_env)
    eval_seeds = [int(s) for s in np.random.default_rng(ss_eval).integers(0, 2**31, size=hyper.eval_episodes)]

    learners: List[Learner] = []
    for (name, cfg, reward_kind, enabled), ss in zip(specs, ss_learners):
        ss_agent, ss_buf = ss.spawn(2)
        agent = TD3Agent(cfg, hyper, _seed_int(ss_agent))
        buf = ReplayBuffer(hyper.buffer_capacity, cfg.state_dim, cfg.action_dim, np.random.default_rng(ss_buf))
        learners.append(Learner(name, agent, buf, reward_kind, enabled))
    multi = len(learners) > 1

    def col(base, lr):
        return f"{base}_{lr.name}" if multi else base

    columns = ["episode", "cumulative_reward", "mean_area", "mean_centroid_x", "mean_centroid_y"]
    for lr in learners:
        if multi:
            columns.append(col("reward", lr))
        columns += [col("critic1_loss", lr), col("critic2_loss", lr), col("actor_loss", lr),
                    col("learn_iterations", lr)]
    columns.append("eval_reward")

    writer = fh = None
    result = TrainResult({lr.name: lr.agent for lr in learners}, [], eval_seeds=eval_seeds)
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "train_log.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)

    best_avg, stale = -math.inf, 0
    zeros = np.zeros(4)
    try:
        for ep in range(1, hyper.episodes + 1):
            obs = env.reset(int(env_rng.integers(0, 2**31)))
            prev = zeros
            total = area_sum = cx_sum = cy_sum = 0.0
            n_centroid = 0
            cx, cy = env.metrics.centroid_x, env.metrics.centroid_y
            own = {lr.name: 0.0 for lr in learners}
            losses = {lr.name: {"critic1_loss": [], "critic2_loss": [], "actor_loss": []} for lr in learners}
            states = [lr.agent.cfg.project(obs) for lr in learners]
            done = False
            while not done:
                full = np.zeros(4)
                acts = []
                for lr, s in zip(learners, states):
                    if lr.enabled:
                        a = lr.agent.select_action(s, explore=True)
                    else:
                        a = np.zeros(lr.agent.cfg.action_dim)
                    lr.agent.cfg.expand(a, into=full)
                    acts.append(a)
                obs, metrics, done = env.step(full)
                r_log, parts = step_reward(log_kind, metrics, full, prev, wts)
                total += r_log
                area_sum += metrics.area_frac
                if metrics.subject_visible:
                    cx, cy = metrics.centroid_x, metrics.centroid_y
                if cx is not None:
                    cx_sum += cx
                    cy_sum += cy
                    n_centroid += 1
                terminal = done and not hyper.bootstrap_on_timeout
                next_states = []
                for lr, s, a in zip(learners, states, acts):
                    s2 = lr.agent.cfg.project(obs)
                    next_states.append(s2)
                    if not lr.enabled:
                        continue
                    r = r_log if lr.reward_kind == log_kind else step_reward(lr.reward_kind, metrics, full, prev, wts)[0]
                    own[lr.name] += r
                    lr.buffer.add(s, a, r, s2, terminal)
                    if len(lr.buffer) >= hyper.batch_size:
                        out = lr.agent.learn(lr.buffer.sample(hyper.batch_size))
                        for k, v in out.items():
                            losses[lr.name][k].append(v)
                states = next_states
                prev = full
            n = env.world.t
            row = {"episode": ep, "cumulative_reward": total, "mean_area": area_sum / n,
                   "mean_centroid_x": cx_sum / n_centroid if n_centroid else math.nan,
                   "mean_centroid_y": cy_sum / n_centroid if n_centroid else math.nan}
            for lr in learners:
                if multi:
                    row[col("reward", lr)] = own[lr.name]
                for k, vals in losses[lr.name].items():
                    row[col(k, lr)] = float(np.mean(vals)) if vals else float("nan")
                row[col("learn_iterations", lr)] = lr.agent.learn_iterations
            row["eval_reward"] = ""
            stop = False
            if hyper.eval_every and (ep % hyper.eval_every == 0 or ep == hyper.episodes):
                score = evaluate_agents([lr.agent for lr in learners], env_cfg, log_kind, wts, eval_seeds)
                row["eval_reward"] = score
                result.evals.append((ep, score))
                if hyper.keep_best and (result.best_eval is None or score > result.best_eval):
                    result.best_agents = {lr.name: copy.deepcopy(lr.agent) for lr in learners}
                    result.best_episode, result.best_eval = ep, score
                window = [s for e, s in result.evals if e > ep - hyper.early_stop_window]
                avg = float(np.mean(window))
                if avg > best_avg + hyper.early_stop_epsilon:
                    best_avg, stale = avg, 0
                else:
                    stale += 1
                if hyper.early_stop_patience is not None and stale >= hyper.early_stop_patience:
                    stop = True
            result.log.append(row)
            if writer is not None:
                writer.writerow([fmt(row[c]) for c in columns])
                fh.flush()
            for cb in callbacks:
                cb(row)
            if out_dir is not None and hyper.checkpoint_every and ep % hyper.checkpoint_every == 0:
                for lr in learners:
                    p = out_dir / "checkpoints" / f"{lr.name}_ep{ep:05d}.json"
                    save_agent(p, lr.agent, lr.buffer, env_cfg, wts)
                    result.checkpoints.append(p)
            if stop:
                log.info("early stop at episode %d (moving eval average %.3f)", ep, avg)
                result.stopped_early = True
                break
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        for lr in learners:
            p = out_dir / f"{lr.name}_final.json"
            save_agent(p, lr.agent, lr.buffer, env_cfg, wts)
            result.checkpoints.append(p)
            if result.best_agents is not None:
                p = out_dir / f"{lr.name}_best.json"
                save_agent(p, result.best_agents[lr.name], None, env_cfg, wts)
                result.checkpoints.append(p)
    return result


def evaluate_agents(agents, env_cfg: EnvConfig, reward_kind: str, wts: RewardWeights,
                    seeds: Sequence[int]) -> float:
    env = DollyEnv(env_cfg)
    policy = AgentPolicy(agents)
    return float(np.mean([rollout(env, policy, reward_kind, wts, s).cumulative_reward for s in seeds]))


def save_agent(path: Path, agent: TD3Agent, buffer: Optional[ReplayBuffer], env_cfg: EnvConfig,
               wts: RewardWeights) -> None:
    header = agent.header()
    header["buffer"] = buffer.stats() if buffer is not None else None
    header["env"] = _jsonable(asdict(env_cfg))
    header["rewards"] = asdict(wts)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        dump_checkpoint(fh, header, agent.networks())
    os.replace(tmp, path)


def load_agent(path: Path) -> TD3Agent:
    with open(path) as fh:
        header, nets = load_checkpoint(fh)
    if "agent_kind" not in header:
        raise ValueError(f"{path} is not an agent checkpoint")
    return TD3Agent.from_checkpoint(header, nets)
