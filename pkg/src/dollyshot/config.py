"""Nested run configuration: shipped profiles, YAML files, and ``section.key=value`` overrides.

Every EnvConfig, PerturbationConfig, TD3Hyper, reward and PD-gain field has a
key here; unknown keys are rejected.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import yaml

from .baseline import PDGains
from .rewards import RewardWeights
from .simenv import ConfigError, EnvConfig, PerturbationConfig
from .td3 import TD3Hyper

REWARD_DEFAULTS = {
    "combined_w1": 0.5,
    "combined_w2": 0.5,
    "complex_w1": 0.4,
    "complex_w2": 0.4,
    "complex_w3": 0.2,
    # null means "derive from the environment": k = target_area/2, theta_max = fov/2 + pan_limit
    "k": None,
    "theta_max": None,
    "smooth_coeff": 0.1,
    "smooth_threshold": 0.2,
    "signed_upper": False,
}

PROFILES: Dict[str, dict] = {
    "full": {
        "env": {"episode_len": 1500},
        "td3": {"episodes": 5000, "episode_len": 1500, "hidden": [400, 300], "buffer_capacity": 10_000_000},
    },
    "desk": {
        "env": {"episode_len": 200},
        "td3": {"episodes": 300, "episode_len": 200, "hidden": [64, 64], "buffer_capacity": 100_000},
    },
}


def defaults() -> dict:
    return {
        "env": _plain(asdict(EnvConfig())),
        "perturbation": _plain(asdict(PerturbationConfig())),
        "td3": _plain(asdict(TD3Hyper())),
        "rewards": dict(REWARD_DEFAULTS),
        "pd": _plain(PDGains().to_dict()),
    }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def merge(base: dict, override: dict, path: str = "") -> dict:
    """Recursive merge that refuses keys the base does not define."""
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} expects a mapping")
            out[key] = merge(out[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(item: str) -> dict:
    """``td3.episodes=10`` -> {"td3": {"episodes": 10}}; values are parsed as YAML scalars."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be section.key")
    val: Any = yaml.safe_load(raw)
    for p in reversed(parts):
        val = {p: val}
    return val


def resolve(profile: str = "desk", files: Iterable[Path] = (), overrides: Iterable[str] = ()) -> dict:
    """Defaults <- profile <- config files (in order) <- flag overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = merge(defaults(), PROFILES[profile])
    for f in files:
        try:
            with open(f) as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {f}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {f} must be a mapping")
        cfg = merge(cfg, data)
    for item in overrides:
        cfg = merge(cfg, parse_override(item))
    cfg["profile"] = profile
    build(cfg)
    return cfg


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    perturbation: PerturbationConfig
    td3: TD3Hyper
    rewards: dict
    pd: PDGains

    def weights(self, kind: str) -> RewardWeights:
        r = self.rewards
        over = {"smooth_coeff": r["smooth_coeff"], "smooth_threshold": r["smooth_threshold"],
                "signed_upper": r["signed_upper"]}
        if r["k"] is not None:
            over["k"] = r["k"]
        if r["theta_max"] is not None:
            over["theta_max"] = r["theta_max"]
        if kind == "complex":
            over.update(w1=r["complex_w1"], w2=r["complex_w2"], w3=r["complex_w3"])
        else:
            over.update(w1=r["combined_w1"], w2=r["combined_w2"], w3=0.0)
        return RewardWeights.for_env(self.env, kind, **over)


def _build_dc(cls, d: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] config: {exc}") from exc


def build(cfg: dict) -> RunConfig:
    extra = set(cfg) - {"env", "perturbation", "td3", "rewards", "pd", "profile"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    env = _build_dc(EnvConfig, cfg["env"], "env")
    td3 = _build_dc(TD3Hyper, cfg["td3"], "td3")
    if td3.episode_len != env.episode_len:
        env = _build_dc(EnvConfig, dict(cfg["env"], episode_len=td3.episode_len), "env")
    unknown = set(cfg["rewards"]) - set(REWARD_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown keys in [rewards]: {sorted(unknown)}")
    try:
        pd = PDGains.from_dict(cfg["pd"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [pd] config: {exc}") from exc
    run = RunConfig(env, _build_dc(PerturbationConfig, cfg["perturbation"], "perturbation"), td3,
                    dict(cfg["rewards"]), pd)
    try:
        run.weights("combined")
        run.weights("complex")
    except ValueError as exc:
        raise ConfigError(f"invalid [rewards] config: {exc}") from exc
    return run


def dump_yaml(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
