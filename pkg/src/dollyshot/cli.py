"""``dollyshot`` command line: train, eval, srcc, compare, export, tune-pd, rerun.

Every command writes into its own run directory with a ``manifest.json`` that
records the resolved config, seeds and code version. ``rerun`` replays a
manifest into a fresh directory.

Exit codes: 0 success, 2 config/usage error, 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .baseline import PDController, coordinate_search
from .config import RunConfig, build, dump_yaml, resolve
from .evalharness import (HarnessError, compare_results, order_stats, run_trials, srcc, summarize,
                          write_comparison, write_csv, write_json, write_srcc, write_trace, write_trials)
from .policies import AgentPolicy, RandomPolicy, ZeroPolicy
from .simenv import ConfigError, PerturbationConfig
from .td3 import AGENT_LAYOUTS, AgentConfig
from .training import independent_pair_train, load_agent, train

log = logging.getLogger("dollyshot")

AGENT_CHOICES = ("throttle", "steering", "combined", "independent-pair", "complex")
BASELINES = ("pd", "zero", "random")
MANIFEST = "manifest.json"
OUT_ROOT_ENV = "DOLLYSHOT_OUT_ROOT"


class UsageError(ValueError):
    """Bad flags or missing inputs; maps to exit code 2."""


def code_version() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def out_dir_for(out: Optional[str], default: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    p = Path(out or default)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


# -- policies ----------------------------------------------------------------------

def _checkpoint_files(paths: Sequence[str], which: str = "final") -> List[Path]:
    """Checkpoint files; a training run directory expands to its ``*_{which}.json`` files."""
    files: List[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found = sorted(p.glob(f"*_{which}.json"))
            if not found:
                raise UsageError(f"no *_{which}.json checkpoint in {p}")
            files += found
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"checkpoint {p} does not exist")
    return files


def load_agent_policy(paths: Sequence[str], name: Optional[str] = None, which: str = "final"):
    try:
        agents = [load_agent(f) for f in _checkpoint_files(paths, which)]
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"unreadable checkpoint: {exc}") from exc
    kinds = sorted(a.cfg.kind for a in agents)
    if len(agents) > 1 and kinds != ["steering", "throttle"]:
        raise UsageError(f"only a throttle+steering pair can be combined, got {kinds}")
    policy = AgentPolicy(agents, name=name or ("independent-pair" if len(agents) > 1 else agents[0].cfg.kind))
    return policy, default_reward(kinds)


def default_reward(kinds: Sequence[str]) -> str:
    """Complex agents are scored on the complex reward; everything else on the combined one."""
    return "complex" if "complex" in kinds else "combined"


def channel_mask(channels: Optional[str]):
    if channels is None:
        return (True, True, True, True)
    if channels not in AGENT_LAYOUTS:
        raise UsageError(f"--channels must be one of {sorted(AGENT_LAYOUTS)}")
    return AgentConfig.of(channels).active_mask


def baseline_policy(name: str, run: RunConfig, channels: Optional[str]):
    mask = channel_mask(channels)
    if name == "pd":
        return PDController(run.pd, run.env, mask)
    if name == "random":
        return RandomPolicy(mask)
    if name == "zero":
        return ZeroPolicy()
    raise UsageError(f"unknown baseline {name!r}")


def _policy_from_args(args, run: RunConfig):
    if bool(args.checkpoint) == bool(args.policy):
        raise UsageError("give exactly one of --checkpoint or --policy")
    if args.checkpoint:
        policy, kind = load_agent_policy(args.checkpoint, which=args.which)
    else:
        policy = baseline_policy(args.policy, run, args.channels)
        kind = default_reward([args.channels or "complex"])
    return policy, args.reward or kind


# -- commands ----------------------------------------------------------------------

def cmd_train(args, run: RunConfig, out: Path) -> dict:
    wts = run.weights(default_reward([args.agent]))
    if args.agent == "independent-pair":
        res = independent_pair_train(run.env, run.td3, args.seed, wts, out)
    else:
        res = train(run.env, AgentConfig.of(args.agent), run.td3, args.seed, wts, out)
    last = res.evals[-1][1] if res.evals else None
    print(f"trained {args.agent} for {len(res.log)} episodes; final eval reward {last}")
    return {"episodes_run": len(res.log), "stopped_early": res.stopped_early,
            "best_episode": res.best_episode, "best_eval": res.best_eval,
            "checkpoints": [str(p.relative_to(out)) for p in res.checkpoints]}


def cmd_eval(args, run: RunConfig, out: Path) -> dict:
    policy, kind = _policy_from_args(args, run)
    pcfg = run.perturbation if args.perturbed else None
    results = run_trials(policy, run.env, args.trials, args.starts, args.base_seed, kind,
                         run.weights(kind), pcfg, record=args.traces, jobs=args.jobs)
    write_trials(out / "trials.csv", results)
    _write_summary(out, {policy.name: summarize(results)})
    if args.traces:
        (out / "traces").mkdir(exist_ok=True)
        for r in results:
            write_trace(out / "traces" / f"{r.start}_{r.seed}.csv", r)
    mean = float(np.mean([r.cumulative_reward for r in results]))
    print(f"{policy.name}: {len(results)} trials, mean cumulative reward {mean:.4f} ({kind} reward)")
    return {"policy": policy.name, "reward_kind": kind, "mean_cumulative_reward": mean}


def _write_summary(out: Path, summaries: Dict[str, dict]) -> None:
    rows = [[name, metric] + [st[k] for k in SUMMARY_KEYS]
            for name, summ in summaries.items() for metric, st in summ.items()]
    write_csv(out / "summary.csv", ["policy", "metric"] + list(SUMMARY_KEYS), rows)
    write_json(out / "summary.json", summaries)


SUMMARY_KEYS = ("n", "mean", "std", "min", "q1", "median", "q3", "iqr", "max")


def cmd_srcc(args, run: RunConfig, out: Path) -> dict:
    policy, kind = _policy_from_args(args, run)
    pcfg = PerturbationConfig.zero(run.perturbation.rng_seed) if args.zero_perturbation else run.perturbation
    wts = run.weights(kind)
    nominal = run_trials(policy, run.env, args.trials, args.starts, args.base_seed, kind, wts, jobs=args.jobs)
    perturbed = run_trials(policy, run.env, args.trials, args.starts, args.base_seed, kind, wts, pcfg,
                           jobs=args.jobs)
    report = srcc(nominal, perturbed, args.method)
    write_trials(out / "nominal_trials.csv", nominal)
    write_trials(out / "perturbed_trials.csv", perturbed)
    write_srcc(out, report)
    for row in report.table_rows():
        print(",".join(str(v) for v in row))
    return {"policy": policy.name, "reward_kind": kind, "method": args.method}


def cmd_compare(args, run: RunConfig, out: Path) -> dict:
    policies = {}
    for spec in args.agent or []:
        name, _, paths = spec.partition("=")
        if not paths:
            raise UsageError(f"--agent expects NAME=CHECKPOINT[,CHECKPOINT], got {spec!r}")
        policies[name], _ = load_agent_policy(paths.split(","), name, args.which)
    for b in args.baseline or []:
        p = baseline_policy(b, run, args.channels)
        policies[b] = p
    if not policies:
        raise UsageError("nothing to compare; add --agent and/or --baseline")
    kind = args.reward
    results = {name: run_trials(p, run.env, args.trials, args.starts, args.base_seed, kind,
                                run.weights(kind), jobs=args.jobs)
               for name, p in policies.items()}
    comp = compare_results(results)
    write_comparison(out, comp)
    print(f"{'policy':<20} {'mean reward':>12} {'mean area %':>12} {'iqr centroid_x':>15}")
    for name, summ in comp.summaries.items():
        print(f"{name:<20} {summ['cumulative_reward']['mean']:12.4f} {summ['mean_area_pct']['mean']:12.4f}"
              f" {summ['mean_centroid_x']['iqr']:15.4f}")
    return {"reward_kind": kind, "mean_cumulative_reward": {n: comp.mean_reward(n) for n in comp.summaries}}


def cmd_tune_pd(args, run: RunConfig, out: Path) -> dict:
    kind = args.reward
    wts = run.weights(kind)
    mask = channel_mask(args.channels)

    def score(g):
        rs = run_trials(PDController(g, run.env, mask), run.env, args.trials, args.starts,
                        args.base_seed, kind, wts, jobs=args.jobs)
        return float(np.mean([r.cumulative_reward for r in rs]))

    gains, best, history = coordinate_search(run.pd, score, rounds=args.rounds)
    (out / "pd_gains.yaml").write_text(dump_yaml({"pd": gains.to_dict()}))
    write_csv(out / "search_history.csv", ["round", "change", "score"], history)
    print(f"tuned PD score {best:.4f} over {args.trials} trials")
    return {"score": best, "gains": gains.to_dict()}


def cmd_export(args, run: Optional[RunConfig], out: Path) -> dict:
    src = Path(args.run)
    man_path = src / MANIFEST
    if not src.is_dir():
        raise UsageError(f"run directory {src} does not exist")
    if not man_path.is_file():
        raise UsageError(f"{src} has no {MANIFEST}; not a run directory")
    manifest = json.loads(man_path.read_text())
    dest = src / "export"
    dest.mkdir(exist_ok=True)
    written = []
    cmd = manifest["command"]
    if cmd == "train":
        written.append(_export_curves(src, dest, args.window))
    elif cmd in ("eval", "compare"):
        trials = src / ("trials.csv" if cmd == "eval" else "comparison_trials.csv")
        written += _export_trials(trials, dest)
    elif cmd == "srcc":
        written += _export_trials(src / "perturbed_trials.csv", dest, prefix="perturbed_")
        written += _export_trials(src / "nominal_trials.csv", dest, prefix="nominal_")
        rows = list(_read_csv(src / "srcc_table.csv"))
        write_csv(dest / "srcc_table.csv", rows[0], rows[1:])
        written.append("srcc_table.csv")
    else:
        raise UsageError(f"nothing to export for a {cmd!r} run")
    for w in written:
        print(dest / w)
    return {}


def _read_csv(path: Path):
    import csv
    with open(path, newline="") as fh:
        yield from csv.reader(fh)


def _export_curves(src: Path, dest: Path, window: int) -> str:
    rows = list(_read_csv(src / "train_log.csv"))
    header, body = rows[0], rows[1:]
    ep = header.index("episode")
    rew = header.index("cumulative_reward")
    ev = header.index("eval_reward")
    vals = [float(r[rew]) for r in body]
    out_rows = []
    for i, r in enumerate(body):
        lo = max(0, i + 1 - window)
        out_rows.append([int(r[ep]), vals[i], float(np.mean(vals[lo:i + 1])), r[ev]])
    write_csv(dest / "training_curve.csv", ["episode", "cumulative_reward", f"moving_mean_{window}", "eval_reward"],
              out_rows)
    return "training_curve.csv"


def _export_trials(path: Path, dest: Path, prefix: str = "") -> List[str]:
    rows = list(_read_csv(path))
    header, body = rows[0], rows[1:]
    cols = {"cumulative_reward": "cumulative_reward", "area": "mean_area_pct",
            "centroid_x": "mean_centroid_x", "centroid_y": "mean_centroid_y"}
    by_policy: Dict[str, List[list]] = {}
    for r in body:
        by_policy.setdefault(r[0], []).append(r)
    box, bars = [], []
    for pol, rs in by_policy.items():
        for metric, c in cols.items():
            st = order_stats([float(r[header.index(c)]) for r in rs])
            box.append([pol, metric] + [st[k] for k in ("min", "q1", "median", "q3", "max", "iqr")])
            bars.append([pol, metric, st["mean"], st["std"], st["n"]])
    write_csv(dest / f"{prefix}boxplot.csv", ["policy", "metric", "min", "q1", "median", "q3", "max", "iqr"], box)
    write_csv(dest / f"{prefix}bars.csv", ["policy", "metric", "mean", "std", "n"], bars)
    return [f"{prefix}boxplot.csv", f"{prefix}bars.csv"]


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "srcc": cmd_srcc,
    "compare": cmd_compare,
    "tune-pd": cmd_tune_pd,
    "export": cmd_export,
}


# -- argument parsing ----------------------------------------------------------------

def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="desk", help="shipped profile: desk or full (default desk)")
    p.add_argument("--config", action="append", default=[], metavar="YAML",
                   help="config file merged over the profile; repeatable")
    p.add_argument("--set", action="append", default=[], dest="overrides", metavar="SECTION.KEY=VALUE",
                   help="override a single config value; repeatable")
    p.add_argument("--out", help=f"run directory (relative paths are placed under ${OUT_ROOT_ENV})")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for trial fans")


def _trial_flags(p, trials, starts):
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--starts", default=starts, help="mixed, left, right, centre or per-position-K")
    p.add_argument("--base-seed", type=int, default=0)


def _which_flag(p):
    p.add_argument("--which", choices=("final", "best"), default="final",
                   help="for run directories: final agent or best-evaluation snapshot")


def _policy_flags(p):
    p.add_argument("--checkpoint", nargs="+", help="checkpoint file(s) or a training run directory")
    _which_flag(p)
    p.add_argument("--policy", choices=BASELINES, help="built-in baseline instead of a checkpoint")
    p.add_argument("--channels", help="restrict a baseline to an agent's channels (e.g. combined)")
    p.add_argument("--reward", choices=("combined", "complex"), help="reward used for scoring")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dollyshot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a TD3 agent")
    _config_flags(p)
    p.add_argument("--agent", required=True, choices=AGENT_CHOICES)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="run deterministic evaluation trials")
    _config_flags(p)
    _policy_flags(p)
    _trial_flags(p, 100, "mixed")
    p.add_argument("--perturbed", action="store_true", help="evaluate under the perturbation profile")
    p.add_argument("--traces", action="store_true", help="also write per-step traces")

    p = sub.add_parser("srcc", help="paired nominal/perturbed correlation study")
    _config_flags(p)
    _policy_flags(p)
    _trial_flags(p, None, "per-position-10")
    p.add_argument("--method", choices=("pearson", "spearman"), default="pearson")
    p.add_argument("--zero-perturbation", action="store_true", help="use an all-zero perturbation profile")

    p = sub.add_parser("compare", help="evaluate several policies on one seed set")
    _config_flags(p)
    _trial_flags(p, 100, "mixed")
    p.add_argument("--agent", action="append", metavar="NAME=CKPT[,CKPT]")
    _which_flag(p)
    p.add_argument("--baseline", action="append", choices=BASELINES)
    p.add_argument("--channels", help="restrict baselines to an agent's channels")
    p.add_argument("--reward", choices=("combined", "complex"), default="complex")

    p = sub.add_parser("tune-pd", help="coordinate search over PD gains on the clean simulator")
    _config_flags(p)
    _trial_flags(p, 30, "mixed")
    p.add_argument("--channels", help="restrict the controller to an agent's channels")
    p.add_argument("--reward", choices=("combined", "complex"), default="complex")
    p.add_argument("--rounds", type=int, default=6)

    p = sub.add_parser("export", help="write figure-data CSVs for a finished run")
    p.add_argument("run", help="run directory containing a manifest")
    p.add_argument("--window", type=int, default=20, help="moving-average window for training curves")

    p = sub.add_parser("rerun", help="replay a manifest into a new directory")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)
    return parser


def _args_record(args) -> dict:
    skip = {"config", "overrides", "profile", "out", "verbose", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def execute(command: str, args, cfg: Optional[dict], out: Path, argv: Sequence[str]) -> None:
    run = build(cfg) if cfg is not None else None
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "args": _args_record(args),
        "config": cfg,
        "seeds": {k: getattr(args, k) for k in ("seed", "base_seed") if hasattr(args, k)},
        "code_version": code_version(),
        "output_dir": str(out),
        "started": _now(),
    }
    if cfg is not None:
        (out / "config.yaml").write_text(dump_yaml(cfg))
    manifest["result"] = COMMANDS[command](args, run, out)
    manifest["finished"] = _now()
    write_json(out / MANIFEST, manifest)


def rerun(args, argv) -> None:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        raise UsageError(f"manifest {path} not found")
    man = json.loads(path.read_text())
    if man.get("command") not in COMMANDS or man["command"] == "export":
        raise UsageError(f"cannot rerun command {man.get('command')!r}")
    if man["code_version"] != code_version():
        log.warning("manifest was written by %s; this is %s", man["code_version"], code_version())
    ns = argparse.Namespace(**man["args"])
    if args.jobs is not None:
        ns.jobs = args.jobs
    out = out_dir_for(args.out, args.out)
    execute(man["command"], ns, man["config"], out, argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            rerun(args, argv)
        elif args.command == "export":
            cmd_export(args, None, Path(args.run))
        else:
            if getattr(args, "jobs", 1) < 1:
                raise UsageError("--jobs must be >= 1")
            cfg = resolve(args.profile, args.config, args.overrides)
            default = f"runs/{args.command}-{getattr(args, 'agent', None) or 'run'}"
            if isinstance(getattr(args, "agent", None), list):
                default = f"runs/{args.command}"
            execute(args.command, args, cfg, out_dir_for(args.out, default), argv)
    except (ConfigError, UsageError, HarnessError) as exc:
        print(f"dollyshot: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime or numeric failure
        print(f"dollyshot: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
