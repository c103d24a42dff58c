"""Evaluation protocols: repeated trials, order statistics, paired sim/perturbed-sim correlation."""

from __future__ import annotations

import csv
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .policies import TRACE_COLUMNS, Policy, rollout
from .rewards import RewardWeights
from .simenv import START_POSITIONS, EnvConfig, PerturbationConfig, make_env
from .training import fmt

METRICS = ("cumulative_reward", "area", "centroid_x", "centroid_y")
TRIAL_COLUMNS = (
    "policy", "start", "seed", "cumulative_reward",
    "final_area_pct", "final_centroid_x", "final_centroid_y",
    "mean_area_pct", "mean_centroid_x", "mean_centroid_y",
    "final_centroid_x_norm", "final_centroid_y_norm", "steps",
)


class HarnessError(ValueError):
    pass


@dataclass
class TrialResult:
    policy_id: str
    start: str
    seed: int
    cumulative_reward: float
    final_area_pct: float
    final_centroid_x: float
    final_centroid_y: float
    mean_area_pct: float
    mean_centroid_x: float
    mean_centroid_y: float
    steps: int
    width_px: int
    height_px: int
    trace: Optional[list] = field(default=None, repr=False)

    def metric(self, name: str) -> float:
        """Per-trial value used for SRCC and box plots: episode means for shot metrics."""
        return {
            "cumulative_reward": self.cumulative_reward,
            "area": self.mean_area_pct,
            "centroid_x": self.mean_centroid_x,
            "centroid_y": self.mean_centroid_y,
        }[name]

    def row(self) -> list:
        return [self.policy_id, self.start, self.seed, self.cumulative_reward,
                self.final_area_pct, self.final_centroid_x, self.final_centroid_y,
                self.mean_area_pct, self.mean_centroid_x, self.mean_centroid_y,
                self.final_centroid_x / self.width_px, self.final_centroid_y / self.height_px, self.steps]


def start_schedule(scheme: str, n: Optional[int]) -> List[str]:
    """Start position of every trial.

    ``mixed`` splits n into contiguous left/right/centre blocks of near-equal size;
    ``per-position-K`` is exactly K trials per position (n must be 3K or omitted).
    """
    m = re.fullmatch(r"per-position-(\d+)", scheme)
    if m:
        k = int(m.group(1))
        if n is not None and n != 3 * k:
            raise HarnessError(f"{scheme} needs exactly {3 * k} trials, got {n}")
        return [p for p in START_POSITIONS for _ in range(k)]
    if n is None or n < 1:
        raise HarnessError("number of trials must be >= 1")
    if scheme in START_POSITIONS:
        return [scheme] * n
    if scheme == "mixed":
        sizes = [n // 3 + (1 if i < n % 3 else 0) for i in range(3)]
        return [p for p, k in zip(START_POSITIONS, sizes) for _ in range(k)]
    raise HarnessError(f"unknown start scheme {scheme!r}")


def _one_trial(args) -> TrialResult:
    policy, env_cfg, pcfg, start, seed, perturb_seed, reward_kind, wts, record = args
    env = make_env(env_cfg, pcfg)
    st = rollout(env, policy, reward_kind, wts, seed, start, perturb_seed=perturb_seed, record=record)
    return TrialResult(
        policy_id=policy.name,
        start=st.start,
        seed=seed,
        cumulative_reward=st.cumulative_reward,
        final_area_pct=100.0 * st.final_area,
        final_centroid_x=st.final_centroid_x,
        final_centroid_y=st.final_centroid_y,
        mean_area_pct=100.0 * st.mean_area,
        mean_centroid_x=st.mean_centroid_x,
        mean_centroid_y=st.mean_centroid_y,
        steps=st.steps,
        width_px=env_cfg.width_px,
        height_px=env_cfg.height_px,
        trace=st.trace,
    )


def run_trials(policy: Policy, env_cfg: EnvConfig, n: Optional[int], starts: str = "mixed",
               base_seed: int = 0, reward_kind: str = "combined", wts: Optional[RewardWeights] = None,
               pcfg: Optional[PerturbationConfig] = None, record: bool = False,
               jobs: int = 1) -> List[TrialResult]:
    """Deterministic episodes with seeds base_seed .. base_seed+n-1, no exploration noise.

    Under a perturbation profile, trial i draws its perturbation stream from
    ``pcfg.rng_seed + i`` while sharing environment seed ``base_seed + i``.
    """
    wts = wts or RewardWeights.for_env(env_cfg, reward_kind)
    schedule = start_schedule(starts, n)
    tasks = [
        (policy, env_cfg, pcfg, start, base_seed + i,
         None if pcfg is None else pcfg.rng_seed + i, reward_kind, wts, record)
        for i, start in enumerate(schedule)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_one_trial, tasks))
    return [_one_trial(t) for t in tasks]


def order_stats(values: Sequence[float]) -> Dict[str, float]:
    """Mean, std, min/max and quartiles (linear interpolation between order statistics)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise HarnessError("cannot summarise an empty set of results")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "std": float(v.std()),
        "min": float(v.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "iqr": float(q3 - q1),
        "max": float(v.max()),
    }


def summarize(results: Sequence[TrialResult]) -> Dict[str, Dict[str, float]]:
    if not results:
        raise HarnessError("cannot summarise an empty set of results")
    fields = ("cumulative_reward", "final_area_pct", "final_centroid_x", "final_centroid_y",
              "mean_area_pct", "mean_centroid_x", "mean_centroid_y")
    return {f: order_stats([getattr(r, f) for r in results]) for f in fields}


def correlation(x: Sequence[float], y: Sequence[float], method: str = "pearson") -> Optional[float]:
    """Pearson (or Spearman) coefficient; None when either series has zero variance."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise HarnessError("correlation needs two equal-length series of at least two values")
    if method == "spearman":
        x, y = rankdata(x), rankdata(y)
    elif method != "pearson":
        raise HarnessError(f"unknown correlation method {method!r}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


@dataclass
class SRCCEntry:
    start: str
    metric: str
    n: int
    nominal_mean: float
    perturbed_mean: float
    correlation: Optional[float]

    @property
    def defined(self) -> bool:
        return self.correlation is not None


@dataclass
class SRCCReport:
    method: str
    entries: List[SRCCEntry]

    def get(self, start: str, metric: str) -> SRCCEntry:
        for e in self.entries:
            if e.start == start and e.metric == metric:
                return e
        raise KeyError((start, metric))

    def to_dict(self) -> dict:
        return {"method": self.method, "metrics": list(METRICS),
                "entries": [asdict(e) for e in self.entries]}

    def table_rows(self) -> List[list]:
        """One row per start position: nominal, perturbed, correlation for each metric."""
        starts = [s for s in START_POSITIONS if any(e.start == s for e in self.entries)]
        rows = []
        for s in starts:
            row = [s, self.get(s, METRICS[0]).n]
            for m in METRICS:
                e = self.get(s, m)
                row += [e.nominal_mean, e.perturbed_mean, "undefined" if e.correlation is None else e.correlation]
            rows.append(row)
        return rows

    @staticmethod
    def table_header() -> List[str]:
        head = ["start", "n"]
        for m in METRICS:
            head += [f"{m}_nominal", f"{m}_perturbed", f"{m}_srcc"]
        return head


def srcc(nominal: Sequence[TrialResult], perturbed: Sequence[TrialResult], method: str = "pearson") -> SRCCReport:
    """Correlate paired nominal/perturbed runs per start position and metric."""
    if len(nominal) != len(perturbed):
        raise HarnessError("nominal and perturbed trial counts differ")
    for a, b in zip(nominal, perturbed):
        if a.seed != b.seed or a.start != b.start:
            raise HarnessError(f"unpaired trials: ({a.start}, {a.seed}) vs ({b.start}, {b.seed})")
    entries = []
    for start in START_POSITIONS:
        pairs = [(a, b) for a, b in zip(nominal, perturbed) if a.start == start]
        if not pairs:
            continue
        for m in METRICS:
            xs = [a.metric(m) for a, _ in pairs]
            ys = [b.metric(m) for _, b in pairs]
            corr = correlation(xs, ys, method) if len(pairs) >= 2 else None
            entries.append(SRCCEntry(start, m, len(pairs), float(np.mean(xs)), float(np.mean(ys)), corr))
    return SRCCReport(method, entries)


@dataclass
class Comparison:
    results: Dict[str, List[TrialResult]]
    summaries: Dict[str, Dict[str, Dict[str, float]]]

    def mean_reward(self, name: str) -> float:
        return self.summaries[name]["cumulative_reward"]["mean"]

    def table_rows(self) -> List[list]:
        rows = []
        for name, summ in self.summaries.items():
            for metric, st in summ.items():
                rows.append([name, metric] + [st[k] for k in ("n", "mean", "std", "min", "q1", "median", "q3", "iqr", "max")])
        return rows

    @staticmethod
    def table_header() -> List[str]:
        return ["policy", "metric", "n", "mean", "std", "min", "q1", "median", "q3", "iqr", "max"]


def compare_results(results: Mapping[str, Sequence[TrialResult]]) -> Comparison:
    keys = None
    for name, rs in results.items():
        k = [(r.seed, r.start) for r in rs]
        if keys is None:
            keys = k
        elif k != keys:
            raise HarnessError(f"policy {name!r} was evaluated on a different seed set")
    return Comparison({k: list(v) for k, v in results.items()},
                      {k: summarize(v) for k, v in results.items()})


def compare(policies: Mapping[str, Policy], env_cfg: EnvConfig, n: int, starts: str = "mixed",
            base_seed: int = 0, reward_kind: str = "combined", wts: Optional[RewardWeights] = None,
            jobs: int = 1) -> Comparison:
    return compare_results({
        name: run_trials(p, env_cfg, n, starts, base_seed, reward_kind, wts, jobs=jobs)
        for name, p in policies.items()
    })


# -- output files ----------------------------------------------------------------

def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_trials(path: Path, results: Sequence[TrialResult]) -> None:
    write_csv(path, TRIAL_COLUMNS, [r.row() for r in results])


def write_trace(path: Path, result: TrialResult) -> None:
    write_csv(path, TRACE_COLUMNS, result.trace or [])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def write_srcc(out_dir: Path, report: SRCCReport) -> None:
    write_csv(out_dir / "srcc_table.csv", SRCCReport.table_header(), report.table_rows())
    write_json(out_dir / "srcc_report.json", report.to_dict())


def write_comparison(out_dir: Path, comp: Comparison, stem: str = "comparison") -> None:
    write_csv(out_dir / f"{stem}.csv", Comparison.table_header(), comp.table_rows())
    rows = [r.row() for rs in comp.results.values() for r in rs]
    write_csv(out_dir / f"{stem}_trials.csv", TRIAL_COLUMNS, rows)
