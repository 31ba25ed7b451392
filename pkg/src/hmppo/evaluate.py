"""Evaluation harness: QoS satisfaction sweeps, throughput traces, utilization tables."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import torch

from .baselines import DQNAgent, DQNConfig, GreedyPolicy, StaticPolicy
from .env import AllocationDecision, SlicingEnv
from .policy import action_to_numpy, batch_obs
from .scenario import DOMAINS, ConfigError, Scenario
from .trainer import apply_action, check_dims, load_checkpoint, load_policy
from .traffic import MAX_LOAD, synth_trace

logger = logging.getLogger(__name__)

METHODS = ("hmppo", "standard_ppo", "dqn", "greedy", "static")
LEARNED = ("hmppo", "standard_ppo", "dqn")
EVAL_SEED_OFFSET = 10_000


class MissingCheckpointError(RuntimeError):
    pass


class Allocator(Protocol):
    name: str

    def decide_batch(self, envs: Sequence[SlicingEnv], obs: Sequence[dict]) -> list[Any]: ...


# ---------------------------------------------------------------- metrics
def qos_satisfaction_rate(satisfied: np.ndarray | Sequence) -> float:
    """Fraction of (user, step) observations with no violated target."""
    arr = np.asarray(satisfied, dtype=bool)
    if arr.size == 0:
        raise ValueError("qos_satisfaction_rate needs a non-empty window")
    return float(arr.mean())


def overall_utilization(radio_pct: float, bandwidth_pct: float, compute_pct: float) -> float:
    """Overall utilization is the plain mean of the three domain percentages."""
    return (radio_pct + bandwidth_pct + compute_pct) / 3.0


def utilization_report(used: np.ndarray, capacities: Sequence[float], buckets: int | Sequence[Sequence[int]]
                       ) -> list[dict[str, float]]:
    """Per time bucket: mean used/capacity in percent per domain, plus the overall mean.

    ``used`` is (T, 3) resource amounts per step; ``buckets`` is either a
    number of equal consecutive slots or explicit lists of step indices.
    """
    cap = np.asarray(capacities, dtype=float)
    if cap.shape != (3,) or np.any(cap <= 0):
        raise ConfigError("utilization_report needs three positive capacities")
    used = np.asarray(used, dtype=float)
    if isinstance(buckets, int):
        if buckets < 1 or buckets > len(used):
            raise ValueError("bucket count must lie in [1, number of steps]")
        groups = np.array_split(np.arange(len(used)), buckets)
    else:
        groups = [np.asarray(g, dtype=int) for g in buckets]
    rows = []
    for i, g in enumerate(groups):
        if len(g) == 0:
            raise ValueError(f"bucket {i} is empty")
        pct = np.clip(used[g].mean(axis=0) / cap * 100.0, 0.0, 100.0)
        rows.append({"slot": f"T{i + 1}", "radio": float(pct[0]), "bandwidth": float(pct[1]),
                     "compute": float(pct[2]), "overall": overall_utilization(*pct)})
    return rows


def format_utilization_table(rows: Sequence[dict[str, float]]) -> str:
    lines = ["Time Slot\tRadio Utilization (%)\tBandwidth Utilization (%)\tComputing Utilization (%)"
             "\tOverall Utilization (%)"]
    for r in rows:
        lines.append(f"{r['slot']}\t{r['radio']:.2f}\t{r['bandwidth']:.2f}\t{r['compute']:.2f}\t{r['overall']:.2f}")
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- allocators
class HeuristicAllocator:
    def __init__(self, policy) -> None:
        self.policy = policy
        self.name = policy.name

    def decide_batch(self, envs, obs):
        return [self.policy.decide(env, o) for env, o in zip(envs, obs)]


class DQNAllocator:
    def __init__(self, agent: DQNAgent) -> None:
        self.agent = agent
        self.name = "dqn"

    def decide_batch(self, envs, obs):
        return [self.agent.decide(env, o) for env, o in zip(envs, obs)]


class PolicyAllocator:
    """Greedy-mode evaluation of a trained actor-critic."""

    def __init__(self, policy, name: str) -> None:
        self.policy = policy
        self.name = name

    def decide_batch(self, envs, obs):
        with torch.no_grad():
            action, *_ = self.policy.act(batch_obs(list(obs)), "greedy")
        return [action_to_numpy(action, i) for i in range(len(envs))]


def load_dqn(path: str | Path, scenario: Scenario) -> DQNAgent:
    st = load_checkpoint(path)
    check_dims(st, scenario)
    agent = DQNAgent(scenario, DQNConfig(**st["dqn_cfg"]))
    agent.load_state_dict(st["dqn"])
    return agent


def make_allocator(method: str, scenario: Scenario, checkpoint: str | Path | None = None) -> Allocator:
    if method == "greedy":
        return HeuristicAllocator(GreedyPolicy(scenario))
    if method == "static":
        return HeuristicAllocator(StaticPolicy(scenario))
    if method not in LEARNED:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    if checkpoint is None or not Path(checkpoint).exists():
        raise MissingCheckpointError(f"{method}: checkpoint {checkpoint} not found")
    if method == "dqn":
        return DQNAllocator(load_dqn(checkpoint, scenario))
    policy, st = load_policy(checkpoint, scenario)
    if st["method"] != method:
        raise ConfigError(f"checkpoint {checkpoint} holds a {st['method']} policy, not {method}")
    return PolicyAllocator(policy, method)


# --------------------------------------------------------------- episodes
@dataclass
class RunResult:
    """Step series of one or more lockstep episodes (axis 0 = episode)."""

    method: str
    satisfied: np.ndarray    # (E, T, U) bool
    throughput: np.ndarray   # (E, T) served bits/s
    utilization: np.ndarray  # (E, T, 3) percent of capacity actually used
    costs: np.ndarray        # (E, T, 3)
    offered: np.ndarray      # (E, T) offered bits/s, backlog included

    def satisfaction_per_episode(self) -> np.ndarray:
        return self.satisfied.mean(axis=(1, 2))

    def summary(self) -> dict[str, Any]:
        sat = self.satisfaction_per_episode()
        util = self.utilization.mean(axis=(0, 1))
        return {
            "method": self.method,
            "episodes": int(self.satisfied.shape[0]),
            "qos_satisfaction_mean": float(sat.mean()),
            "qos_satisfaction_std": float(sat.std()),
            "throughput_mean": float(self.throughput.mean()),
            "throughput_std": float(self.throughput.mean(axis=1).std()),
            "delay_violation_cost": float(self.costs[..., 0].mean()),
            "utilization": {d: float(u) for d, u in zip(DOMAINS, util)},
        }


def run_episodes(allocator: Allocator, scenario: Scenario, traces: Sequence[np.ndarray],
                 seeds: Sequence[int]) -> RunResult:
    """Run one episode per (trace, seed) pair in lockstep."""
    envs = [SlicingEnv(scenario, tr) for tr in traces]
    obs = [env.reset(seed=EVAL_SEED_OFFSET + int(s)) for env, s in zip(envs, seeds)]
    E, T, U = len(envs), scenario.horizon, scenario.num_users
    satisfied = np.zeros((E, T, U), dtype=bool)
    throughput = np.zeros((E, T))
    offered = np.zeros((E, T))
    utilization = np.zeros((E, T, 3))
    costs = np.zeros((E, T, 3))
    for t in range(T):
        decisions = allocator.decide_batch(envs, obs)
        for i, (env, dec) in enumerate(zip(envs, decisions)):
            res = env.step(dec) if isinstance(dec, AllocationDecision) else apply_action(env, dec)
            satisfied[i, t] = res.qos.satisfied
            throughput[i, t] = res.served_bits / scenario.dt
            offered[i, t] = float(res.qos.offered_rate.sum())
            utilization[i, t] = res.used.sum(axis=0) / env.cap * 100.0
            costs[i, t] = res.costs
            obs[i] = env.observe()
    return RunResult(allocator.name, satisfied, throughput, np.clip(utilization, 0.0, 100.0), costs, offered)


def evaluate(allocator: Allocator, scenario: Scenario, load: float, seeds: Sequence[int],
             pattern: str = "bursty") -> RunResult:
    traces = [synth_trace(load, pattern, scenario.horizon, int(s), scenario.num_slices).multipliers for s in seeds]
    return run_episodes(allocator, scenario, traces, seeds)


# --------------------------------------------------------------- experiments
@dataclass
class ExperimentConfig:
    scenario: Scenario
    methods: tuple[str, ...] = METHODS
    pattern: str = "bursty"
    cdr_path: str | None = None
    loads: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "results"
    checkpoints: dict[str, str] = field(default_factory=dict)
    trace_load: float = 0.8
    high_load_window: tuple[float, float] = (0.55, 0.75)
    high_load_boost: float = 1.5
    utilization_slots: int = 10
    utilization_loads: tuple[float, float] = (0.3, 1.2)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(not 0.0 <= x <= MAX_LOAD for x in self.loads):
            raise ConfigError(f"load levels must lie in [0, {MAX_LOAD}]")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}")


def _allocators(cfg: ExperimentConfig) -> list[Allocator]:
    out = []
    for m in cfg.methods:
        try:
            out.append(make_allocator(m, cfg.scenario, cfg.checkpoints.get(m)))
        except MissingCheckpointError as exc:
            logger.warning("skipping %s: %s", m, exc)
    if not out:
        raise MissingCheckpointError("no method could be evaluated (all skipped)")
    return out


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_sweep(cfg: ExperimentConfig, allocators: Sequence[Allocator] | None = None) -> dict[str, Any]:
    """Satisfaction-vs-load curves, mean and std across seeds; writes ``sweep.json``."""
    allocators = list(allocators) if allocators is not None else _allocators(cfg)
    loads = sorted(set(float(x) for x in cfg.loads))
    curves: dict[str, Any] = {}
    for alloc in allocators:
        points = []
        for load in loads:
            if cfg.cdr_path:
                traces = [_cdr_multipliers(cfg, load) for _ in cfg.seeds]
                run = run_episodes(alloc, cfg.scenario, traces, cfg.seeds)
            else:
                run = evaluate(alloc, cfg.scenario, load, cfg.seeds, cfg.pattern)
            per_seed = run.satisfaction_per_episode()
            points.append({"load": load, "mean": float(per_seed.mean()), "std": float(per_seed.std()),
                           "per_seed": [float(x) for x in per_seed],
                           "delay_violation_cost": float(run.costs[..., 0].mean())})
        curves[alloc.name] = points
    result = {"loads": loads, "seeds": list(cfg.seeds), "pattern": cfg.pattern, "curves": curves}
    _write_json(Path(cfg.out_dir) / "sweep.json", result)
    return result


def _cdr_multipliers(cfg: ExperimentConfig, load: float) -> np.ndarray:
    from .traffic import cdr_to_trace, load_cdr

    trace = cdr_to_trace(load_cdr(cfg.cdr_path), horizon=cfg.scenario.horizon, dt=cfg.scenario.dt)
    return trace.scaled_to(load).multipliers


def high_load_trace(cfg: ExperimentConfig, seed: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Diurnal (or CDR) trace with the configured window boosted."""
    T = cfg.scenario.horizon
    if cfg.cdr_path:
        mult = _cdr_multipliers(cfg, cfg.trace_load)
    else:
        mult = synth_trace(cfg.trace_load, "diurnal", T, seed, cfg.scenario.num_slices).multipliers.copy()
    lo, hi = int(cfg.high_load_window[0] * T), int(cfg.high_load_window[1] * T)
    mult[lo:hi] *= cfg.high_load_boost
    return mult, (lo, hi)


def throughput_trace(cfg: ExperimentConfig, allocators: Sequence[Allocator] | None = None) -> dict[str, Any]:
    """Per-step served throughput per method on one shared traffic trace; writes ``throughput.json``."""
    allocators = list(allocators) if allocators is not None else _allocators(cfg)
    mult, window = high_load_trace(cfg, cfg.seeds[0])
    series: dict[str, Any] = {}
    offered = None
    for alloc in allocators:
        run = run_episodes(alloc, cfg.scenario, [mult] * len(cfg.seeds), cfg.seeds)
        series[alloc.name] = [float(x) for x in run.throughput.mean(axis=0)]
        offered = run.offered.mean(axis=0)
    result = {"horizon": cfg.scenario.horizon, "high_load_window": list(window), "series": series,
              "offered": [float(x) for x in offered]}
    _write_json(Path(cfg.out_dir) / "throughput.json", result)
    return result


def utilization_table(cfg: ExperimentConfig, method: str = "hmppo",
                      allocator: Allocator | None = None) -> list[dict[str, float]]:
    """Table-1 style rows over a load ramp split into ``utilization_slots`` slots."""
    alloc = allocator or make_allocator(method, cfg.scenario, cfg.checkpoints.get(method))
    T = cfg.scenario.horizon
    lo, hi = cfg.utilization_loads
    ramp = np.linspace(lo, hi, T)
    traces = []
    for s in cfg.seeds:
        noise = synth_trace(1.0, "bursty", T, int(s), cfg.scenario.num_slices).multipliers
        traces.append(noise * ramp[:, None])
    run = run_episodes(alloc, cfg.scenario, traces, cfg.seeds)
    used_pct = run.utilization.mean(axis=0)  # (T, 3) percent
    rows = utilization_report(used_pct, (100.0, 100.0, 100.0), cfg.utilization_slots)
    out = Path(cfg.out_dir)
    _write_json(out / "utilization.json", {"method": alloc.name, "rows": rows})
    (out / "utilization.tsv").write_text(format_utilization_table(rows))
    return rows


# ------------------------------------------------------------------- plots
def plot_results(out_dir: str | Path) -> list[Path]:
    """Render whatever result files exist in ``out_dir``; never modifies them."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    written = []
    sweep = out / "sweep.json"
    if sweep.exists():
        data = json.loads(sweep.read_text())
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, pts in data["curves"].items():
            x = [p["load"] for p in pts]
            y = np.array([p["mean"] for p in pts])
            e = np.array([p["std"] for p in pts])
            ax.plot(x, y, marker="o", label=name)
            ax.fill_between(x, y - e, y + e, alpha=0.15)
        ax.set_xlabel("normalized traffic load")
        ax.set_ylabel("QoS satisfaction rate")
        ax.set_ylim(0, 1.02)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "sweep.png", dpi=120)
        plt.close(fig)
        written.append(out / "sweep.png")
    thr = out / "throughput.json"
    if thr.exists():
        data = json.loads(thr.read_text())
        fig, ax = plt.subplots(figsize=(7, 4))
        for name, ys in data["series"].items():
            ax.plot(np.asarray(ys) / 1e6, label=name, lw=1.2)
        lo, hi = data["high_load_window"]
        ax.axvspan(lo, hi, color="grey", alpha=0.2, label="high load")
        ax.set_xlabel("control step")
        ax.set_ylabel("system throughput (Mbit/s)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "throughput.png", dpi=120)
        plt.close(fig)
        written.append(out / "throughput.png")
    return written
