"""Constrained PPO: rollouts, GAE, clipped updates, dual ascent, checkpoints."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import pickle
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .env import NUM_COSTS, COST_NAMES, SlicingEnv, decision_from_ratios
from .policy import ModelConfig, action_to_numpy, batch_obs, build_policy
from .reward import ConstraintState, RewardConfig, compute_reward, dual_update, objective_vector
from .scenario import Scenario
from .traffic import synth_trace

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HMPPO-CKPT\n"
CHECKPOINT_VERSION = 1

OBS_KEYS = ("nodes", "adjacency", "history", "users", "user_share", "held_admission", "held_budget", "upper_step")
ACT_KEYS = ("upper", "admission", "budget_logits", "user_logits", "eff_admission", "eff_budget")


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class DimensionMismatchError(CheckpointError):
    pass


# ------------------------------------------------------------ pure helpers
def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, bootstrap_value,
                discount: float, gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    Arrays are (T,) or (T, N); ``dones[t]`` marks that the episode ended after
    step t, so nothing is bootstrapped across it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    if not 0 < discount <= 1 or not 0 <= gae_lambda <= 1:
        raise ValueError("discount must lie in (0, 1] and gae_lambda in [0, 1]")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    next_value = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), rewards.shape[1:])
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + discount * next_value * nonterminal - values[t]
        last = delta + discount * gae_lambda * nonterminal * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def ppo_clip_loss(ratio, advantage, clip: float):
    """Negated clipped surrogate; works elementwise on floats or tensors."""
    if isinstance(ratio, torch.Tensor):
        return -torch.min(ratio * advantage, torch.clamp(ratio, 1 - clip, 1 + clip) * advantage)
    clipped = min(max(ratio, 1 - clip), 1 + clip)
    return -min(ratio * advantage, clipped * advantage)


# ------------------------------------------------------------------ config
@dataclass
class TrainConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 256
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    lr_dual: float = 0.01
    rollout_steps: int = 2048
    total_steps: int = 200_000
    seed: int = 0
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 8
    alternate_levels: bool = False
    normalize_advantages: bool = True
    ratio_guard: float = 10.0
    sensitivity: float = 2.0
    # reward assembly; the flat baseline switches all three off
    adaptive_weights: bool = True
    shaping: bool = True
    lagrangian: bool = True
    # training traffic: each episode draws a load level and a pattern
    train_loads: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    patterns: tuple[str, ...] = ("bursty", "diurnal", "constant")

    def __post_init__(self) -> None:
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if min(self.lr_policy, self.lr_value, self.lr_dual) < 0:
            raise ValueError("learning rates must be >= 0")
        if self.rollout_steps % self.n_envs:
            raise ValueError("rollout_steps must be a multiple of n_envs")
        self.train_loads = tuple(float(x) for x in self.train_loads)
        self.patterns = tuple(self.patterns)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(self.sensitivity, self.adaptive_weights, self.shaping, self.lagrangian, self.discount)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["train_loads"] = list(self.train_loads)
        d["patterns"] = list(self.patterns)
        return d

    @classmethod
    def for_method(cls, method: str, **overrides: Any) -> "TrainConfig":
        """Defaults per learned method; ``standard_ppo`` drops shaping, adaptive weights and duals."""
        if method == "standard_ppo":
            overrides = {"adaptive_weights": False, "shaping": False, "lagrangian": False, **overrides}
        return cls(**overrides)


# ------------------------------------------------------------------ rollout
def apply_action(env: SlicingEnv, act: dict[str, np.ndarray]):
    """Turn a policy action into amounts, step the env, and remember the held budget."""
    decision = decision_from_ratios(act["eff_admission"], act["eff_budget"], act["user_ratio"],
                                    env.pool, env.user_slice)
    env.held_admission = np.asarray(act["eff_admission"], dtype=float).copy()
    env.held_budget = np.asarray(act["eff_budget"], dtype=float).copy()
    return env.step(decision)


@dataclass
class RolloutBuffer:
    """Per-step trajectory storage, (T, N, ...) arrays aligned by step index."""

    steps: int
    n_envs: int
    obs: dict[str, np.ndarray] = field(default_factory=dict)
    actions: dict[str, np.ndarray] = field(default_factory=dict)
    log_prob: np.ndarray = None  # type: ignore[assignment]
    value: np.ndarray = None  # type: ignore[assignment]
    cost_values: np.ndarray = None  # type: ignore[assignment]
    base_reward: np.ndarray = None  # type: ignore[assignment]
    shaped_reward: np.ndarray = None  # type: ignore[assignment]
    penalized_reward: np.ndarray = None  # type: ignore[assignment]
    costs: np.ndarray = None  # type: ignore[assignment]
    done: np.ndarray = None  # type: ignore[assignment]
    potential: np.ndarray = None  # type: ignore[assignment]
    satisfaction: np.ndarray = None  # type: ignore[assignment]
    pos: int = 0

    def __post_init__(self) -> None:
        T, N = self.steps, self.n_envs
        for name in ("log_prob", "value", "base_reward", "shaped_reward", "penalized_reward", "done",
                     "potential", "satisfaction"):
            setattr(self, name, np.zeros((T, N)))
        self.cost_values = np.zeros((T, N, NUM_COSTS))
        self.costs = np.zeros((T, N, NUM_COSTS))

    def add(self, obs: dict[str, np.ndarray], actions: dict[str, np.ndarray], **scalars: np.ndarray) -> None:
        if self.pos >= self.steps:
            raise IndexError("rollout buffer is full")
        t = self.pos
        for k, v in obs.items():
            if k not in self.obs:
                self.obs[k] = np.zeros((self.steps, *v.shape), dtype=v.dtype)
            self.obs[k][t] = v
        for k, v in actions.items():
            if k not in self.actions:
                self.actions[k] = np.zeros((self.steps, *v.shape), dtype=v.dtype)
            self.actions[k][t] = v
        for k, v in scalars.items():
            getattr(self, k)[t] = v
        self.pos += 1

    @property
    def full(self) -> bool:
        return self.pos == self.steps


class TraceSampler:
    """Draws one synthetic traffic trace per training episode."""

    def __init__(self, loads: Sequence[float], patterns: Sequence[str], horizon: int, num_slices: int) -> None:
        self.loads, self.patterns = list(loads), list(patterns)
        self.horizon, self.num_slices = horizon, num_slices

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        load = self.loads[int(rng.integers(len(self.loads)))]
        pattern = self.patterns[int(rng.integers(len(self.patterns)))]
        return synth_trace(load, pattern, self.horizon, int(rng.integers(2**31)), self.num_slices).multipliers


class VecRunner:
    """N environments stepped in lockstep; all randomness comes from ``rng``."""

    def __init__(self, scenario: Scenario, n_envs: int, sampler: Callable[[np.random.Generator], np.ndarray],
                 rng: np.random.Generator) -> None:
        self.scenario = scenario
        self.sampler = sampler
        self.rng = rng
        self.envs = [SlicingEnv(scenario) for _ in range(n_envs)]
        self.obs = [self._reset(env) for env in self.envs]
        self.phi = np.zeros(n_envs)
        self.ep_stats = [self._fresh_stats() for _ in range(n_envs)]
        self.finished: list[dict[str, float]] = []

    @staticmethod
    def _fresh_stats() -> dict[str, float]:
        return {"reward": 0.0, "satisfaction": 0.0, "steps": 0}

    def _reset(self, env: SlicingEnv) -> dict[str, np.ndarray]:
        env.set_traffic(self.sampler(self.rng))
        return env.reset(seed=int(self.rng.integers(2**31)))


# ----------------------------------------------------------------- trainer
class Trainer:
    def __init__(self, scenario: Scenario, cfg: TrainConfig, method: str = "hmppo",
                 model_cfg: ModelConfig | None = None) -> None:
        self.scenario, self.cfg, self.method = scenario, cfg, method
        self.model_cfg = model_cfg or ModelConfig()
        torch.manual_seed(cfg.seed)
        self.torch_gen = torch.Generator().manual_seed(cfg.seed)
        self.policy = build_policy(method, scenario.dims(), self.model_cfg)
        critic_ids = {id(p) for p in self.policy.critic.parameters()}
        actor_params = [p for p in self.policy.parameters() if id(p) not in critic_ids]
        self.optimizer = torch.optim.Adam([
            {"params": actor_params, "lr": cfg.lr_policy},
            {"params": list(self.policy.critic.parameters()), "lr": cfg.lr_value},
        ], eps=1e-5)
        self.rng = np.random.default_rng(cfg.seed)
        self.constraints = ConstraintState(np.asarray(scenario.constraint_bounds, float), step_size=cfg.lr_dual)
        sampler = TraceSampler(cfg.train_loads, cfg.patterns, scenario.horizon, scenario.num_slices)
        self.runner = VecRunner(scenario, cfg.n_envs, sampler, self.rng)
        self.reward_cfg = cfg.reward_config()
        self.iteration = 0
        self.env_steps = 0
        self.metrics: list[dict[str, Any]] = []
        self.value_scale = 1.0 - cfg.discount if cfg.discount < 1 else 1.0 / scenario.horizon

    # ----------------------------------------------------------- rollout
    def collect(self) -> tuple[RolloutBuffer, np.ndarray, np.ndarray]:
        cfg, runner = self.cfg, self.runner
        steps = cfg.rollout_steps // cfg.n_envs
        buf = RolloutBuffer(steps, cfg.n_envs)
        self.policy.eval()
        for _ in range(steps):
            obs_t = batch_obs(runner.obs)
            action, logp, value, cvals = self.policy.act(obs_t, "sample", self.torch_gen)
            obs_np = {k: np.stack([o[k] for o in runner.obs]) for k in OBS_KEYS}
            act_np = {k: action[k].numpy() for k in ACT_KEYS}
            rew = np.zeros((3, cfg.n_envs))
            costs = np.zeros((cfg.n_envs, NUM_COSTS))
            done = np.zeros(cfg.n_envs)
            pot = runner.phi.copy()
            sat = np.zeros(cfg.n_envs)
            for i, env in enumerate(runner.envs):
                res = apply_action(env, action_to_numpy(action, i))
                phi_next = env.qos_potential()
                objv = objective_vector(res.qos, env.user_slice, env.delay_bound_u, res.overdraw,
                                        res.decision.admissions)
                rb = compute_reward(objv, runner.phi[i], phi_next, res.costs, self.constraints, self.reward_cfg)
                rew[:, i] = (rb.base, rb.shaped, rb.penalized)
                costs[i] = res.costs
                sat[i] = float(res.qos.satisfied.mean())
                st = runner.ep_stats[i]
                st["reward"] += rb.base
                st["satisfaction"] += sat[i]
                st["steps"] += 1
                runner.phi[i] = phi_next
                if env.done():
                    done[i] = 1.0
                    runner.finished.append({k: (v / st["steps"] if k != "steps" else v) for k, v in st.items()})
                    runner.ep_stats[i] = runner._fresh_stats()
                    runner.obs[i] = runner._reset(env)
                    runner.phi[i] = 0.0
                else:
                    runner.obs[i] = env.observe()
            buf.add(obs_np, act_np, log_prob=logp.numpy(), value=value.numpy() / self.value_scale,
                    cost_values=cvals.numpy() / self.value_scale, base_reward=rew[0], shaped_reward=rew[1],
                    penalized_reward=rew[2], costs=costs, done=done, potential=pot, satisfaction=sat)
        with torch.no_grad():
            out = self.policy.upper(batch_obs(runner.obs))
        self.env_steps += steps * cfg.n_envs
        return buf, out.value.numpy() / self.value_scale, out.cost_values.numpy() / self.value_scale

    # ------------------------------------------------------------ update
    def update(self, buf: RolloutBuffer, last_value: np.ndarray, last_cost_values: np.ndarray) -> dict[str, float]:
        cfg = self.cfg
        adv, ret = compute_gae(buf.penalized_reward, buf.value, buf.done, last_value, cfg.discount, cfg.gae_lambda)
        cost_ret = np.zeros_like(buf.costs)
        for k in range(NUM_COSTS):
            _, cost_ret[..., k] = compute_gae(buf.costs[..., k], buf.cost_values[..., k], buf.done,
                                              last_cost_values[:, k], cfg.discount, cfg.gae_lambda)
        n = buf.steps * buf.n_envs
        flat = lambda a: a.reshape(n, *a.shape[2:])  # noqa: E731
        obs = {k: torch.as_tensor(flat(v)) for k, v in buf.obs.items()}
        obs["upper_step"] = obs["upper_step"].bool()
        obs["user_slice"] = torch.as_tensor(self.runner.envs[0].user_slice)
        acts = {k: torch.as_tensor(flat(v)) for k, v in buf.actions.items()}
        old_logp = torch.as_tensor(flat(buf.log_prob), dtype=torch.float32)
        adv_t = torch.as_tensor(flat(adv), dtype=torch.float32)
        if cfg.normalize_advantages and n > 1:
            adv_t = (adv_t - adv_t.mean()) / (adv_t.std() + 1e-8)
        ret_t = torch.as_tensor(flat(ret) * self.value_scale, dtype=torch.float32)
        cret_t = torch.as_tensor(flat(cost_ret) * self.value_scale, dtype=torch.float32)

        self.policy.train()
        stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_frac": 0.0}
        batches = 0
        first_ratio_dev = None
        ratio_dev = 0.0
        for epoch in range(cfg.epochs):
            perm = self.rng.permutation(n)
            epoch_dev, epoch_batches = 0.0, 0
            for start in range(0, n, cfg.minibatch_size):
                idx = torch.as_tensor(perm[start:start + cfg.minibatch_size])
                mb_obs = {k: (v if k == "user_slice" else v[idx]) for k, v in obs.items()}
                mb_act = {k: v[idx] for k, v in acts.items()}
                logp, ent, value, cvals = self.policy.evaluate_actions(mb_obs, mb_act)
                log_ratio = logp - old_logp[idx]
                if cfg.alternate_levels:
                    level_upper = (self.iteration + epoch) % 2 == 0
                    sel = mb_act["upper"] > 0.5 if level_upper else mb_act["upper"] <= 0.5
                    log_ratio = torch.where(sel, log_ratio, log_ratio.detach() * 0)
                ratio = torch.exp(log_ratio)
                if first_ratio_dev is None:
                    first_ratio_dev = float((ratio.detach() - 1).abs().max())
                pg = ppo_clip_loss(ratio, adv_t[idx], cfg.clip).mean()
                v_loss = ((value - ret_t[idx]) ** 2).mean()
                c_loss = ((cvals - cret_t[idx]) ** 2).mean()
                loss = pg + cfg.value_coef * (v_loss + c_loss) - cfg.entropy_coef * ent.mean()
                self.optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(self.policy.parameters(), cfg.max_grad_norm)
                self.optimizer.step()
                with torch.no_grad():
                    stats["policy_loss"] += float(pg)
                    stats["value_loss"] += float(v_loss)
                    stats["entropy"] += float(ent.mean())
                    stats["approx_kl"] += float(((ratio - 1) - log_ratio).mean())
                    stats["clip_frac"] += float(((ratio - 1).abs() > cfg.clip).float().mean())
                    epoch_dev += float((ratio - 1).abs().mean())
                batches += 1
                epoch_batches += 1
            ratio_dev = epoch_dev / max(epoch_batches, 1)
            if ratio_dev > cfg.ratio_guard:
                raise TrainingDivergedError(
                    f"iteration {self.iteration} epoch {epoch}: mean |ratio - 1| = {ratio_dev:.3g} "
                    f"exceeds {cfg.ratio_guard}")
        out = {k: v / max(batches, 1) for k, v in stats.items()}
        out["first_ratio_dev"] = first_ratio_dev if first_ratio_dev is not None else 0.0
        out["ratio_dev"] = ratio_dev
        return out

    # ------------------------------------------------------------- driver
    def run_iteration(self) -> dict[str, Any]:
        buf, last_v, last_cv = self.collect()
        upd = self.update(buf, last_v, last_cv)
        mean_costs = buf.costs.reshape(-1, NUM_COSTS).mean(axis=0)
        if self.cfg.lagrangian and self.constraints.step_size > 0:
            self.constraints = dual_update(self.constraints, mean_costs)
        rec: dict[str, Any] = {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "mean_reward": float(buf.base_reward.mean()),
            "mean_shaped_reward": float(buf.shaped_reward.mean()),
            "mean_penalized_reward": float(buf.penalized_reward.mean()),
            "qos_satisfaction": float(buf.satisfaction.mean()),
        }
        for name, c in zip(COST_NAMES, mean_costs):
            rec[f"cost_{name}"] = float(c)
        for name, lam in zip(COST_NAMES, self.constraints.multipliers):
            rec[f"lambda_{name}"] = float(lam)
        rec.update(upd)
        finished = self.runner.finished
        rec["episodes"] = len(finished)
        if finished:
            rec["episode_satisfaction"] = float(np.mean([f["satisfaction"] for f in finished]))
        self.runner.finished = []
        self.iteration += 1
        self.metrics.append(rec)
        return rec

    def train(self, total_steps: int | None = None, log: Callable[[dict], None] | None = None,
              metrics_path: str | Path | None = None) -> list[dict[str, Any]]:
        target = self.cfg.total_steps if total_steps is None else total_steps
        fh = open(metrics_path, "a") if metrics_path is not None else None
        try:
            while self.env_steps < target:
                rec = self.run_iteration()
                if fh is not None:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    fh.flush()
                if log is not None:
                    log(rec)
        finally:
            if fh is not None:
                fh.close()
        return self.metrics

    # -------------------------------------------------------- checkpoints
    def state(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "model_cfg": self.model_cfg.to_dict(),
            "train_cfg": self.cfg.to_dict(),
            "scenario": self.scenario.to_dict(),
            "dims": self.scenario.dims(),
            "policy": self.policy.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "multipliers": self.constraints.multipliers.tolist(),
            "running_cost": self.constraints.running_cost.tolist(),
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "torch_rng": torch.get_rng_state(),
            "torch_gen": self.torch_gen.get_state(),
            "runner": pickle.dumps(self.runner),
            "metrics": self.metrics,
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(self.state(), path)

    @classmethod
    def resume(cls, path: str | Path, scenario: Scenario | None = None) -> "Trainer":
        from .scenario import scenario_from_dict

        st = load_checkpoint(path)
        scen = scenario if scenario is not None else scenario_from_dict(st["scenario"])
        check_dims(st, scen)
        cfg = TrainConfig(**st["train_cfg"])
        tr = cls(scen, cfg, st["method"], ModelConfig(**st["model_cfg"]))
        tr.policy.load_state_dict(st["policy"])
        tr.optimizer.load_state_dict(st["optimizer"])
        tr.constraints.multipliers = np.asarray(st["multipliers"], float)
        tr.constraints.running_cost = np.asarray(st["running_cost"], float)
        tr.iteration, tr.env_steps = st["iteration"], st["env_steps"]
        torch.set_rng_state(st["torch_rng"])
        tr.torch_gen.set_state(st["torch_gen"])
        tr.runner = pickle.loads(st["runner"])
        tr.rng = tr.runner.rng
        tr.metrics = list(st["metrics"])
        return tr


def check_dims(state: dict[str, Any], scenario: Scenario) -> None:
    want, have = state["dims"], scenario.dims()
    if want != have:
        diff = {k: (want.get(k), have.get(k)) for k in set(want) | set(have) if want.get(k) != have.get(k)}
        raise DimensionMismatchError(f"checkpoint dims differ from scenario (checkpoint, scenario): {diff}")


def save_checkpoint(state: dict[str, Any], path: str | Path) -> Path:
    """Write ``magic | header json | payload``; the header carries version and payload digest."""
    path = Path(path)
    bio = io.BytesIO()
    torch.save(state, bio)
    payload = bio.getvalue()
    header = {
        "version": CHECKPOINT_VERSION,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "length": len(payload),
        "method": state.get("method"),
        "dims": state.get("dims"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointIntegrityError(f"{path}: not a checkpoint (bad magic)")
    rest = raw[len(CHECKPOINT_MAGIC):]
    nl = rest.find(b"\n")
    try:
        header = json.loads(rest[:nl])
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: unreadable header") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {header.get('version')} is not supported "
            f"(expected {CHECKPOINT_VERSION})")
    payload = rest[nl + 1:]
    if len(payload) != header.get("length") or hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointIntegrityError(f"{path}: payload digest mismatch (file corrupt or truncated)")
    return torch.load(io.BytesIO(payload), weights_only=False)


def load_policy(path: str | Path, scenario: Scenario | None = None):
    """Rebuild the trained policy stored in a checkpoint."""
    st = load_checkpoint(path)
    if scenario is not None:
        check_dims(st, scenario)
    policy = build_policy(st["method"], st["dims"], ModelConfig(**st["model_cfg"]))
    policy.load_state_dict(st["policy"])
    policy.eval()
    return policy, st


def train(scenario: Scenario, cfg: TrainConfig, method: str = "hmppo", checkpoint: str | Path | None = None,
          metrics_path: str | Path | None = None, log: Callable[[dict], None] | None = None,
          model_cfg: ModelConfig | None = None):
    """Run a full training job; returns (trainer, metrics)."""
    tr = Trainer(scenario, cfg, method, model_cfg)
    metrics = tr.train(log=log, metrics_path=metrics_path)
    if checkpoint is not None:
        tr.save(checkpoint)
    return tr, metrics


def dqn_state(agent) -> dict[str, Any]:
    return {"method": "dqn", "dims": agent.scenario.dims(), "scenario": agent.scenario.to_dict(),
            "dqn_cfg": asdict(agent.cfg), "dqn": agent.state_dict()}


def train_dqn(scenario: Scenario, dqn_cfg=None, cfg: TrainConfig | None = None,
              checkpoint: str | Path | None = None, log: Callable[[dict], None] | None = None):
    """Train the DQN baseline on the same traffic mix as the PPO learners."""
    from .baselines import DQNAgent, DQNConfig

    cfg = cfg or TrainConfig()
    agent = DQNAgent(scenario, dqn_cfg or DQNConfig(seed=cfg.seed))
    sampler = TraceSampler(cfg.train_loads, cfg.patterns, scenario.horizon, scenario.num_slices)
    metrics = agent.train(sampler, log)
    if checkpoint is not None:
        save_checkpoint(dqn_state(agent), checkpoint)
    return agent, metrics
