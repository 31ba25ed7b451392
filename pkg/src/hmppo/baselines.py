"""Comparison allocators: static slicing, greedy, DQN and flat (standard) PPO.

Static and greedy are pure functions of the environment snapshot.  The DQN
agent lives here; the flat PPO actor-critic is in ``hmppo.policy`` so that it
shares the trainer with the hierarchical agent.
"""

from __future__ import annotations

import copy
import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .env import AllocationDecision, SlicingEnv
from .scenario import NUM_DOMAINS, ConfigError, ResourcePool, Scenario, SliceSpec

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("standard_ppo", "dqn", "greedy", "static")


def static_allocate(shares: Sequence[float], pool: ResourcePool, user_slice: np.ndarray) -> AllocationDecision:
    """Fixed share of every domain per slice, split equally among the slice's users."""
    shares = np.asarray(shares, dtype=float)
    if shares.ndim != 1 or np.any(shares < 0) or abs(shares.sum() - 1.0) > 1e-9:
        raise ConfigError(f"static shares must lie on the simplex, got {shares.tolist()}")
    cap = np.asarray(pool.capacities())
    budgets = shares[:, None] * cap[None, :]
    counts = np.bincount(user_slice, minlength=len(shares))
    per_user = budgets / np.maximum(counts, 1)[:, None]
    alloc = per_user[user_slice]
    return AllocationDecision(np.ones(len(shares), dtype=np.int64), budgets, alloc)


def priority_shares(slices: Sequence[SliceSpec]) -> np.ndarray:
    prio = np.array([s.priority for s in slices], dtype=float)
    if prio.sum() <= 0:
        return np.full(len(prio), 1.0 / len(prio))
    return prio / prio.sum()


def greedy_allocate(pool: ResourcePool, demand: np.ndarray, user_slice: np.ndarray,
                    slices: Sequence[SliceSpec]) -> AllocationDecision:
    """Serve users in priority order, each with its full per-domain demand.

    Order: higher slice priority first, then larger unmet demand (sum of
    capacity-normalised needs), then lower user id.  Whatever a domain has
    left is handed out until it runs dry; leftovers stay idle.
    """
    cap = np.asarray(pool.capacities(), dtype=float)
    demand = np.asarray(demand, dtype=float)
    prio = np.array([s.priority for s in slices], dtype=float)
    size = np.sum(np.minimum(demand / cap[None, :], 1e9), axis=1)
    order = sorted(range(len(demand)), key=lambda u: (-prio[user_slice[u]], -size[u], u))
    remaining = cap.copy()
    alloc = np.zeros_like(demand)
    for u in order:
        take = np.minimum(demand[u], remaining)
        alloc[u] = take
        remaining = remaining - take
    num_slices = len(slices)
    budgets = np.zeros((num_slices, NUM_DOMAINS))
    np.add.at(budgets, user_slice, alloc)
    budgets = np.minimum(budgets, cap[None, :])
    return AllocationDecision(np.ones(num_slices, dtype=np.int64), budgets, alloc)


class StaticPolicy:
    name = "static"

    def __init__(self, scenario: Scenario, shares: Sequence[float] | None = None) -> None:
        self.shares = priority_shares(scenario.slices) if shares is None else np.asarray(shares, float)
        static_allocate(self.shares, scenario.pool, np.zeros(0, dtype=np.int64))  # validates

    def decide(self, env: SlicingEnv, obs: dict | None = None) -> AllocationDecision:
        return static_allocate(self.shares, env.pool, env.user_slice)


class GreedyPolicy:
    name = "greedy"

    def __init__(self, scenario: Scenario) -> None:
        self.slices = scenario.slices

    def decide(self, env: SlicingEnv, obs: dict | None = None) -> AllocationDecision:
        return greedy_allocate(env.pool, env.demand(), env.user_slice, self.slices)


# ---------------------------------------------------------------------- DQN
def share_grid(num_slices: int, levels: int = 11) -> np.ndarray:
    """All share vectors on the simplex whose entries are multiples of 1/(levels-1)."""
    steps = levels - 1
    rows = [c for c in itertools.product(range(levels), repeat=num_slices) if sum(c) == steps]
    return np.array(rows, dtype=float) / steps


def flat_features(obs: dict) -> np.ndarray:
    """Flatten the structured observation for the non-graph learners."""
    return np.concatenate([
        obs["nodes"].ravel(), obs["users"].ravel(), obs["history"][-1].ravel(),
    ]).astype(np.float32)


@dataclass
class DQNConfig:
    hidden: int = 128
    lr: float = 5e-4
    discount: float = 0.9
    buffer_size: int = 20000
    batch_size: int = 64
    warmup: int = 1000
    train_every: int = 1
    target_sync: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20000
    total_steps: int = 40000
    levels: int = 11
    q_limit: float = 1e4
    seed: int = 0


class QNetwork(nn.Module):
    def __init__(self, obs_dim: int, num_actions: int, hidden: int) -> None:
        super().__init__()
        self.net = nn.Sequential(nn.Linear(obs_dim, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(),
                                 nn.Linear(hidden, num_actions))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, seed: int = 0) -> None:
        self.obs = np.zeros((capacity, obs_dim), np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), np.float32)
        self.actions = np.zeros(capacity, np.int64)
        self.rewards = np.zeros(capacity, np.float32)
        self.dones = np.zeros(capacity, np.float32)
        self.capacity = capacity
        self.size = 0
        self.pos = 0
        self.rng = np.random.default_rng(seed)

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self.pos
        self.obs[i], self.actions[i], self.rewards[i] = obs, action, reward
        self.next_obs[i], self.dones[i] = next_obs, done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int) -> tuple[np.ndarray, ...]:
        idx = self.rng.integers(0, self.size, size=batch)
        return idx, self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


class QDivergenceError(RuntimeError):
    pass


@dataclass
class DQNAgent:
    """Q-learning over a grid of slice share vectors with equal intra-slice split."""

    scenario: Scenario
    cfg: DQNConfig = field(default_factory=DQNConfig)
    name: str = "dqn"

    def __post_init__(self) -> None:
        torch.manual_seed(self.cfg.seed)
        self.actions = share_grid(self.scenario.num_slices, self.cfg.levels)
        probe = SlicingEnv(self.scenario)
        obs_dim = flat_features(probe.reset(seed=0)).shape[0]
        self.q = QNetwork(obs_dim, len(self.actions), self.cfg.hidden)
        self.target = copy.deepcopy(self.q)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.epsilon = 0.0

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def select(self, features: np.ndarray, epsilon: float) -> int:
        if self.rng.random() < epsilon:
            return int(self.rng.integers(self.num_actions))
        with torch.no_grad():
            q = self.q(torch.as_tensor(features[None]))
        return int(torch.argmax(q, dim=1).item())

    def to_decision(self, action: int, env: SlicingEnv) -> AllocationDecision:
        return static_allocate(self.actions[action], env.pool, env.user_slice)

    def decide(self, env: SlicingEnv, obs: dict) -> AllocationDecision:
        return self.to_decision(self.select(flat_features(obs), self.epsilon), env)

    def train(self, traffic_fn, log=None) -> list[dict]:
        """Train for ``cfg.total_steps`` env steps; ``traffic_fn(rng)`` draws an episode trace."""
        from .reward import RewardConfig, objective_vector, compute_reward, ConstraintState

        cfg = self.cfg
        rcfg = RewardConfig(adaptive=False, shaping=False, lagrangian=False)
        duals = ConstraintState(np.asarray(self.scenario.constraint_bounds))
        env = SlicingEnv(self.scenario)
        opt = torch.optim.Adam(self.q.parameters(), lr=cfg.lr)
        buf = ReplayBuffer(cfg.buffer_size, self.q.net[0].in_features, cfg.seed)
        metrics: list[dict] = []
        episode = 0
        env.set_traffic(traffic_fn(self.rng))
        obs = env.reset(seed=cfg.seed * 100003 + episode)
        feats = flat_features(obs)
        ep_reward, ep_sat, ep_len = 0.0, 0.0, 0
        for t in range(cfg.total_steps):
            frac = min(1.0, t / max(cfg.eps_decay_steps, 1))
            eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
            a = self.select(feats, eps)
            res = env.step(self.to_decision(a, env))
            objv = objective_vector(res.qos, env.user_slice, env.delay_bound_u, res.overdraw,
                                    res.decision.admissions)
            r = compute_reward(objv, 0.0, 0.0, res.costs, duals, rcfg).base
            done = env.done()
            next_obs = env.observe()
            next_feats = flat_features(next_obs)
            buf.add(feats, a, r, next_feats, float(done))
            ep_reward += r
            ep_sat += float(res.qos.satisfied.mean())
            ep_len += 1
            feats = next_feats
            if t >= cfg.warmup and t % cfg.train_every == 0:
                self._learn(buf, opt)
            if t % cfg.target_sync == 0:
                self.target.load_state_dict(self.q.state_dict())
            if done:
                rec = {"episode": episode, "env_steps": t + 1, "mean_reward": ep_reward / ep_len,
                       "qos_satisfaction": ep_sat / ep_len, "epsilon": eps}
                metrics.append(rec)
                if log is not None:
                    log(rec)
                episode += 1
                env.set_traffic(traffic_fn(self.rng))
                obs = env.reset(seed=cfg.seed * 100003 + episode)
                feats = flat_features(obs)
                ep_reward, ep_sat, ep_len = 0.0, 0.0, 0
        self.epsilon = 0.0
        return metrics

    def _learn(self, buf: ReplayBuffer, opt: torch.optim.Optimizer) -> None:
        _, o, a, r, o2, d = buf.sample(self.cfg.batch_size)
        o, o2 = torch.as_tensor(o), torch.as_tensor(o2)
        a = torch.as_tensor(a)
        r, d = torch.as_tensor(r), torch.as_tensor(d)
        q = self.q(o).gather(1, a[:, None]).squeeze(1)
        with torch.no_grad():
            target = r + self.cfg.discount * (1 - d) * self.target(o2).max(dim=1).values
        loss = nn.functional.smooth_l1_loss(q, target)
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.q.parameters(), 10.0)
        opt.step()
        qmax = float(q.detach().abs().max())
        if not np.isfinite(qmax) or qmax > self.cfg.q_limit:
            raise QDivergenceError(f"|Q| reached {qmax:.3g} (limit {self.cfg.q_limit})")

    def state_dict(self) -> dict:
        return {"q": self.q.state_dict(), "cfg": self.cfg.__dict__, "levels": self.cfg.levels}

    def load_state_dict(self, state: dict) -> None:
        self.q.load_state_dict(state["q"])
        self.target.load_state_dict(state["q"])
