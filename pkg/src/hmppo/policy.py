"""Hierarchical actor-critic with a spatio-temporal encoder.

The encoder runs graph attention over slice and cell nodes and a
bidirectional LSTM over each slice's recent history, then fuses both into one
embedding per slice.  On top of it:

* the upper actor admits slices (independent Bernoulli) and proposes budget
  logits per resource domain; budgets are the normalized exponentials of the
  logits over admitted slices, times capacity;
* the lower actor proposes per-user logits inside each admitted slice; a
  user's allocation is its normalized-exponential share of the slice budget;
* value and per-constraint cost-value heads read the pooled embeddings.

Sampled logits are Gaussian around the actor means, so log-probabilities are
those of the logits, not of the resulting ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .env import HISTORY_FEATURES, NODE_FEATURES, NUM_COSTS, USER_FEATURES
from .scenario import NUM_DOMAINS

LOG_STD_MIN = -1.4  # keeps each Gaussian's entropy above zero
LOG_STD_MAX = 1.0


class ShapeError(ValueError):
    pass


class InvalidActionError(ValueError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 64
    heads: int = 2
    head_dim: int = 32
    lstm_hidden: int = 32
    user_hidden: int = 64
    value_hidden: int = 64
    init_log_std: float = -1.4
    admission_bias: float = 2.0

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


# ------------------------------------------------------------ ratio helpers
def budget_ratios(logits: torch.Tensor, admitted: torch.Tensor) -> torch.Tensor:
    """Normalized exponentials over admitted slices, per domain.

    ``logits`` is (..., S, D), ``admitted`` is (..., S) of 0/1.  Non-admitted
    slices get exactly zero; with nobody admitted every ratio is zero.
    """
    mask = admitted.bool().unsqueeze(-1)
    masked = logits.masked_fill(~mask, float("-inf"))
    any_adm = mask.any(dim=-2, keepdim=True)
    masked = torch.where(any_adm, masked, torch.zeros_like(masked))
    ratio = torch.softmax(masked, dim=-2)
    return torch.where(mask & any_adm, ratio, torch.zeros_like(ratio))


def user_ratios(logits: torch.Tensor, user_slice: torch.Tensor, num_slices: int) -> torch.Tensor:
    """Per-slice normalized exponentials of user logits; ``logits`` is (..., U, D)."""
    member = F.one_hot(user_slice, num_slices).T.bool()            # (S, U)
    expanded = logits.unsqueeze(-3).expand(*logits.shape[:-2], num_slices, *logits.shape[-2:])
    masked = expanded.masked_fill(~member[..., None], float("-inf"))
    soft = torch.softmax(masked, dim=-2)                            # (..., S, U, D)
    soft = torch.nan_to_num(soft, nan=0.0)
    idx = user_slice.view(*([1] * (logits.dim() - 2)), 1, -1, 1).expand(*logits.shape[:-2], 1, *logits.shape[-2:])
    return soft.gather(-3, idx).squeeze(-3)


def _gauss_logp(x: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    var = torch.exp(2 * log_std)
    return -((x - mean) ** 2) / (2 * var) - log_std - 0.5 * math.log(2 * math.pi)


def _gauss_entropy(log_std: torch.Tensor) -> torch.Tensor:
    return 0.5 + 0.5 * math.log(2 * math.pi) + log_std


def _bernoulli_logp(a: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    p = p.clamp(0.0, 1.0)
    return torch.where(a > 0.5, torch.log(p.clamp_min(1e-12)), torch.log((1 - p).clamp_min(1e-12)))


def _bernoulli_entropy(p: torch.Tensor) -> torch.Tensor:
    p = p.clamp(0.0, 1.0)
    h = -(p * torch.log(p.clamp_min(1e-12)) + (1 - p) * torch.log((1 - p).clamp_min(1e-12)))
    return h.clamp_min(0.0)


# --------------------------------------------------------------- observation
def batch_obs(obs_list: list[dict[str, np.ndarray]], dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor]:
    """Stack per-env observation dicts into tensors."""
    out: dict[str, torch.Tensor] = {}
    for key in ("nodes", "adjacency", "history", "users", "user_share", "held_admission", "held_budget"):
        out[key] = torch.as_tensor(np.stack([o[key] for o in obs_list]), dtype=dtype)
    out["upper_step"] = torch.as_tensor(np.array([bool(o["upper_step"]) for o in obs_list]))
    out["user_slice"] = torch.as_tensor(obs_list[0]["user_slice"], dtype=torch.long)
    return out


def index_obs(obs: dict[str, torch.Tensor], idx: torch.Tensor) -> dict[str, torch.Tensor]:
    return {k: (v if k == "user_slice" else v[idx]) for k, v in obs.items()}


# ------------------------------------------------------------------ encoder
class GraphAttention(nn.Module):
    """Multi-head graph attention over a dense adjacency (self-loops expected)."""

    def __init__(self, in_dim: int, head_dim: int, heads: int) -> None:
        super().__init__()
        self.heads, self.head_dim = heads, head_dim
        self.proj = nn.Linear(in_dim, heads * head_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, head_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, head_dim))
        nn.init.xavier_uniform_(self.att_src)
        nn.init.xavier_uniform_(self.att_dst)

    def forward(self, x: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        B, N, _ = x.shape
        h = self.proj(x).view(B, N, self.heads, self.head_dim)
        src = (h * self.att_src).sum(-1)                       # (B, N, H)
        dst = (h * self.att_dst).sum(-1)
        # score[b, i, j, k]: attention of node i on neighbour j
        score = F.leaky_relu(dst.unsqueeze(2) + src.unsqueeze(1), 0.2)
        score = score.masked_fill(adj.unsqueeze(-1) <= 0, float("-inf"))
        alpha = torch.softmax(score, dim=2)
        alpha = torch.nan_to_num(alpha, nan=0.0)
        out = torch.einsum("bijk,bjkd->bikd", alpha, h)
        return F.elu(out.reshape(B, N, self.heads * self.head_dim))


class SpatioTemporalEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, node_dim: int = NODE_FEATURES, hist_dim: int = HISTORY_FEATURES) -> None:
        super().__init__()
        self.node_dim, self.hist_dim = node_dim, hist_dim
        self.gat = GraphAttention(node_dim, cfg.head_dim, cfg.heads)
        self.lstm = nn.LSTM(hist_dim, cfg.lstm_hidden, batch_first=True, bidirectional=True)
        self.fuse = nn.Linear(cfg.heads * cfg.head_dim + 2 * cfg.lstm_hidden, cfg.embed_dim)

    def forward(self, nodes: torch.Tensor, adjacency: torch.Tensor, history: torch.Tensor,
                num_slices: int) -> torch.Tensor:
        if nodes.dim() != 3 or nodes.shape[-1] != self.node_dim:
            raise ShapeError(f"node features: expected (B, N, {self.node_dim}), got {tuple(nodes.shape)}")
        B, N, _ = nodes.shape
        if adjacency.shape != (B, N, N):
            raise ShapeError(f"adjacency: expected {(B, N, N)}, got {tuple(adjacency.shape)}")
        if history.dim() != 4 or history.shape[0] != B or history.shape[2] != num_slices \
                or history.shape[3] != self.hist_dim:
            raise ShapeError(f"history: expected (B, H, {num_slices}, {self.hist_dim}), got {tuple(history.shape)}")
        g = self.gat(nodes, adjacency)[:, :num_slices]
        H = history.shape[1]
        seq = history.permute(0, 2, 1, 3).reshape(B * num_slices, H, self.hist_dim)
        _, (h_n, _) = self.lstm(seq)
        t = torch.cat([h_n[0], h_n[1]], dim=-1).view(B, num_slices, -1)
        return torch.tanh(self.fuse(torch.cat([g, t], dim=-1)))


# ------------------------------------------------------------------- actors
@dataclass
class PolicyOutput:
    admission_probs: torch.Tensor  # (B, S)
    budget_mean: torch.Tensor      # (B, S, D)
    value: torch.Tensor            # (B,)
    cost_values: torch.Tensor      # (B, K)
    embeddings: torch.Tensor       # (B, S, E)
    user_mean: torch.Tensor | None = None  # (B, U, D) when the actor is not budget-conditioned


class _ActorCriticBase(nn.Module):
    """Shared sampling / log-probability machinery for both policy shapes."""

    kind = "base"
    hierarchical = True

    def __init__(self, num_slices: int, num_users: int, cfg: ModelConfig) -> None:
        super().__init__()
        self.num_slices, self.num_users, self.cfg = num_slices, num_users, cfg
        self.budget_log_std = nn.Parameter(torch.full((NUM_DOMAINS,), cfg.init_log_std))
        self.user_log_std = nn.Parameter(torch.full((NUM_DOMAINS,), cfg.init_log_std))

    # subclasses implement these two
    def upper(self, obs: dict[str, torch.Tensor]) -> PolicyOutput:
        raise NotImplementedError

    def user_mean(self, out: PolicyOutput, obs: dict[str, torch.Tensor], eff_adm: torch.Tensor,
                  eff_ratio: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def _log_stds(self) -> tuple[torch.Tensor, torch.Tensor]:
        return (self.budget_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
                self.user_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def _upper_flag(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        return obs["upper_step"].bool() if self.hierarchical else torch.ones_like(obs["upper_step"], dtype=torch.bool)

    def _effective(self, obs, flag, admission, budget_logits):
        new_ratio = budget_ratios(budget_logits, admission)
        eff_adm = torch.where(flag[:, None], admission, obs["held_admission"])
        eff_ratio = torch.where(flag[:, None, None], new_ratio, obs["held_budget"])
        return eff_adm, eff_ratio

    @torch.no_grad()
    def act(self, obs: dict[str, torch.Tensor], mode: str = "sample",
            generator: torch.Generator | None = None) -> tuple[dict[str, torch.Tensor], torch.Tensor, torch.Tensor, torch.Tensor]:
        """Sample (or pick greedily) a full hierarchical action."""
        if mode not in ("sample", "greedy"):
            raise ValueError(f"unknown mode {mode!r}")
        out = self.upper(obs)
        b_std, u_std = self._log_stds()
        flag = self._upper_flag(obs)
        p = out.admission_probs
        if mode == "greedy":
            admission = (p >= 0.5).to(p.dtype)
            budget_logits = out.budget_mean
        else:
            admission = (torch.rand(p.shape, generator=generator, dtype=p.dtype) < p).to(p.dtype)
            noise = torch.randn(out.budget_mean.shape, generator=generator, dtype=p.dtype)
            budget_logits = out.budget_mean + noise * b_std.exp()
        eff_adm, eff_ratio = self._effective(obs, flag, admission, budget_logits)
        u_mean = self.user_mean(out, obs, eff_adm, eff_ratio)
        if mode == "greedy":
            user_logits = u_mean
        else:
            user_logits = u_mean + torch.randn(u_mean.shape, generator=generator, dtype=p.dtype) * u_std.exp()
        action = {
            "upper": flag.to(p.dtype),
            "admission": admission,
            "budget_logits": budget_logits,
            "user_logits": user_logits,
            "eff_admission": eff_adm,
            "eff_budget": eff_ratio,
            "user_ratio": user_ratios(user_logits, obs["user_slice"], self.num_slices),
        }
        logp, _ = self._logp_entropy(out, obs, action, u_mean)
        return action, logp, out.value, out.cost_values

    def _logp_entropy(self, out: PolicyOutput, obs, action, u_mean):
        b_ls, u_ls = self._log_stds()
        flag = action["upper"] > 0.5
        adm = action["admission"]
        p = out.admission_probs
        adm_lp = _bernoulli_logp(adm, p).sum(-1) if self.hierarchical else torch.zeros_like(out.value)
        adm_h = _bernoulli_entropy(p).sum(-1) if self.hierarchical else torch.zeros_like(out.value)
        adm_mask = adm.unsqueeze(-1).expand_as(out.budget_mean)
        b_lp = (_gauss_logp(action["budget_logits"], out.budget_mean, b_ls) * adm_mask).sum((-1, -2))
        b_h = (_gauss_entropy(b_ls).expand_as(out.budget_mean) * adm_mask).sum((-1, -2))
        upper_lp = torch.where(flag, adm_lp + b_lp, torch.zeros_like(b_lp))
        upper_h = torch.where(flag, adm_h + b_h, torch.zeros_like(b_h))
        user_mask = action["eff_admission"][:, obs["user_slice"]].unsqueeze(-1).expand_as(u_mean)
        l_lp = (_gauss_logp(action["user_logits"], u_mean, u_ls) * user_mask).sum((-1, -2))
        l_h = (_gauss_entropy(u_ls).expand_as(u_mean) * user_mask).sum((-1, -2))
        return upper_lp + l_lp, upper_h + l_h

    def check_action(self, action: dict[str, torch.Tensor]) -> None:
        S, U = self.num_slices, self.num_users
        shapes = {"admission": (S,), "budget_logits": (S, NUM_DOMAINS), "user_logits": (U, NUM_DOMAINS),
                  "eff_admission": (S,), "eff_budget": (S, NUM_DOMAINS)}
        for key, shp in shapes.items():
            if key not in action:
                raise InvalidActionError(f"action lacks {key!r}")
            if tuple(action[key].shape[1:]) != shp:
                raise InvalidActionError(f"{key}: expected trailing shape {shp}, got {tuple(action[key].shape[1:])}")
            if not torch.isfinite(action[key]).all():
                raise InvalidActionError(f"{key} has non-finite entries")
        for key in ("admission", "eff_admission", "upper"):
            v = action[key]
            if not ((v == 0) | (v == 1)).all():
                raise InvalidActionError(f"{key} must be 0/1")

    def evaluate_actions(self, obs: dict[str, torch.Tensor], action: dict[str, torch.Tensor]):
        """Log-prob, entropy, value and cost values of stored actions under current parameters."""
        self.check_action(action)
        out = self.upper(obs)
        u_mean = self.user_mean(out, obs, action["eff_admission"], action["eff_budget"])
        logp, ent = self._logp_entropy(out, obs, action, u_mean)
        return logp, ent, out.value, out.cost_values


class HierarchicalActorCritic(_ActorCriticBase):
    kind = "hmppo"
    hierarchical = True

    def __init__(self, num_slices: int, num_users: int, cfg: ModelConfig | None = None) -> None:
        cfg = cfg or ModelConfig()
        super().__init__(num_slices, num_users, cfg)
        E = cfg.embed_dim
        self.encoder = SpatioTemporalEncoder(cfg)
        self.admission_head = nn.Linear(E, 1)
        self.budget_head = nn.Linear(E + NUM_DOMAINS, NUM_DOMAINS)
        self.user_net = nn.Sequential(
            nn.Linear(E + USER_FEATURES + NUM_DOMAINS, cfg.user_hidden), nn.Tanh(),
            nn.Linear(cfg.user_hidden, NUM_DOMAINS))
        self.critic = nn.Sequential(nn.Linear(2 * E, cfg.value_hidden), nn.Tanh(),
                                    nn.Linear(cfg.value_hidden, 1 + NUM_COSTS))
        nn.init.zeros_(self.admission_head.weight)
        nn.init.constant_(self.admission_head.bias, cfg.admission_bias)
        for layer in (self.budget_head, self.user_net[-1]):
            nn.init.orthogonal_(layer.weight, gain=0.01)
            nn.init.zeros_(layer.bias)

    def encode(self, obs: dict[str, torch.Tensor]) -> torch.Tensor:
        return self.encoder(obs["nodes"], obs["adjacency"], obs["history"], self.num_slices)

    def upper(self, obs: dict[str, torch.Tensor]) -> PolicyOutput:
        e = self.encode(obs)
        slice_need = obs["nodes"][:, : self.num_slices, 0:NUM_DOMAINS]
        log_need = torch.log(slice_need.clamp_min(1e-4))
        probs = torch.sigmoid(self.admission_head(e).squeeze(-1))
        # residual on log demand: an untrained head already splits in proportion to need
        budget_mean = log_need + self.budget_head(torch.cat([e, log_need / 5.0], dim=-1))
        pooled = torch.cat([e.mean(1), e.max(1).values], dim=-1)
        vc = self.critic(pooled)
        return PolicyOutput(probs, budget_mean, vc[:, 0], vc[:, 1:], e)

    def user_mean(self, out, obs, eff_adm, eff_ratio):
        us = obs["user_slice"]
        e_u = out.embeddings[:, us]
        frac = obs["user_share"] / eff_ratio[:, us].clamp_min(1e-6)
        rel = torch.log(frac.clamp(1e-4, 1e4)) / 5.0
        prior = torch.log(obs["user_share"].clamp_min(1e-4))
        return prior + self.user_net(torch.cat([e_u, obs["users"], rel], dim=-1))


class FlatActorCritic(_ActorCriticBase):
    """Standard PPO actor: one MLP, no graph/temporal encoder, acts every step, admits all."""

    kind = "standard_ppo"
    hierarchical = False

    def __init__(self, num_slices: int, num_users: int, num_nodes: int, cfg: ModelConfig | None = None,
                 hidden: int = 128) -> None:
        cfg = cfg or ModelConfig()
        super().__init__(num_slices, num_users, cfg)
        self.num_nodes = num_nodes
        in_dim = num_nodes * NODE_FEATURES + num_users * USER_FEATURES + num_slices * HISTORY_FEATURES
        self.body = nn.Sequential(nn.Linear(in_dim, hidden), nn.Tanh(), nn.Linear(hidden, hidden), nn.Tanh())
        self.actor = nn.Linear(hidden, (num_slices + num_users) * NUM_DOMAINS)
        self.critic = nn.Sequential(nn.Linear(in_dim, hidden), nn.Tanh(), nn.Linear(hidden, 1 + NUM_COSTS))
        nn.init.orthogonal_(self.actor.weight, gain=0.01)
        nn.init.zeros_(self.actor.bias)

    def _flat(self, obs):
        B = obs["nodes"].shape[0]
        return torch.cat([obs["nodes"].reshape(B, -1), obs["users"].reshape(B, -1),
                          obs["history"][:, -1].reshape(B, -1)], dim=-1)

    def upper(self, obs):
        x = self._flat(obs)
        B = x.shape[0]
        logits = self.actor(self.body(x))
        # same log-demand prior as the hierarchical actor so the comparison isolates structure
        slice_need = obs["nodes"][:, : self.num_slices, 0:NUM_DOMAINS]
        budget_mean = torch.log(slice_need.clamp_min(1e-4)) + logits[:, : self.num_slices * NUM_DOMAINS].view(
            B, self.num_slices, NUM_DOMAINS)
        user_mean = torch.log(obs["user_share"].clamp_min(1e-4)) + logits[:, self.num_slices * NUM_DOMAINS:].view(
            B, self.num_users, NUM_DOMAINS)
        vc = self.critic(x)
        probs = torch.ones(B, self.num_slices, dtype=x.dtype)
        return PolicyOutput(probs, budget_mean, vc[:, 0], vc[:, 1:], budget_mean, user_mean)

    def user_mean(self, out, obs, eff_adm, eff_ratio):
        return out.user_mean


def build_policy(kind: str, dims: dict[str, int], cfg: ModelConfig | None = None) -> _ActorCriticBase:
    if kind == "hmppo":
        return HierarchicalActorCritic(dims["num_slices"], dims["num_users"], cfg)
    if kind == "standard_ppo":
        return FlatActorCritic(dims["num_slices"], dims["num_users"], dims["num_slices"] + dims["num_cells"], cfg)
    raise ValueError(f"unknown policy kind {kind!r}")


def action_to_numpy(action: dict[str, torch.Tensor], i: int) -> dict[str, np.ndarray]:
    return {k: v[i].detach().cpu().numpy() for k, v in action.items()}
