"""Discrete-time slicing environment.

Service model (reconstructed; only the variable glossaries are published):

* effective rate of a user is the bottleneck of its three resource domains,
  ``min(wireless, bandwidth, compute / cycles_per_bit)``;
* end-to-end delay sums a queueing-style term per domain,
  ``sum_R packet_size / (max(rate_R - arrival, 0) + eps)``.

Queue backlog is folded into the arrival rate used for the delay, so delay
reflects accumulated congestion.  Infeasible decisions are projected onto the
feasible set, never rejected.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .scenario import (
    DOMAINS,
    NUM_DOMAINS,
    ResourcePool,
    Scenario,
    SliceSpec,
    UserSession,
    headroom_rate,
)

NUM_COSTS = 3
COST_NAMES = ("delay_violation", "reliability_violation", "isolation_overdraw")

# node / history / user feature widths produced by observe()
NODE_FEATURES = 13
HISTORY_FEATURES = 7
USER_FEATURES = 10


class InvalidDemandError(ValueError):
    pass


class InvalidInputError(ValueError):
    pass


class SliceNotFoundError(KeyError):
    pass


def bottleneck_rate(wireless_rate: float, bandwidth_alloc: float, compute_alloc: float,
                    cycles_per_bit: float) -> float:
    """Effective end-to-end rate: the slowest of the three domains."""
    if not cycles_per_bit > 0:
        raise InvalidDemandError(f"per-bit compute demand must be > 0, got {cycles_per_bit}")
    if wireless_rate < 0 or bandwidth_alloc < 0 or compute_alloc < 0:
        raise InvalidInputError("rates and allocations must be >= 0")
    return min(wireless_rate, bandwidth_alloc, compute_alloc / cycles_per_bit)


def end_to_end_delay(user: UserSession, rates: Mapping[str, float], eps: float = 1e-6,
                     arrival_rate: float | None = None) -> float:
    """Queueing plus service delay summed over the three resource domains.

    ``rates`` maps each domain name to its effective service rate in bits/s.
    ``arrival_rate`` overrides ``user.arrival_rate`` (the env passes the
    backlog-inflated rate here).
    """
    if not eps > 0:
        raise InvalidInputError("stabilizer eps must be > 0")
    missing = [d for d in DOMAINS if d not in rates]
    if missing:
        raise InvalidInputError(f"rates missing domains: {missing}")
    lam = user.arrival_rate if arrival_rate is None else arrival_rate
    return sum(user.packet_size / (max(rates[d] - lam, 0.0) + eps) for d in DOMAINS)


@dataclass
class AllocationDecision:
    """Hierarchical action in array form.

    Rows of ``slice_budgets`` follow slice ids, rows of ``user_allocations``
    follow user ids; columns follow ``DOMAINS``.
    """

    admissions: np.ndarray          # (S,) of 0/1
    slice_budgets: np.ndarray       # (S, 3)
    user_allocations: np.ndarray    # (U, 3)

    @classmethod
    def empty(cls, num_slices: int, num_users: int) -> "AllocationDecision":
        return cls(np.zeros(num_slices, dtype=np.int64), np.zeros((num_slices, NUM_DOMAINS)),
                   np.zeros((num_users, NUM_DOMAINS)))

    def budget(self, slice_id: int, domain: str) -> float:
        return float(self.slice_budgets[slice_id, DOMAINS.index(domain)])

    def allocation(self, user_id: int, domain: str) -> float:
        return float(self.user_allocations[user_id, DOMAINS.index(domain)])

    def copy(self) -> "AllocationDecision":
        return AllocationDecision(self.admissions.copy(), self.slice_budgets.copy(),
                                  self.user_allocations.copy())


def aggregate_slice_usage(decision: AllocationDecision, users: Sequence[UserSession],
                          slice_id: int, domain: str) -> float:
    """Total of a slice's user allocations in one domain."""
    if not 0 <= slice_id < len(decision.admissions):
        raise SliceNotFoundError(slice_id)
    col = DOMAINS.index(domain)
    total = 0.0
    for u in users:
        if u.slice_id == slice_id:
            total += float(decision.user_allocations[u.user_id, col])
    return total


@dataclass
class Projection:
    decision: AllocationDecision
    # per slice and domain: fraction of the requested budget removed to fit capacity
    overdraw: np.ndarray


def project_decision(decision: AllocationDecision, pool: ResourcePool,
                     user_slice: np.ndarray) -> Projection:
    """Map any raw decision onto the feasible set.

    Budgets of admitted slices are rescaled proportionally to fit capacity,
    user allocations are rescaled to fit their slice budget, and everything
    belonging to a non-admitted slice is zeroed.
    """
    adm = (np.asarray(decision.admissions) > 0).astype(np.int64)
    budgets = np.nan_to_num(np.asarray(decision.slice_budgets, dtype=float), nan=0.0, posinf=0.0)
    budgets = np.clip(budgets, 0.0, None) * adm[:, None]
    raw = budgets.copy()
    cap = np.asarray(pool.capacities())
    totals = budgets.sum(axis=0)
    scale = np.where(totals > cap, cap / np.where(totals > 0, totals, 1.0), 1.0)
    budgets = budgets * scale[None, :]
    # guard against round-off pushing the sum a hair over capacity
    budgets = np.minimum(budgets, cap[None, :])
    overdraw = np.where(raw > 0, 1.0 - budgets / np.where(raw > 0, raw, 1.0), 0.0)
    overdraw = np.clip(overdraw, 0.0, 1.0)

    alloc = np.nan_to_num(np.asarray(decision.user_allocations, dtype=float), nan=0.0, posinf=0.0)
    alloc = np.clip(alloc, 0.0, None) * adm[user_slice][:, None]
    num_slices = len(adm)
    sums = np.zeros((num_slices, NUM_DOMAINS))
    np.add.at(sums, user_slice, alloc)
    fit = np.where(sums > budgets, budgets / np.where(sums > 0, sums, 1.0), 1.0)
    alloc = alloc * fit[user_slice]
    return Projection(AllocationDecision(adm, budgets, alloc), overdraw)


@dataclass
class QoSRecord:
    user_id: int
    achieved_rate: float
    delay: float
    reliability: float
    delay_violation: bool
    throughput_violation: bool
    reliability_violation: bool

    @property
    def satisfied(self) -> bool:
        return not (self.delay_violation or self.throughput_violation or self.reliability_violation)


@dataclass
class StepQoS:
    """Vectorised per-user QoS of one step; ``records()`` gives QoSRecord objects."""

    achieved_rate: np.ndarray
    offered_rate: np.ndarray
    throughput_target: np.ndarray
    delay: np.ndarray
    reliability: np.ndarray
    delay_violation: np.ndarray
    throughput_violation: np.ndarray
    reliability_violation: np.ndarray

    @property
    def satisfied(self) -> np.ndarray:
        return ~(self.delay_violation | self.throughput_violation | self.reliability_violation)

    def records(self) -> list[QoSRecord]:
        return [
            QoSRecord(i, float(self.achieved_rate[i]), float(self.delay[i]), float(self.reliability[i]),
                      bool(self.delay_violation[i]), bool(self.throughput_violation[i]),
                      bool(self.reliability_violation[i]))
            for i in range(len(self.delay))
        ]


@dataclass
class StepResult:
    qos: StepQoS
    costs: np.ndarray            # (3,) per-constraint costs in [0, 1]
    served_bits: float
    decision: AllocationDecision  # projected decision that was applied
    overdraw: np.ndarray          # (S, 3)
    used: np.ndarray              # (U, 3) resources actually consumed by served traffic


@dataclass
class EnvState:
    step_index: int
    users: tuple[UserSession, ...]
    backlog: np.ndarray
    pool: ResourcePool
    history: deque = field(default_factory=deque)

    def __post_init__(self) -> None:
        if np.any(self.backlog < 0):
            raise InvalidInputError("queue backlog must be >= 0")


def required_rate(arrival: np.ndarray, backlog: np.ndarray, packet_size: np.ndarray,
                  delay_bound: np.ndarray, dt: float, arrival_cv: np.ndarray | float = 0.0) -> np.ndarray:
    """Service rate a user needs this step.

    Covers the mean arrival plus a two-sigma burst margin, drains the backlog,
    and leaves the per-domain headroom that keeps delay within the bound.
    """
    return arrival * (1.0 + 2.0 * np.asarray(arrival_cv)) + backlog / dt + headroom_rate(packet_size, delay_bound)


class SlicingEnv:
    """Single-threaded slicing environment; deterministic given the reset seed.

    ``traffic`` is a ``(T, S)`` array of arrival-rate multipliers; steps past
    its end wrap around.
    """

    def __init__(self, scenario: Scenario, traffic: np.ndarray | None = None) -> None:
        self.scenario = scenario
        self.slices: tuple[SliceSpec, ...] = scenario.slices
        self.pool = scenario.pool
        self.cap = np.asarray(self.pool.capacities(), dtype=float)
        self.num_slices = scenario.num_slices
        self.num_users = scenario.num_users
        self.num_cells = scenario.num_cells
        self.dt = scenario.dt
        self.eps = scenario.epsilon
        self.set_traffic(traffic)
        self.user_slice = np.concatenate(
            [np.full(p.users, s, dtype=np.int64) for s, p in enumerate(scenario.profiles)])
        self.delay_bound_u = np.array([self.slices[s].delay_bound for s in self.user_slice])
        self.min_thr_u = np.array([self.slices[s].min_throughput for s in self.user_slice])
        self.rel_target_u = np.array([self.slices[s].reliability_target for s in self.user_slice])
        self.cv_u = np.array([scenario.profiles[s].arrival_cv for s in self.user_slice])
        self.rng = np.random.default_rng(scenario.seed)
        self.state: EnvState | None = None
        self._last: StepResult | None = None
        self.held_admission = np.ones(self.num_slices)
        self.held_budget = np.full((self.num_slices, NUM_DOMAINS), 1.0 / self.num_slices)

    def set_traffic(self, traffic: np.ndarray | None) -> None:
        if traffic is None:
            traffic = np.ones((1, self.num_slices))
        traffic = np.asarray(traffic, dtype=float)
        if traffic.ndim == 1:
            traffic = np.repeat(traffic[:, None], self.num_slices, axis=1)
        if traffic.shape[1] != self.num_slices or np.any(traffic < 0):
            raise InvalidInputError("traffic must be (T, num_slices) with non-negative entries")
        self.traffic = traffic

    # ------------------------------------------------------------------ reset
    def reset(self, seed: int | None = None) -> dict[str, np.ndarray]:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        users = []
        uid = 0
        for s, prof in enumerate(self.scenario.profiles):
            for _ in range(prof.users):
                f_lam, f_mu, f_d = np.exp(self.rng.normal(0.0, prof.spread, size=3)) if prof.spread > 0 \
                    else (1.0, 1.0, 1.0)
                users.append(UserSession(
                    user_id=uid, slice_id=s,
                    arrival_rate=prof.arrival_rate * float(f_lam),
                    packet_size=prof.packet_size,
                    compute_demand=prof.compute_demand * float(f_d),
                    wireless_rate=prof.wireless_rate * float(f_mu),
                    cell_id=int(self.rng.integers(self.num_cells)),
                ))
                uid += 1
        self.set_users(users)
        return self.observe()

    def set_users(self, users: Sequence[UserSession], backlog: np.ndarray | None = None) -> None:
        """Install an explicit user census (used by reset and by tests)."""
        users = tuple(users)
        if len(users) != self.num_users or any(u.user_id != i for i, u in enumerate(users)):
            raise InvalidInputError("users must carry ids 0..U-1 matching the scenario census")
        if any(u.slice_id != s for u, s in zip(users, self.user_slice)):
            raise InvalidInputError("user slice membership must match the scenario census")
        self.lam_u = np.array([u.arrival_rate for u in users])
        self.tau_u = np.array([u.packet_size for u in users])
        self.d_u = np.array([u.compute_demand for u in users])
        self.mu_w_u = np.array([u.wireless_rate for u in users])
        self.cell_u = np.array([u.cell_id for u in users], dtype=np.int64)
        hist = deque(maxlen=self.scenario.history)
        self.state = EnvState(0, users, np.zeros(self.num_users) if backlog is None else np.asarray(backlog, float),
                              self.pool, hist)
        self._last = None
        self.held_admission = np.ones(self.num_slices)
        self.held_budget = np.full((self.num_slices, NUM_DOMAINS), 1.0 / self.num_slices)
        self._adjacency = self._build_adjacency()
        self._slice_mat = (np.arange(self.num_slices)[:, None] == self.user_slice[None, :]).astype(float)
        self._cell_mat = (np.arange(self.num_cells)[:, None] == self.cell_u[None, :]).astype(float)
        self._slice_mean = self._slice_mat / np.maximum(self._slice_mat.sum(axis=1, keepdims=True), 1.0)
        self._cell_mean = self._cell_mat / np.maximum(self._cell_mat.sum(axis=1, keepdims=True), 1.0)
        self._node_base = self._static_nodes()

    @property
    def users(self) -> tuple[UserSession, ...]:
        assert self.state is not None, "call reset() first"
        return self.state.users

    def multiplier(self, step: int | None = None) -> np.ndarray:
        t = self.state.step_index if step is None else step
        return self.traffic[t % len(self.traffic)]

    def expected_arrival(self) -> np.ndarray:
        """Per-user mean arrival rate (bits/s) for the upcoming step."""
        return self.lam_u * self.multiplier()[self.user_slice]

    def demand(self) -> np.ndarray:
        """(U, 3) resources each user needs this step to meet its delay bound."""
        need = required_rate(self.expected_arrival(), self.state.backlog, self.tau_u, self.delay_bound_u, self.dt,
                             self.cv_u)
        radio = np.where(self.mu_w_u > 0, need / np.maximum(self.mu_w_u, 1e-12) * self.cap[0], np.inf)
        return np.stack([radio, need, need * self.d_u], axis=1)

    # ------------------------------------------------------------------- step
    def step(self, decision: AllocationDecision) -> StepResult:
        assert self.state is not None, "call reset() first"
        state = self.state
        proj = project_decision(decision, self.pool, self.user_slice)
        dec = proj.decision

        mean_arr = self.expected_arrival()
        if np.any(self.cv_u > 0):
            shape = np.where(self.cv_u > 0, 1.0 / np.maximum(self.cv_u, 1e-12) ** 2, 1.0)
            factor = np.where(self.cv_u > 0, self.rng.gamma(shape, 1.0 / shape), 1.0)
        else:
            factor = np.ones(self.num_users)
        arrivals_bits = mean_arr * factor * self.dt
        qos, served, used = self._serve(dec, state.backlog, arrivals_bits)

        new_backlog = np.maximum(0.0, state.backlog + arrivals_bits - served)
        costs = self._costs(qos, dec, proj.overdraw)
        result = StepResult(qos, costs, float(served.sum()), dec, proj.overdraw, used)

        state.backlog = new_backlog
        state.step_index += 1
        self._last = result
        state.history.append(self._slice_summary(result))
        return result

    def _serve(self, dec: AllocationDecision, backlog: np.ndarray, arrivals_bits: np.ndarray):
        alloc = dec.user_allocations
        radio_rate = self.mu_w_u * alloc[:, 0] / self.cap[0]
        bw_rate = alloc[:, 1]
        comp_rate = alloc[:, 2] / self.d_u
        rate = np.minimum(np.minimum(radio_rate, bw_rate), comp_rate)
        offered_bits = backlog + arrivals_bits
        served = np.minimum(rate * self.dt, offered_bits)
        lam_eff = (arrivals_bits + backlog) / self.dt
        delay = np.zeros(self.num_users)
        for r in (radio_rate, bw_rate, comp_rate):
            delay += self.tau_u / (np.maximum(r - lam_eff, 0.0) + self.eps)
        achieved = served / self.dt
        offered_rate = offered_bits / self.dt
        thr_target = np.minimum(self.min_thr_u, offered_rate)
        within = delay <= self.delay_bound_u
        reliability = np.where(offered_bits > 0, np.where(within, served / np.where(offered_bits > 0, offered_bits, 1.0), 0.0), 1.0)
        qos = StepQoS(
            achieved_rate=achieved,
            offered_rate=offered_rate,
            throughput_target=thr_target,
            delay=delay,
            reliability=reliability,
            delay_violation=~within,
            throughput_violation=achieved < thr_target * (1.0 - 1e-9),
            reliability_violation=reliability < self.rel_target_u,
        )
        used_rate = served / self.dt
        used = np.stack([
            np.minimum(alloc[:, 0], np.where(self.mu_w_u > 0, used_rate / np.maximum(self.mu_w_u, 1e-12) * self.cap[0], 0.0)),
            np.minimum(alloc[:, 1], used_rate),
            np.minimum(alloc[:, 2], used_rate * self.d_u),
        ], axis=1)
        return qos, served, used

    def _costs(self, qos: StepQoS, dec: AllocationDecision, overdraw: np.ndarray) -> np.ndarray:
        if not np.any(dec.admissions):
            return np.ones(NUM_COSTS)
        adm = dec.admissions > 0
        iso = float(overdraw[adm].mean())
        return np.array([qos.delay_violation.mean(), qos.reliability_violation.mean(), iso])

    # ------------------------------------------------------------ observation
    def _build_adjacency(self) -> np.ndarray:
        S, C = self.num_slices, self.num_cells
        n = S + C
        adj = np.eye(n)
        for s, c in zip(self.user_slice, self.cell_u):
            adj[s, S + c] = adj[S + c, s] = 1.0
        # cells sit on a ring; for 4 cells this is the 2x2 grid's 4-neighbourhood
        for c in range(C):
            nxt = (c + 1) % C
            if nxt != c:
                adj[S + c, S + nxt] = adj[S + nxt, S + c] = 1.0
        return adj

    def _slice_summary(self, result: StepResult) -> np.ndarray:
        """Per-slice history vector: demand shares, violation rates, utilisation."""
        out = np.zeros((self.num_slices, HISTORY_FEATURES))
        share = np.minimum(self.demand() / self.cap[None, :], 10.0)
        out[:, :3] = np.minimum(self._slice_mat @ share, 5.0)
        flags = np.stack([result.qos.delay_violation, result.qos.throughput_violation,
                          result.qos.reliability_violation], axis=1).astype(float)
        out[:, 3:6] = self._slice_mean @ flags
        out[:, 6] = ((self._slice_mat @ result.used) / self.cap[None, :]).mean(axis=1)
        return out

    def _static_nodes(self) -> np.ndarray:
        S, C, U = self.num_slices, self.num_cells, self.num_users
        nodes = np.zeros((S + C, NODE_FEATURES))
        prio = np.array([sp.priority for sp in self.slices])
        nodes[:S, 7] = prio / max(prio.max(), 1e-12)
        nodes[:S, 8] = self._slice_mat.sum(axis=1) / U
        classes = {"eMBB": 0, "URLLC": 1, "mMTC": 2}
        for s, sp in enumerate(self.slices):
            nodes[s, 9 + classes[sp.service_class.value]] = 1.0
        nodes[S:, 8] = self._cell_mat.sum(axis=1) / U
        nodes[S:, 12] = 1.0
        return nodes

    def observe(self) -> dict[str, np.ndarray]:
        """Graph, history window and per-user features for the policy."""
        S, U = self.num_slices, self.num_users
        state = self.state
        user_share = np.minimum(self.demand() / self.cap[None, :], 10.0)
        backlog_norm = np.minimum(state.backlog / np.maximum(self.lam_u * self.dt, 1.0), 10.0)
        last = self._last
        users = np.zeros((U, USER_FEATURES))
        nodes = self._node_base.copy()
        nodes[:S, 0:3] = self._slice_mat @ user_share
        nodes[S:, 0:3] = self._cell_mat @ user_share
        nodes[:S, 3] = self._slice_mean @ backlog_norm
        nodes[S:, 3] = self._cell_mean @ backlog_norm
        if last is not None:
            q = last.qos
            u_delay = np.clip(self.delay_bound_u / np.maximum(q.delay, 1e-12), 0.0, 1.0)
            u_thr = np.where(q.throughput_target > 0,
                             np.clip(q.achieved_rate / np.maximum(q.throughput_target, 1e-12), 0, 1), 1.0)
            nodes[:S, 4:7] = self._slice_mean @ np.stack([u_delay, u_thr, q.reliability], axis=1)
            users[:, 6] = q.delay_violation
            users[:, 7] = q.throughput_violation
            users[:, 8] = q.reliability_violation

        hist = np.zeros((self.scenario.history, S, HISTORY_FEATURES))
        if state.history:
            h = np.stack(state.history)
            hist[-len(h):] = h

        users[:, 0:3] = user_share
        users[:, 3:6] = np.log(np.maximum(user_share, 1e-4)) / 5.0
        users[:, 9] = backlog_norm
        return {
            "nodes": nodes.astype(np.float32),
            "adjacency": self._adjacency.astype(np.float32),
            "history": hist.astype(np.float32),
            "users": users.astype(np.float32),
            "user_share": user_share.astype(np.float32),
            "user_slice": self.user_slice.copy(),
            "held_admission": self.held_admission.astype(np.float32),
            "held_budget": self.held_budget.astype(np.float32),
            "upper_step": np.array(state.step_index % self.scenario.upper_period == 0),
        }

    @property
    def last_result(self) -> StepResult | None:
        return self._last

    def qos_potential(self) -> float:
        """Mean per-slice QoS margin of the last step (0 before the first step)."""
        if self._last is None:
            return 0.0
        from .reward import qos_margin  # local import: reward depends on env types
        return qos_margin(self._last.qos, self.user_slice, self.delay_bound_u, self.num_slices)

    def done(self) -> bool:
        return self.state.step_index >= self.scenario.horizon


def decision_from_ratios(admission: np.ndarray, budget_ratio: np.ndarray, user_ratio: np.ndarray,
                         pool: ResourcePool, user_slice: np.ndarray) -> AllocationDecision:
    """Turn budget ratios (S, 3) and within-slice user ratios (U, 3) into amounts."""
    cap = np.asarray(pool.capacities())
    adm = (np.asarray(admission) > 0).astype(np.int64)
    budgets = np.asarray(budget_ratio) * cap[None, :] * adm[:, None]
    alloc = np.asarray(user_ratio) * budgets[user_slice]
    return AllocationDecision(adm, budgets, alloc)

