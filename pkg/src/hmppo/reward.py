"""Multi-objective utilities, adaptive weights, shaping and Lagrangian penalties.

Notation: ``discount`` is the MDP discount everywhere; ``sensitivity`` is the
temperature of the adaptive weights.  Violation scores are ``1 - utility``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .env import StepQoS

OBJECTIVES = ("delay", "throughput", "reliability", "fairness", "isolation")


@dataclass(frozen=True)
class ObjectiveVector:
    utility: np.ndarray    # (5,) in [0, 1], ordered as OBJECTIVES
    violation: np.ndarray  # (5,) = 1 - utility

    def as_dict(self) -> dict[str, float]:
        out = {f"u_{o}": float(u) for o, u in zip(OBJECTIVES, self.utility)}
        out.update({f"v_{o}": float(v) for o, v in zip(OBJECTIVES, self.violation)})
        return out


def jain_index(values: Sequence[float] | np.ndarray) -> float:
    """(sum x)^2 / (n * sum x^2); 1.0 for an all-zero vector (nobody favoured)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("Jain index of an empty vector")
    sq = float(np.sum(x * x))
    if sq == 0.0:
        return 1.0
    return float(np.sum(x) ** 2 / (x.size * sq))


def _user_utilities(qos: StepQoS, delay_bound_u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u_delay = np.clip(delay_bound_u / np.maximum(qos.delay, 1e-300), 0.0, 1.0)
    tgt = qos.throughput_target
    u_thr = np.where(tgt > 0, np.clip(qos.achieved_rate / np.where(tgt > 0, tgt, 1.0), 0.0, 1.0), 1.0)
    u_rel = np.clip(qos.reliability, 0.0, 1.0)
    return u_delay, u_thr, u_rel


def objective_vector(qos: StepQoS, user_slice: np.ndarray, delay_bound_u: np.ndarray,
                     overdraw: np.ndarray, admissions: np.ndarray | None = None) -> ObjectiveVector:
    """Utilities of one step.

    Fairness is Jain's index over per-slice served fractions (served over
    offered).  Isolation is one minus the mean fraction of each admitted
    slice's requested budget that projection took away.
    """
    n = len(qos.delay)
    if n == 0:
        raise ValueError("objective_vector needs at least one QoS record")
    u_delay, u_thr, u_rel = _user_utilities(qos, delay_bound_u)
    num_slices = overdraw.shape[0]
    served = np.zeros(num_slices)
    offered = np.zeros(num_slices)
    np.add.at(served, user_slice, qos.achieved_rate)
    np.add.at(offered, user_slice, qos.offered_rate)
    present = np.bincount(user_slice, minlength=num_slices) > 0
    frac = np.where(offered > 0, served / np.where(offered > 0, offered, 1.0), 1.0)
    fairness = jain_index(frac[present])
    adm = np.ones(num_slices, bool) if admissions is None else np.asarray(admissions) > 0
    iso = 1.0 - float(overdraw[adm].mean()) if adm.any() else 0.0
    util = np.clip(np.array([u_delay.mean(), u_thr.mean(), u_rel.mean(), fairness, iso]), 0.0, 1.0)
    return ObjectiveVector(util, 1.0 - util)


def qos_margin(qos: StepQoS, user_slice: np.ndarray, delay_bound_u: np.ndarray, num_slices: int) -> float:
    """Shaping potential: mean over slices of the slice's mean clipped QoS margin."""
    u_delay, u_thr, u_rel = _user_utilities(qos, delay_bound_u)
    per_user = (u_delay + u_thr + u_rel) / 3.0
    sums = np.bincount(user_slice, weights=per_user, minlength=num_slices)
    counts = np.bincount(user_slice, minlength=num_slices)
    have = counts > 0
    if not have.any():
        return 0.0
    return float(np.clip((sums[have] / counts[have]).mean(), 0.0, 1.0))


def adaptive_weights(violation: Sequence[float] | np.ndarray, sensitivity: float) -> np.ndarray:
    """Normalized exponentials of the violation scores: the worst objective weighs most."""
    v = np.asarray(violation, dtype=float)
    z = sensitivity * v
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def base_reward(utility: Sequence[float] | np.ndarray, weights: Sequence[float] | np.ndarray) -> float:
    return float(np.dot(np.asarray(weights, dtype=float), np.asarray(utility, dtype=float)))


def shaping_term(phi_s: float, phi_next: float, discount: float) -> float:
    return discount * phi_next - phi_s


def shaped_reward(r: float, phi_s: float, phi_next: float, discount: float) -> float:
    return r + shaping_term(phi_s, phi_next, discount)


@dataclass
class ConstraintState:
    """Lagrange multipliers and bounds for the per-step cost constraints."""

    bounds: np.ndarray
    multipliers: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_size: float = 0.01
    running_cost: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.multipliers is None:
            self.multipliers = np.zeros_like(self.bounds)
        self.multipliers = np.maximum(np.asarray(self.multipliers, dtype=float), 0.0)
        if self.running_cost is None:
            self.running_cost = np.zeros_like(self.bounds)
        if self.step_size < 0:
            raise ValueError("dual step size must be >= 0")


def penalized_reward(r_shaped: float, costs: Sequence[float] | np.ndarray, state: ConstraintState) -> float:
    return float(r_shaped - np.dot(state.multipliers, np.asarray(costs, dtype=float)))


def dual_update(state: ConstraintState, mean_costs: Sequence[float] | np.ndarray) -> ConstraintState:
    """Projected dual ascent on the batch-mean costs; returns a new state."""
    if not state.step_size > 0:
        raise ValueError("dual step size must be > 0")
    j = np.asarray(mean_costs, dtype=float)
    lam = np.maximum(0.0, state.multipliers + state.step_size * (j - state.bounds))
    return ConstraintState(state.bounds.copy(), lam, state.step_size, j.copy())


@dataclass
class RewardConfig:
    """How the per-step scalar reward is assembled.

    The flat baseline uses ``adaptive=False, shaping=False, lagrangian=False``,
    i.e. fixed equal weights on the raw utilities.
    """

    sensitivity: float = 2.0
    adaptive: bool = True
    shaping: bool = True
    lagrangian: bool = True
    discount: float = 0.99


@dataclass
class RewardBreakdown:
    objectives: ObjectiveVector
    weights: np.ndarray
    base: float
    shaped: float
    penalized: float


def compute_reward(objectives: ObjectiveVector, phi_s: float, phi_next: float, costs: np.ndarray,
                   constraints: ConstraintState, cfg: RewardConfig) -> RewardBreakdown:
    if cfg.adaptive:
        w = adaptive_weights(objectives.violation, cfg.sensitivity)
    else:
        w = np.full(len(OBJECTIVES), 1.0 / len(OBJECTIVES))
    base = base_reward(objectives.utility, w)
    shaped = shaped_reward(base, phi_s, phi_next, cfg.discount) if cfg.shaping else base
    penalized = penalized_reward(shaped, costs, constraints) if cfg.lagrangian else shaped
    return RewardBreakdown(objectives, w, base, shaped, penalized)
