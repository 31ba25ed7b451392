"""Scenario description: slices, user populations, resource pool and step settings.

Scenarios are plain YAML files (see ``configs/desk.yaml`` and
``docs/scenario_schema.md``).  Everything the environment needs to build an
episode lives here; nothing in this module touches randomness.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import yaml

DOMAINS: tuple[str, ...] = ("radio", "bandwidth", "compute")
NUM_DOMAINS = len(DOMAINS)


class ConfigError(ValueError):
    """Raised for malformed scenario or experiment configuration."""


class ServiceClass(str, enum.Enum):
    EMBB = "eMBB"
    URLLC = "URLLC"
    MMTC = "mMTC"


@dataclass(frozen=True)
class SliceSpec:
    slice_id: int
    service_class: ServiceClass
    delay_bound: float
    min_throughput: float
    reliability_target: float
    priority: float = 1.0

    def __post_init__(self) -> None:
        if not self.delay_bound > 0:
            raise ConfigError(f"slice {self.slice_id}: delay_bound must be > 0")
        if self.min_throughput < 0:
            raise ConfigError(f"slice {self.slice_id}: min_throughput must be >= 0")
        if not 0.0 <= self.reliability_target <= 1.0:
            raise ConfigError(f"slice {self.slice_id}: reliability_target must lie in [0, 1]")
        if self.priority < 0:
            raise ConfigError(f"slice {self.slice_id}: priority must be >= 0")


@dataclass(frozen=True)
class UserSession:
    """One active user.

    ``wireless_rate`` is the rate the user would reach holding the whole radio
    pool; the rate it actually gets scales with its share of radio units.
    """

    user_id: int
    slice_id: int
    arrival_rate: float
    packet_size: float
    compute_demand: float
    wireless_rate: float
    cell_id: int = 0

    def __post_init__(self) -> None:
        if self.arrival_rate < 0:
            raise ConfigError(f"user {self.user_id}: arrival_rate must be >= 0")
        if not self.packet_size > 0:
            raise ConfigError(f"user {self.user_id}: packet_size must be > 0")
        if not self.compute_demand > 0:
            raise ConfigError(f"user {self.user_id}: compute_demand must be > 0")
        if self.wireless_rate < 0:
            raise ConfigError(f"user {self.user_id}: wireless_rate must be >= 0")


@dataclass(frozen=True)
class ResourcePool:
    radio_capacity: float
    bandwidth_capacity: float
    compute_capacity: float

    def __post_init__(self) -> None:
        for name in ("radio_capacity", "bandwidth_capacity", "compute_capacity"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")

    def capacities(self) -> tuple[float, float, float]:
        return (self.radio_capacity, self.bandwidth_capacity, self.compute_capacity)

    def capacity(self, domain: str) -> float:
        return self.capacities()[DOMAINS.index(domain)]


@dataclass(frozen=True)
class UserProfile:
    """Per-slice template from which an episode's users are drawn.

    Each user's arrival rate, wireless rate and per-bit compute demand are
    the template values times a log-normal factor with log-std ``spread``.
    ``arrival_cv`` is the coefficient of variation of per-step arrivals.
    """

    users: int
    arrival_rate: float
    packet_size: float
    compute_demand: float
    wireless_rate: float
    spread: float = 0.3
    arrival_cv: float = 0.2


@dataclass(frozen=True)
class Scenario:
    slices: tuple[SliceSpec, ...]
    profiles: tuple[UserProfile, ...]
    pool: ResourcePool
    num_cells: int = 4
    dt: float = 1.0
    epsilon: float = 1e-6
    horizon: int = 200
    history: int = 8
    upper_period: int = 5
    constraint_bounds: tuple[float, float, float] = (0.05, 0.05, 0.02)
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self) -> None:
        if len(self.slices) != len(self.profiles):
            raise ConfigError("every slice needs exactly one user profile")
        if not self.slices:
            raise ConfigError("scenario needs at least one slice")
        if sorted(s.slice_id for s in self.slices) != list(range(len(self.slices))):
            raise ConfigError("slice ids must be 0..S-1")
        if self.dt <= 0 or self.epsilon <= 0:
            raise ConfigError("dt and epsilon must be > 0")
        if self.horizon < 1 or self.history < 1 or self.upper_period < 1 or self.num_cells < 1:
            raise ConfigError("horizon, history, upper_period and num_cells must be >= 1")
        if len(self.constraint_bounds) != 3:
            raise ConfigError("constraint_bounds needs three entries")

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    @property
    def num_users(self) -> int:
        return sum(p.users for p in self.profiles)

    def dims(self) -> dict[str, int]:
        """Dimensions a trained model depends on."""
        return {
            "num_slices": self.num_slices,
            "num_users": self.num_users,
            "num_cells": self.num_cells,
            "history": self.history,
        }

    def with_overrides(self, **kwargs: Any) -> "Scenario":
        return replace(self, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "seed": self.seed,
            "dt": self.dt,
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "history": self.history,
            "upper_period": self.upper_period,
            "num_cells": self.num_cells,
            "constraint_bounds": list(self.constraint_bounds),
            "pool": asdict(self.pool),
            "slices": [],
        }
        for spec, prof in zip(self.slices, self.profiles):
            entry = asdict(spec)
            entry["service_class"] = spec.service_class.value
            entry.update(asdict(prof))
            out["slices"].append(entry)
        return out


_SLICE_KEYS = {"slice_id", "service_class", "delay_bound", "min_throughput", "reliability_target", "priority"}
_PROFILE_KEYS = {"users", "arrival_rate", "packet_size", "compute_demand", "wireless_rate", "spread", "arrival_cv"}


def scenario_from_dict(raw: dict[str, Any]) -> Scenario:
    try:
        pool = ResourcePool(**{k: float(v) for k, v in raw["pool"].items()})
        slices, profiles = [], []
        for i, entry in enumerate(raw["slices"]):
            unknown = set(entry) - _SLICE_KEYS - _PROFILE_KEYS
            if unknown:
                raise ConfigError(f"slice entry {i}: unknown keys {sorted(unknown)}")
            spec_kw = {k: entry[k] for k in _SLICE_KEYS if k in entry}
            spec_kw.setdefault("slice_id", i)
            spec_kw["service_class"] = ServiceClass(spec_kw["service_class"])
            for k in ("delay_bound", "min_throughput", "reliability_target", "priority"):
                if k in spec_kw:
                    spec_kw[k] = float(spec_kw[k])
            slices.append(SliceSpec(**spec_kw))
            prof_kw = {k: entry[k] for k in _PROFILE_KEYS if k in entry}
            prof_kw = {k: (int(v) if k == "users" else float(v)) for k, v in prof_kw.items()}
            profiles.append(UserProfile(**prof_kw))
        kwargs: dict[str, Any] = {}
        for key, cast in (("num_cells", int), ("dt", float), ("epsilon", float), ("horizon", int),
                          ("history", int), ("upper_period", int), ("seed", int), ("name", str)):
            if key in raw:
                kwargs[key] = cast(raw[key])
        if "constraint_bounds" in raw:
            kwargs["constraint_bounds"] = tuple(float(b) for b in raw["constraint_bounds"])
        return Scenario(slices=tuple(slices), profiles=tuple(profiles), pool=pool, **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid scenario: {exc!r}") from exc


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: scenario file must contain a mapping")
    if "scenario" in raw and isinstance(raw["scenario"], dict):
        raw = raw["scenario"]
    return scenario_from_dict(raw)


def desk_scenario(**overrides: Any) -> Scenario:
    """Built-in desk-scale scenario: 3 slices, 12 users, 4 cells, 200 steps."""
    path = Path(__file__).with_name("desk.yaml")
    scen = load_scenario(path)
    return scen.with_overrides(**overrides) if overrides else scen


def headroom_rate(packet_size: float, delay_bound: float) -> float:
    """Spare service rate per domain that keeps the summed delay at the bound."""
    return NUM_DOMAINS * packet_size / delay_bound


__all__ = [
    "DOMAINS",
    "NUM_DOMAINS",
    "ConfigError",
    "ResourcePool",
    "Scenario",
    "ServiceClass",
    "SliceSpec",
    "UserProfile",
    "UserSession",
    "desk_scenario",
    "headroom_rate",
    "load_scenario",
    "scenario_from_dict",
]
