"""Traffic sources: Milan-style CDR grid files and synthetic load patterns.

The CDR files follow the public Telecom Italia layout, one tab-separated row
per (square, 10-minute interval, country code)::

    square_id  time_interval_ms  country_code  sms_in  sms_out  call_in  call_out  internet

Blank activity fields mean "no activity" and read as 0.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

BIN_MS = 10 * 60 * 1000
BINS_PER_DAY = 144
ACTIVITY_COLUMNS = ("sms_in", "sms_out", "call_in", "call_out", "internet")

# service class -> activity columns feeding it
DEFAULT_MAPPING: dict[str, tuple[str, ...]] = {
    "eMBB": ("internet",),
    "URLLC": ("call_in", "call_out"),
    "mMTC": ("sms_in", "sms_out"),
}

PATTERNS = ("constant", "diurnal", "bursty")
MAX_LOAD = 1.2


class CdrParseError(ValueError):
    def __init__(self, path: str, lineno: int, reason: str) -> None:
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


class TrafficConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CdrRecord:
    square_id: int
    timestamp: int
    country_code: int
    sms_in: float = 0.0
    sms_out: float = 0.0
    call_in: float = 0.0
    call_out: float = 0.0
    internet: float = 0.0

    def activity(self, column: str) -> float:
        return float(getattr(self, column))


@dataclass(frozen=True)
class TrafficTrace:
    """Arrival-rate multipliers per control step and slice."""

    multipliers: np.ndarray  # (T, S), >= 0
    load: np.ndarray         # (T,), clipped to [0, MAX_LOAD]
    num_bins: int = 0        # source 10-minute bins (CDR traces only)

    def __post_init__(self) -> None:
        if self.multipliers.ndim != 2 or np.any(self.multipliers < 0):
            raise TrafficConfigError("multipliers must be a non-negative (T, S) array")

    @property
    def horizon(self) -> int:
        return self.multipliers.shape[0]

    @classmethod
    def from_multipliers(cls, mult: np.ndarray, num_bins: int = 0) -> "TrafficTrace":
        mult = np.asarray(mult, dtype=float)
        return cls(mult, np.clip(mult.mean(axis=1), 0.0, MAX_LOAD), num_bins)

    def scaled_to(self, load_level: float) -> "TrafficTrace":
        """Rescale so the mean multiplier over steps and slices equals ``load_level``."""
        mean = float(self.multipliers.mean())
        factor = 0.0 if mean == 0 else load_level / mean
        return TrafficTrace.from_multipliers(self.multipliers * factor, self.num_bins)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt")
    return open(path)


def _parse_row(fields: list[str], path: str, lineno: int) -> CdrRecord:
    if len(fields) < 3 or len(fields) > 8:
        raise CdrParseError(path, lineno, f"expected 3..8 tab-separated fields, got {len(fields)}")
    try:
        square = int(fields[0])
        ts = int(fields[1])
        cc = int(fields[2]) if fields[2].strip() else 0
        acts = [float(f) if f.strip() else 0.0 for f in fields[3:]]
    except ValueError as exc:
        raise CdrParseError(path, lineno, str(exc)) from None
    acts += [0.0] * (5 - len(acts))
    if any(a < 0 for a in acts):
        raise CdrParseError(path, lineno, "negative activity")
    if ts % BIN_MS:
        raise CdrParseError(path, lineno, f"timestamp {ts} not aligned to a 10-minute bin")
    return CdrRecord(square, ts, cc, *acts)


def load_cdr(path: str | Path, cell_filter: Iterable[int] | None = None,
             time_range: tuple[int, int] | None = None) -> list[CdrRecord]:
    """Parse a CDR grid file; ``time_range`` is a half-open [start, end) in epoch ms."""
    path = Path(path)
    cells = None if cell_filter is None else set(int(c) for c in cell_filter)
    out: list[CdrRecord] = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            rec = _parse_row(line.split("\t"), str(path), lineno)
            if cells is not None and rec.square_id not in cells:
                continue
            if time_range is not None and not (time_range[0] <= rec.timestamp < time_range[1]):
                continue
            out.append(rec)
    out.sort(key=lambda r: (r.timestamp, r.square_id))
    return out


def _fmt(x: float) -> str:
    return "" if x == 0 else repr(float(x))


def write_cdr(records: Sequence[CdrRecord], path: str | Path) -> None:
    """Write records back in the tab-separated layout (zeros as blanks)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt") as fh:
        for r in records:
            fields = [str(r.square_id), str(r.timestamp), str(r.country_code)]
            fields += [_fmt(r.activity(c)) for c in ACTIVITY_COLUMNS]
            fh.write("\t".join(fields) + "\n")


def bin_activity(records: Sequence[CdrRecord], mapping: Mapping[str, Sequence[str]] | None = None,
                 slice_order: Sequence[str] = ("eMBB", "URLLC", "mMTC")) -> np.ndarray:
    """Sum mapped activity per 10-minute bin and slice -> (bins, S); empty bins are 0."""
    if not records:
        raise TrafficConfigError("no CDR records to bin")
    mapping = DEFAULT_MAPPING if mapping is None else mapping
    for name in slice_order:
        if name not in mapping:
            raise TrafficConfigError(f"mapping has no entry for slice {name!r}")
        bad = [c for c in mapping[name] if c not in ACTIVITY_COLUMNS]
        if bad:
            raise TrafficConfigError(f"unknown activity columns {bad}")
    t0 = min(r.timestamp for r in records)
    t1 = max(r.timestamp for r in records)
    n_bins = (t1 - t0) // BIN_MS + 1
    act = np.zeros((n_bins, len(slice_order)))
    for r in records:
        b = (r.timestamp - t0) // BIN_MS
        for s, name in enumerate(slice_order):
            act[b, s] += sum(r.activity(c) for c in mapping[name])
    return act


def cdr_to_trace(records: Sequence[CdrRecord], mapping: Mapping[str, Sequence[str]] | None = None,
                 horizon: int = 200, dt: float = 1.0, bin_duration: float | None = None,
                 slice_order: Sequence[str] = ("eMBB", "URLLC", "mMTC")) -> TrafficTrace:
    """Max-normalise binned activity per slice and hold each bin over control steps.

    ``bin_duration`` is the simulated time one 10-minute bin stands for
    (default: one control step), so a bin spans ``round(bin_duration / dt)``
    steps.  A horizon longer than the data wraps around cyclically.
    """
    act = bin_activity(records, mapping, slice_order)
    peak = act.max(axis=0)
    norm = np.where(peak > 0, act / np.where(peak > 0, peak, 1.0), 0.0)
    steps_per_bin = max(1, int(round((dt if bin_duration is None else bin_duration) / dt)))
    held = np.repeat(norm, steps_per_bin, axis=0)
    if horizon > len(held):
        logger.warning("trace horizon %d exceeds %d steps of CDR data; wrapping cyclically",
                       horizon, len(held))
    idx = np.arange(horizon) % len(held)
    return TrafficTrace.from_multipliers(held[idx], num_bins=len(act))


def synth_trace(load_level: float, pattern: str = "constant", horizon: int = 200, seed: int = 0,
                num_slices: int = 3, period: int | None = None) -> TrafficTrace:
    """Synthetic multipliers whose mean over the horizon equals ``load_level`` per slice."""
    if pattern not in PATTERNS:
        raise TrafficConfigError(f"unknown traffic pattern {pattern!r}; choose from {PATTERNS}")
    if not 0.0 <= load_level <= MAX_LOAD:
        raise TrafficConfigError(f"load_level must lie in [0, {MAX_LOAD}], got {load_level}")
    if horizon < 1:
        raise TrafficConfigError("horizon must be >= 1")
    t = np.arange(horizon, dtype=float)
    if pattern == "constant":
        return TrafficTrace.from_multipliers(np.full((horizon, num_slices), float(load_level)))

    rng = np.random.default_rng(seed)
    if pattern == "diurnal":
        period = period or max(horizon // 2, 2)
        phase = rng.uniform(-0.4, 0.4, size=num_slices)
        shape = 1.0 + 0.5 * np.sin(2 * np.pi * t[:, None] / period + phase[None, :] - np.pi / 2)
        shape *= np.exp(rng.normal(0.0, 0.05, size=shape.shape))
    else:
        shape = np.ones((horizon, num_slices))
        on = np.zeros(num_slices, dtype=bool)
        for i in range(horizon):
            flip = rng.random(num_slices)
            on = np.where(on, flip > 0.25, flip < 0.08)
            shape[i] = np.where(on, 1.8, 1.0)
        shape *= np.exp(rng.normal(0.0, 0.1, size=shape.shape))
    shape = np.clip(shape, 0.0, None)
    mult = shape * (load_level / shape.mean(axis=0, keepdims=True))
    return TrafficTrace.from_multipliers(mult)


def cached_cdr_trace(path: str | Path, cache_dir: str | Path, **kwargs) -> TrafficTrace:
    """``cdr_to_trace(load_cdr(path))`` memoised on the file contents plus arguments."""
    path = Path(path)
    digest = hashlib.sha256(path.read_bytes())
    digest.update(json.dumps(kwargs, sort_keys=True, default=str).encode())
    cache = Path(cache_dir) / f"trace-{digest.hexdigest()[:24]}.npz"
    if cache.exists():
        with np.load(cache) as z:
            return TrafficTrace(z["multipliers"], z["load"], int(z["num_bins"]))
    load_kw = {k: kwargs.pop(k) for k in ("cell_filter", "time_range") if k in kwargs}
    trace = cdr_to_trace(load_cdr(path, **load_kw), **kwargs)
    cache.parent.mkdir(parents=True, exist_ok=True)
    np.savez(cache, multipliers=trace.multipliers, load=trace.load, num_bins=trace.num_bins)
    return trace
