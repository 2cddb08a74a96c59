"""Synthetic workloads from polynomial patterns.

A pattern ``p`` describes a standardized intensity curve.  Inverting the
z-score with a target mean ``mu`` and deviation ``sigma`` gives the request
rate ``mu + sigma * p(t)`` in requests per hour, clipped at zero.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .exceptions import Unreachable, UnknownPattern
from .patterns import PatternLibrary, PolynomialModel, _horner, resolve_pattern
from .stats import burstiness as burstiness_of

logger = logging.getLogger(__name__)

HOUR = 3600
DAY = 86400
# 2024-01-01 is a Monday
DEFAULT_START = 1704067200
DEFAULT_WEEKLY_MODULATION = 0.2


@dataclass
class Schedule:
    """Piecewise-constant expected request rate (requests per hour) per interval."""

    resolution: int
    starts: np.ndarray
    rates: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.int64)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.starts.shape != self.rates.shape:
            raise ValueError("starts and rates differ in length")
        if np.any(self.rates < 0):
            raise ValueError("rates must be non-negative")
        if len(self.starts) > 1 and np.any(np.diff(self.starts) != self.resolution):
            raise ValueError("interval starts must be contiguous at the resolution")

    def __len__(self):
        return len(self.starts)

    @property
    def entries(self):
        return list(zip(self.starts.tolist(), self.rates.tolist()))

    @property
    def horizon(self):
        if not len(self):
            return (0, 0)
        return (int(self.starts[0]), int(self.starts[-1]) + self.resolution)

    def expected_counts(self) -> np.ndarray:
        return self.rates * self.resolution / HOUR

    def total_expected(self) -> float:
        return float(self.expected_counts().sum())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["interval_start", "rate"])
            for s, r in zip(self.starts.tolist(), self.rates.tolist()):
                w.writerow([s, repr(r)])

    @classmethod
    def read_csv(cls, path, metadata=None):
        with open(path, newline="") as fh:
            recs = list(csv.DictReader(fh))
        starts = [int(r["interval_start"]) for r in recs]
        res = starts[1] - starts[0] if len(starts) > 1 else HOUR
        return cls(res, starts, [float(r["rate"]) for r in recs], dict(metadata or {}))

    def to_dict(self):
        return {"resolution": self.resolution, "metadata": self.metadata,
                "entries": [{"interval_start": s, "rate": r} for s, r in self.entries]}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def read_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        e = d["entries"]
        return cls(d["resolution"], [x["interval_start"] for x in e], [x["rate"] for x in e],
                   d.get("metadata", {}))


@dataclass
class GenConfig:
    pattern: Union[str, PolynomialModel] = "D1"
    mean_rate: float = 1000.0
    std: float = 300.0
    duration: int = 7 * DAY
    resolution: int = HOUR
    noise: str = "poisson"
    burstiness_target: Optional[float] = None
    seed: int = 0
    start: int = DEFAULT_START

    def __post_init__(self):
        if not self.mean_rate > 0:
            raise ValueError("mean_rate must be positive")
        if self.std < 0:
            raise ValueError("std must be non-negative")
        if self.noise not in ("none", "poisson"):
            raise ValueError("noise must be 'none' or 'poisson'")
        if self.resolution <= 0 or self.duration <= 0 or self.duration % self.resolution:
            raise ValueError("duration must be a positive multiple of the resolution")
        if self.burstiness_target is not None and not -1 < self.burstiness_target < 1:
            raise ValueError("burstiness target must lie in (-1, 1)")


def _is_weekly(p: PolynomialModel) -> bool:
    return p.domain[1] - p.domain[0] == 7.0


def pattern_position(starts, p: PolynomialModel) -> np.ndarray:
    """Where in the pattern's period each epoch instant falls.

    Daily patterns use hours since midnight (UTC); weekly ones use whole
    days since Monday plus the domain origin (Monday = 1), so a weekly
    pattern is constant within each day.
    """
    starts = np.asarray(starts, dtype=np.int64)
    if _is_weekly(p):
        # 1970-01-01 was a Thursday; shift so Monday = 0
        days = (starts // DAY + 3) % 7
        return p.domain[0] + days.astype(float)
    return p.domain[0] + (starts % DAY) / HOUR


def _natural_step(p: PolynomialModel) -> int:
    return DAY if _is_weekly(p) else HOUR


def _grid(cfg: GenConfig):
    n = cfg.duration // cfg.resolution
    return cfg.start + cfg.resolution * np.arange(n, dtype=np.int64)


def rate_schedule(cfg: GenConfig, library: Optional[PatternLibrary] = None) -> Schedule:
    """Rates ``max(0, mu + sigma * p(t))`` evaluated at each interval start."""
    p = resolve_pattern(cfg.pattern, library)
    if _natural_step(p) % cfg.resolution:
        raise ValueError("resolution must divide the pattern's step (1 h daily, 1 d weekly)")
    starts = _grid(cfg)
    raw = cfg.mean_rate + cfg.std * _horner(p.coefficients, pattern_position(starts, p))
    clipped = float(np.mean(raw < 0)) if len(raw) else 0.0
    if clipped:
        logger.warning("%.1f%% of intervals clipped at zero; consider a smaller std",
                       100 * clipped)
    name = cfg.pattern if isinstance(cfg.pattern, str) else "custom"
    sched = Schedule(cfg.resolution, starts, np.maximum(raw, 0.0), {
        "patterns": [name], "mean_rate": cfg.mean_rate, "std": cfg.std, "seed": cfg.seed,
        "clipped_fraction": clipped,
    })
    if cfg.burstiness_target is not None:
        sched = inject_bursts(sched, cfg.burstiness_target, cfg.seed)
    return sched


def compose(weekly, daily, cfg: GenConfig, weekly_modulation: float = DEFAULT_WEEKLY_MODULATION,
            library: Optional[PatternLibrary] = None) -> Schedule:
    """Weekly pattern scales each day's mean; daily pattern shapes the hours.

    ``rate = max(0, mu * (1 + c_w * p_w(day)) + sigma * p_d(hour))``.
    """
    pw = resolve_pattern(weekly, library)
    pd = resolve_pattern(daily, library)
    if not _is_weekly(pw) or _is_weekly(pd):
        raise UnknownPattern("compose expects a weekly pattern and a daily pattern")
    if HOUR % cfg.resolution:
        raise ValueError("resolution must divide one hour")
    starts = _grid(cfg)
    day_pos = pattern_position(starts, pw)
    level = cfg.mean_rate * (1.0 + weekly_modulation * _horner(pw.coefficients, day_pos))
    raw = level + cfg.std * _horner(pd.coefficients, pattern_position(starts, pd))
    clipped = float(np.mean(raw < 0)) if len(raw) else 0.0
    names = [x if isinstance(x, str) else "custom" for x in (weekly, daily)]
    sched = Schedule(cfg.resolution, starts, np.maximum(raw, 0.0), {
        "patterns": names, "mean_rate": cfg.mean_rate, "std": cfg.std, "seed": cfg.seed,
        "weekly_modulation": weekly_modulation, "clipped_fraction": clipped,
    })
    if cfg.burstiness_target is not None:
        sched = inject_bursts(sched, cfg.burstiness_target, cfg.seed)
    return sched


def emit_events(s: Schedule, seed: int = 0, noise: str = "poisson") -> np.ndarray:
    """Arrival instants (float epoch seconds, sorted) realizing the schedule.

    With ``noise="poisson"`` each interval draws a Poisson count and places
    arrivals uniformly; ``noise="none"`` rounds the expected count and spaces
    arrivals evenly.
    """
    expected = s.expected_counts()
    if noise == "poisson":
        rng = np.random.default_rng(seed)
        counts = rng.poisson(expected)
        offsets = rng.random(int(counts.sum())) * s.resolution
    elif noise == "none":
        counts = np.rint(expected).astype(np.int64)
        offsets = np.concatenate([(np.arange(c) + 0.5) * s.resolution / c
                                  for c in counts if c > 0] or [np.empty(0)])
    else:
        raise ValueError("noise must be 'none' or 'poisson'")
    base = np.repeat(s.starts.astype(float), counts)
    events = base + offsets
    events.sort(kind="stable")
    return events


def _burst_rates(rates, idx, factor, total, burst_total):
    out = rates.copy()
    out[idx] = rates[idx] * factor
    rest = total - burst_total
    if rest > 0:
        scale = (total - factor * burst_total) / rest
        mask = np.ones(len(rates), dtype=bool)
        mask[idx] = False
        out[mask] = rates[mask] * scale
    return out


def inject_bursts(s: Schedule, target_b: float, seed: int = 0, tol: float = 0.05,
                  max_steps: int = 1000) -> Schedule:
    """Raise the schedule's burstiness to ``target_b`` while keeping its volume.

    A random subset of intervals is multiplied by a burst factor and the
    remaining intervals are scaled down to conserve the total.  The subset
    fraction is swept upward and, per fraction, the factor is found by
    bisection.
    """
    rates = s.rates
    current = burstiness_of(rates)
    if not target_b > current:
        raise ValueError(f"target burstiness {target_b} is not above the current {current:.3f}")
    if not target_b < 1:
        raise ValueError("burstiness target must be below 1")
    rng = np.random.default_rng(seed)
    active = np.flatnonzero(rates > 0)
    order = rng.permutation(active)
    total = float(rates.sum())
    fractions = [0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5]
    steps = 0
    for frac in fractions:
        n_burst = max(1, int(round(frac * len(active))))
        if n_burst >= len(active):
            break
        idx = np.sort(order[:n_burst])
        burst_total = float(rates[idx].sum())
        f_lo, f_hi = 1.0, total / burst_total
        steps += 1
        if burstiness_of(_burst_rates(rates, idx, f_hi, total, burst_total)) < target_b - tol:
            continue
        mid = f_hi
        while steps < max_steps:
            steps += 1
            mid = 0.5 * (f_lo + f_hi)
            b = burstiness_of(_burst_rates(rates, idx, mid, total, burst_total))
            if abs(b - target_b) <= tol / 10:
                break
            if b < target_b:
                f_lo = mid
            else:
                f_hi = mid
        factor = mid
        out = _burst_rates(rates, idx, factor, total, burst_total)
        out = np.maximum(out, 0.0)
        b = burstiness_of(out)
        if abs(b - target_b) <= tol:
            meta = dict(s.metadata)
            meta.update({"burstiness_target": target_b, "burstiness": b,
                         "burst_fraction": n_burst / len(rates), "burst_factor": factor})
            return Schedule(s.resolution, s.starts.copy(), out, meta)
        if steps >= max_steps:
            break
    raise Unreachable(f"burstiness {target_b} not reached within {max_steps} search steps")
