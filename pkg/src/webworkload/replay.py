"""Open-loop HTTP replay of event timestamps and CLF trace writing."""

from __future__ import annotations

import asyncio
import json
import logging
import math
import socket
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional
from urllib.parse import urlsplit

import numpy as np

from .exceptions import TargetUnreachable

logger = logging.getLogger(__name__)

LATE_THRESHOLD = 0.1
OVERRUN_THRESHOLD = 1.0
DEFAULT_MAX_IN_FLIGHT = 256
# upper bound on what a single-process scheduler can fire per second
FEASIBLE_RATE = 5000.0


@dataclass
class IntervalStats:
    start: float
    target_rate: float
    width: float = 1.0
    attempted: int = 0
    completed: int = 0
    failed: int = 0
    shed: int = 0
    late: int = 0

    @property
    def achieved_rate(self) -> float:
        return self.completed / self.width

    @property
    def rate_error(self) -> float:
        """Relative deviation of the achieved from the target rate."""
        if not self.target_rate:
            return 0.0
        return (self.achieved_rate - self.target_rate) / self.target_rate


@dataclass
class ReplayReport:
    interval: float
    intervals: list = field(default_factory=list)
    dry_run: bool = False
    time_scale: float = 1.0
    overruns: int = 0
    max_lag: float = 0.0
    feasible: bool = True
    peak_rate: float = 0.0

    @property
    def attempted(self):
        return sum(i.attempted for i in self.intervals)

    @property
    def completed(self):
        return sum(i.completed for i in self.intervals)

    @property
    def failed(self):
        return sum(i.failed for i in self.intervals)

    @property
    def late(self):
        return sum(i.late for i in self.intervals)

    @property
    def shed(self):
        return sum(i.shed for i in self.intervals)

    def to_dict(self):
        return {
            "dry_run": self.dry_run,
            "time_scale": self.time_scale,
            "interval": self.interval,
            "feasible": self.feasible,
            "peak_rate": self.peak_rate,
            "max_lag": self.max_lag,
            "overruns": self.overruns,
            "totals": {"attempted": self.attempted, "completed": self.completed,
                       "failed": self.failed, "shed": self.shed, "late": self.late},
            "intervals": [{"start": i.start, "target_rate": i.target_rate,
                           "achieved_rate": i.achieved_rate, "attempted": i.attempted,
                           "completed": i.completed,
                           "failed": i.failed, "shed": i.shed, "late": i.late,
                           "rate_error": i.rate_error} for i in self.intervals],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def firing_offsets(events, time_scale: float = 1.0) -> np.ndarray:
    """Seconds after replay start at which each event is fired."""
    if time_scale <= 0:
        raise ValueError("time_scale must be positive")
    ev = np.asarray(events, dtype=float)
    if ev.size == 0:
        return ev
    if np.any(np.diff(ev) < 0):
        raise ValueError("events must be sorted")
    return (ev - ev[0]) / time_scale


def _intervals(offsets, width):
    n_bins = int(math.floor(offsets[-1] / width)) + 1 if len(offsets) else 0
    idx = np.minimum((offsets // width).astype(int), max(n_bins - 1, 0))
    counts = np.bincount(idx, minlength=n_bins)
    stats = [IntervalStats(b * width, counts[b] / width, width) for b in range(n_bins)]
    return idx, stats


def preflight(target_url: str, timeout: float = 3.0) -> None:
    """TCP-level reachability check; sends no HTTP request."""
    parts = urlsplit(target_url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise TargetUnreachable(f"not an http(s) URL: {target_url!r}")
    port = parts.port or (443 if parts.scheme == "https" else 80)
    try:
        with socket.create_connection((parts.hostname, port), timeout=timeout):
            pass
    except OSError as exc:
        raise TargetUnreachable(f"{target_url}: {exc}") from exc


async def _run(offsets, idx, stats, target_url, max_in_flight, timeout, method, report):
    import httpx

    limits = httpx.Limits(max_connections=max_in_flight, max_keepalive_connections=max_in_flight)
    in_flight = 0
    tasks = set()

    async def fire(client, b):
        nonlocal in_flight
        try:
            resp = await client.request(method, target_url)
            if resp.status_code < 400:
                stats[b].completed += 1
            else:
                stats[b].failed += 1
        except httpx.HTTPError:
            stats[b].failed += 1
        finally:
            in_flight -= 1

    async with httpx.AsyncClient(limits=limits, timeout=timeout) as client:
        loop = asyncio.get_running_loop()
        t0 = loop.time()
        overrun_warned = False
        for off, b in zip(offsets.tolist(), idx.tolist()):
            delay = t0 + off - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            lag = loop.time() - (t0 + off)
            report.max_lag = max(report.max_lag, lag)
            st = stats[b]
            st.attempted += 1
            if lag > LATE_THRESHOLD:
                st.late += 1
            if lag > OVERRUN_THRESHOLD:
                report.overruns += 1
                if not overrun_warned:
                    logger.warning("scheduler is %.2fs behind the timeline", lag)
                    overrun_warned = True
            if in_flight >= max_in_flight:
                # shed, never queue: queueing would turn the driver closed-loop
                st.failed += 1
                st.shed += 1
                continue
            in_flight += 1
            task = asyncio.create_task(fire(client, b))
            tasks.add(task)
            task.add_done_callback(tasks.discard)
        if tasks:
            await asyncio.gather(*tasks)


def replay(events, target_url: Optional[str] = None, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
           time_scale: float = 1.0, dry_run: bool = False, interval: float = 1.0,
           timeout: float = 10.0, method: str = "GET") -> ReplayReport:
    """Fire one request per event at its (scaled) scheduled instant.

    Firing never waits for earlier responses.  When ``max_in_flight``
    requests are outstanding, further requests are shed and counted as
    failed.  ``interval`` is the report bin width in replay (scaled) seconds.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be at least 1")
    offsets = firing_offsets(events, time_scale)
    idx, stats = _intervals(offsets, interval)
    report = ReplayReport(interval, stats, dry_run=dry_run, time_scale=time_scale)
    report.peak_rate = float(max((s.target_rate for s in stats), default=0.0))
    report.feasible = bool(report.peak_rate <= FEASIBLE_RATE)
    if dry_run:
        for b, st in enumerate(stats):
            n = int(np.sum(idx == b))
            st.attempted = st.completed = n
        if not report.feasible:
            logger.warning("peak rate %.0f req/s exceeds what one scheduler can sustain",
                           report.peak_rate)
        return report
    if target_url is None:
        raise ValueError("target_url is required unless dry_run is set")
    preflight(target_url)
    if len(offsets):
        asyncio.run(_run(offsets, idx, stats, target_url, max_in_flight, timeout, method, report))
    return report


@dataclass
class ClfTemplate:
    clients: int = 1000
    client_prefix: str = "client"
    method: str = "GET"
    path: str = "/index.html"
    status: int = 200
    bytes: int = 1024
    protocol: str = "HTTP/1.0"


_MONTHS = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]


def format_clf_time(ts: int) -> str:
    d = datetime.fromtimestamp(int(ts), tz=timezone.utc)
    return (f"{d.day:02d}/{_MONTHS[d.month - 1]}/{d.year:04d}:"
            f"{d.hour:02d}:{d.minute:02d}:{d.second:02d} +0000")


def write_clf(events, path, template: ClfTemplate = ClfTemplate()) -> int:
    """Write one CLF line per event; sub-second parts are truncated.

    Returns the number of lines written.
    """
    ev = np.floor(np.asarray(events, dtype=float)).astype(np.int64)
    if ev.size and np.any(np.diff(ev) < 0):
        raise ValueError("events must be sorted")
    tail = f'"{template.method} {template.path} {template.protocol}" {template.status} {template.bytes}\n'
    last, stamp = None, ""
    with open(path, "w") as fh:
        buf = []
        for i, t in enumerate(ev.tolist()):
            if t != last:
                last, stamp = t, format_clf_time(t)
            buf.append(f"{template.client_prefix}{i % template.clients} - - [{stamp}] {tail}")
            if len(buf) >= 65536:
                fh.writelines(buf)
                buf.clear()
        fh.writelines(buf)
    return int(ev.size)
