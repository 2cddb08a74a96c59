"""Binning of record streams and reshaping into daily/weekly matrices."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import IncompatibleBucket
from .ingest import SummaryRecord, TraceEvent

logger = logging.getLogger(__name__)

HOUR = 3600
DAY = 86400
GRANULARITY_WIDTH = {"daily": 24, "weekly": 7}


def _epoch_date(ts: int) -> date:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).date()


def _date_epoch(d: date) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeries:
    dataset_id: str
    bin_width: int
    starts: np.ndarray
    counts: np.ndarray
    gaps: tuple = ()

    def __post_init__(self):
        starts = _frozen(np.asarray(self.starts, dtype=np.int64))
        counts = _frozen(np.asarray(self.counts, dtype=float))
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "counts", counts)
        if starts.shape != counts.shape:
            raise ValueError("starts and counts differ in length")
        if len(starts):
            if np.any(starts % self.bin_width):
                raise ValueError("bin starts not aligned to bin width")
            if np.any(np.diff(starts) <= 0):
                raise ValueError("bin starts must be strictly increasing")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")

    def __len__(self):
        return len(self.starts)

    @property
    def bins(self):
        return list(zip(self.starts.tolist(), self.counts.tolist()))

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def bin_events(records: Iterable, bin_width: int = HOUR, bucket_width: Optional[int] = None,
               dataset_id: str = "") -> TimeSeries:
    """Count events (or sum summary counts) per ``[start, start + bin_width)`` bin.

    Interior bins without records are materialized with count 0 and listed
    in ``gaps``.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if bucket_width is not None and bin_width % bucket_width:
        raise IncompatibleBucket(
            f"summary bucket width {bucket_width}s does not divide bin width {bin_width}s")
    acc: dict = {}
    for rec in records:
        if isinstance(rec, TraceEvent):
            key, n = rec.timestamp - rec.timestamp % bin_width, 1
        elif isinstance(rec, SummaryRecord):
            key, n = rec.bucket_start - rec.bucket_start % bin_width, rec.count
        else:
            # bare epoch seconds, as produced by the synthetic generator
            t = int(rec)
            key, n = t - t % bin_width, 1
        acc[key] = acc.get(key, 0) + n
    if not acc:
        return TimeSeries(dataset_id, bin_width, [], [])
    lo, hi = min(acc), max(acc)
    starts = np.arange(lo, hi + bin_width, bin_width, dtype=np.int64)
    counts = np.array([acc.get(int(s), 0) for s in starts], dtype=float)
    gaps = tuple(int(s) for s in starts if int(s) not in acc)
    return TimeSeries(dataset_id, bin_width, starts, counts, gaps)


def rebin(ts: TimeSeries, bin_width: int) -> TimeSeries:
    """Sum a series into coarser bins; coarse bins only partly covered are dropped."""
    if bin_width % ts.bin_width:
        raise IncompatibleBucket(f"{ts.bin_width}s bins do not divide {bin_width}s")
    if not len(ts):
        return TimeSeries(ts.dataset_id, bin_width, [], [])
    per = bin_width // ts.bin_width
    keys = ts.starts - ts.starts % bin_width
    uniq, inverse, n = np.unique(keys, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=ts.counts, minlength=len(uniq))
    full = n == per
    if not full.all():
        logger.info("%s: %d partial %ds bin(s) dropped while rebinning",
                    ts.dataset_id, int((~full).sum()), bin_width)
    gap_keys = {int(g - g % bin_width) for g in ts.gaps}
    starts = uniq[full]
    return TimeSeries(ts.dataset_id, bin_width, starts, sums[full],
                      tuple(int(s) for s in starts if int(s) in gap_keys))


@dataclass(frozen=True)
class WorkloadMatrix:
    """Fixed-width rows: 24 hourly values per day or 7 daily values per week.

    Rows of several datasets may be stacked (see :func:`combine`); each row
    keeps its own dataset id.  ``preprocessed`` marks standardized content so
    that raw-only statistics can refuse it.
    """

    granularity: str
    origins: tuple
    datasets: tuple
    values: np.ndarray
    dropped: tuple = ()
    preprocessed: bool = False

    def __post_init__(self):
        if self.granularity not in GRANULARITY_WIDTH:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        values = np.asarray(self.values, dtype=float)
        if values.size == 0:
            values = values.reshape(0, self.width)
        if values.ndim != 2 or values.shape[1] != self.width:
            raise ValueError(f"{self.granularity} rows must have width {self.width}")
        if not (len(self.origins) == len(self.datasets) == values.shape[0]):
            raise ValueError("origins, datasets and values must have one entry per row")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "origins", tuple(self.origins))
        object.__setattr__(self, "datasets", tuple(self.datasets))

    @property
    def width(self) -> int:
        return GRANULARITY_WIDTH[self.granularity]

    @property
    def dataset_id(self) -> str:
        ids = sorted(set(self.datasets))
        return ids[0] if len(ids) == 1 else "+".join(ids)

    def __len__(self):
        return self.values.shape[0]

    @property
    def rows(self):
        return list(zip(self.origins, self.values))

    def select(self, mask) -> "WorkloadMatrix":
        idx = np.flatnonzero(np.asarray(mask))
        return replace(self, origins=tuple(self.origins[i] for i in idx),
                       datasets=tuple(self.datasets[i] for i in idx),
                       values=self.values[idx])


def _matrix_from_series(ts: TimeSeries, granularity: str, row_span: int,
                        row_start_ok, scan_from: Optional[date] = None) -> WorkloadMatrix:
    width = GRANULARITY_WIDTH[granularity]
    if not len(ts):
        logger.warning("%s: empty series, no %s rows", ts.dataset_id, granularity)
        return WorkloadMatrix(granularity, (), (), np.empty((0, width)))
    lookup = dict(zip(ts.starts.tolist(), ts.counts.tolist()))
    last = _epoch_date(ts.starts[-1])
    origins, rows, dropped = [], [], []
    d = scan_from or _epoch_date(ts.starts[0])
    while d <= last:
        if not row_start_ok(d):
            d += timedelta(days=1)
            continue
        base = _date_epoch(d)
        keys = [base + i * ts.bin_width for i in range(width)]
        if all(k in lookup for k in keys):
            origins.append(d)
            rows.append([lookup[k] for k in keys])
        else:
            dropped.append(d)
        d += timedelta(days=row_span)
    if not rows:
        logger.warning("%s: no complete %s rows", ts.dataset_id, granularity)
    elif dropped:
        logger.info("%s: dropped %d incomplete %s row(s)", ts.dataset_id, len(dropped), granularity)
    return WorkloadMatrix(granularity, tuple(origins), (ts.dataset_id,) * len(rows),
                          np.array(rows, dtype=float).reshape(len(rows), width), tuple(dropped))


def _drop_gap_bins(ts: TimeSeries) -> TimeSeries:
    keep = ~np.isin(ts.starts, np.asarray(ts.gaps, dtype=np.int64))
    return TimeSeries(ts.dataset_id, ts.bin_width, ts.starts[keep], ts.counts[keep])


def to_daily_matrix(ts: TimeSeries, drop_gaps: bool = False) -> WorkloadMatrix:
    """One row of 24 hourly counts per complete calendar day (UTC).

    Interior zero-count gap bins count as observed hours unless
    ``drop_gaps`` is set, in which case days containing one are dropped.
    """
    if ts.bin_width != HOUR:
        raise ValueError("daily matrix needs an hourly series")
    if drop_gaps:
        ts = _drop_gap_bins(ts)
    return _matrix_from_series(ts, "daily", 1, lambda d: True)


def to_weekly_matrix(ts: TimeSeries) -> WorkloadMatrix:
    """One row of 7 daily counts per complete Monday-to-Sunday week."""
    if ts.bin_width == HOUR:
        ts = rebin(ts, DAY)
    if ts.bin_width != DAY:
        raise ValueError("weekly matrix needs a daily series")
    monday = None
    if len(ts):
        # scan from the Monday on or before the first day so a partial
        # leading week is itemized as dropped
        first = _epoch_date(ts.starts[0])
        monday = first - timedelta(days=first.weekday())
    return _matrix_from_series(ts, "weekly", 7, lambda d: d.weekday() == 0, scan_from=monday)


def combine(matrices: Sequence[WorkloadMatrix]) -> WorkloadMatrix:
    """Stack matrices of one granularity from several datasets."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("nothing to combine")
    gran = {m.granularity for m in matrices}
    if len(gran) != 1:
        raise ValueError(f"cannot combine granularities {sorted(gran)}")
    prep = {m.preprocessed for m in matrices}
    if len(prep) != 1:
        raise ValueError("cannot combine raw and preprocessed matrices")
    width = matrices[0].width
    return WorkloadMatrix(
        gran.pop(),
        sum((m.origins for m in matrices), ()),
        sum((m.datasets for m in matrices), ()),
        np.vstack([m.values.reshape(-1, width) for m in matrices]),
        sum((m.dropped for m in matrices), ()),
        prep.pop(),
    )


def _fmt(x: float) -> str:
    # repr round-trips exactly; integral counts stay readable
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def write_matrix_csv(m: WorkloadMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "origin"] + [f"v{i}" for i in range(m.width)])
        for ds, origin, row in zip(m.datasets, m.origins, m.values):
            w.writerow([ds, origin.isoformat()] + [_fmt(x) for x in row])


def read_matrix_csv(path, preprocessed: bool = False) -> WorkloadMatrix:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        width = len(header) - 2
        gran = {24: "daily", 7: "weekly"}.get(width)
        if gran is None or header[:2] != ["dataset", "origin"]:
            raise ValueError(f"{path}: not a workload matrix CSV")
        datasets, origins, rows = [], [], []
        for rec in r:
            datasets.append(rec[0])
            origins.append(date.fromisoformat(rec[1]))
            rows.append([float(x) for x in rec[2:]])
    return WorkloadMatrix(gran, tuple(origins), tuple(datasets),
                          np.array(rows, dtype=float).reshape(len(rows), width),
                          preprocessed=preprocessed)


def write_series_csv(ts: TimeSeries, path) -> None:
    gaps = set(ts.gaps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "bin_start", "count", "gap"])
        for s, c in zip(ts.starts.tolist(), ts.counts.tolist()):
            w.writerow([ts.dataset_id, s, _fmt(c), int(s in gaps)])


def read_series_csv(path) -> TimeSeries:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        recs = list(r)
    if not recs:
        return TimeSeries("", HOUR, [], [])
    starts = [int(x["bin_start"]) for x in recs]
    width = min(np.diff(starts)) if len(starts) > 1 else HOUR
    return TimeSeries(recs[0]["dataset"], int(width), starts,
                      [float(x["count"]) for x in recs],
                      tuple(int(x["bin_start"]) for x in recs if x["gap"] == "1"))
