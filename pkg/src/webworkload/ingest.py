"""Parsing of event-based access logs and summary-based count dumps.

Two raw trace shapes are supported:

* event-based Common Log Format lines, one line per request::

    2705258 - - [13/Jul/1998:22:00:01 +0000] "GET /images/102378.gif HTTP/1.0" 200 1658

* summary-based Wikimedia pageview dumps, one line per (project, page) and
  one file per hour::

    en.m Cristiano_Ronaldo 4888 0
"""

from __future__ import annotations

import calendar
import gzip
import io
import logging
import os
import re
import time
import zlib
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterator, Optional, Union

from .exceptions import DecompressionError, HttpError, MalformedLine, PartialRange

logger = logging.getLogger(__name__)

MONTHS = {m: i for i, m in enumerate(
    ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"], start=1)}

FORMATS = ("clf", "summary")
TIMEZONE_POLICIES = ("use-offset", "assume-utc")
COMPRESSIONS = ("none", "gzip")

# host ident authuser [timestamp] "request" status bytes
CLF_PATTERN = re.compile(
    r'^(?P<host>\S+)\s+(?P<ident>\S+)\s+(?P<user>\S+)\s+'
    r'\[(?P<time>[^\]]+)\]\s+'
    r'"(?P<request>.*)"\s+'
    r'(?P<status>\d{3}|-)\s+(?P<bytes>\d+|-)\s*$'
)
TIME_PATTERN = re.compile(
    r'^(\d{1,2})/([A-Za-z]{3})/(\d{4}):(\d{2}):(\d{2}):(\d{2})(?:\s+([+-])(\d{2})(\d{2}))?$'
)
# Method glued to the path ("GET/images/x.gif") occurs in some trace renderings.
REQUEST_PATTERN = re.compile(r'^(?P<method>[A-Z]+)\s*(?P<path>\S*)(?:\s+(?P<protocol>\S+))?\s*$')


@dataclass(frozen=True)
class TraceEvent:
    """One request from an event-based log.

    ``status`` and ``bytes`` are ``None`` when the log carries ``-``.
    """

    timestamp: int
    client: str
    method: str
    path: str
    status: Optional[int]
    bytes: Optional[int]
    protocol: str = "HTTP/1.0"


@dataclass(frozen=True)
class SummaryRecord:
    bucket_start: int
    count: int
    labels: tuple = ()


@dataclass(frozen=True)
class SourceDescriptor:
    format: str = "clf"
    bucket_width: Optional[int] = None
    timezone_policy: str = "use-offset"
    compression: str = "none"

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.timezone_policy not in TIMEZONE_POLICIES:
            raise ValueError(f"timezone_policy must be one of {TIMEZONE_POLICIES}")
        if self.compression not in COMPRESSIONS:
            raise ValueError(f"compression must be one of {COMPRESSIONS}")
        if (self.format == "summary") != (self.bucket_width is not None):
            raise ValueError("bucket_width is required for summary sources and only for them")
        if self.bucket_width is not None and self.bucket_width <= 0:
            raise ValueError("bucket_width must be positive")

    @classmethod
    def for_path(cls, path, format=None, bucket_width=None, timezone_policy="use-offset"):
        """Guess compression from the file suffix and fill in summary defaults."""
        path = str(path)
        compression = "gzip" if path.endswith(".gz") else "none"
        if format is None:
            format = "summary" if bucket_width is not None else "clf"
        if format == "summary" and bucket_width is None:
            bucket_width = 3600
        return cls(format=format, bucket_width=bucket_width,
                   timezone_policy=timezone_policy, compression=compression)


def parse_clf_timestamp(text: str, timezone_policy: str = "use-offset") -> int:
    m = TIME_PATTERN.match(text.strip())
    if m is None:
        raise ValueError(f"bad timestamp {text!r}")
    day, mon, year, hh, mm, ss, sign, oh, om = m.groups()
    if mon not in MONTHS:
        raise ValueError(f"bad month {mon!r}")
    # datetime validates day-of-month and clock ranges
    dt = datetime(int(year), MONTHS[mon], int(day), int(hh), int(mm), int(ss))
    epoch = calendar.timegm(dt.timetuple())
    if sign is not None and timezone_policy == "use-offset":
        offset = int(oh) * 3600 + int(om) * 60
        epoch -= offset if sign == "+" else -offset
    return epoch


def parse_clf_line(line: str, timezone_policy: str = "use-offset",
                   position: int = 0) -> Optional[TraceEvent]:
    """Parse one Common Log Format line.

    Returns ``None`` for blank lines and raises :class:`MalformedLine` for
    anything that does not look like a CLF record.
    """
    line = line.rstrip("\r\n")
    if not line.strip():
        return None
    m = CLF_PATTERN.match(line)
    if m is None:
        raise MalformedLine(position, "not a Common Log Format record")
    try:
        timestamp = parse_clf_timestamp(m.group("time"), timezone_policy)
    except ValueError as exc:
        raise MalformedLine(position, str(exc)) from None

    request = m.group("request")
    rm = REQUEST_PATTERN.match(request)
    if rm is not None:
        method, path = rm.group("method"), rm.group("path")
        protocol = rm.group("protocol") or ""
    else:
        # keep unparseable request text verbatim; the timestamp is what counts
        method, path, protocol = "", request, ""

    status = m.group("status")
    status = None if status == "-" else int(status)
    if status is not None and not 100 <= status <= 599:
        raise MalformedLine(position, f"status {status} out of range")
    nbytes = m.group("bytes")
    nbytes = None if nbytes == "-" else int(nbytes)
    return TraceEvent(timestamp, m.group("host"), method, path, status, nbytes, protocol)


def parse_summary_record(line: str, desc: SourceDescriptor, bucket_start: int,
                         position: int = 0) -> Optional[SummaryRecord]:
    """Parse one ``project page count bytes`` line of a pageview dump."""
    if desc.bucket_width is None:
        raise ValueError("summary parsing needs a descriptor with bucket_width")
    if bucket_start % desc.bucket_width:
        raise ValueError(f"bucket_start {bucket_start} not aligned to {desc.bucket_width}s")
    line = line.rstrip("\r\n")
    if not line.strip():
        return None
    parts = line.split(" ")
    if len(parts) < 3:
        raise MalformedLine(position, "expected 'project page count bytes'")
    # page titles never contain spaces in the dumps, but be tolerant of them
    project, count_text = parts[0], parts[-2] if len(parts) >= 4 else parts[-1]
    page = " ".join(parts[1:-2] if len(parts) >= 4 else parts[1:-1])
    try:
        count = int(count_text)
    except ValueError:
        raise MalformedLine(position, f"count {count_text!r} is not an integer") from None
    if count < 0:
        raise MalformedLine(position, f"negative count {count}")
    return SummaryRecord(bucket_start, count, (("project", project), ("page", page)))


_HOURLY_NAME = re.compile(r'pageviews-(\d{4})(\d{2})(\d{2})-(\d{2})\d{4}')
_CACHE_NAME = re.compile(r'(\d{4})[/\\](\d{2})[/\\](\d{2})[/\\](\d{2})\.gz$')


def bucket_from_path(path) -> int:
    """Recover the hour a pageview file covers from its name."""
    path = str(path)
    m = _HOURLY_NAME.search(path) or _CACHE_NAME.search(path)
    if m is None:
        raise ValueError(f"cannot infer bucket start from file name {path!r}")
    y, mo, d, h = (int(g) for g in m.groups())
    return calendar.timegm((y, mo, d, h, 0, 0))


@dataclass
class ReadStats:
    total: int = 0
    parsed: int = 0
    skipped: int = 0
    malformed: int = 0
    errors: list = field(default_factory=list)

    def as_dict(self):
        return {"total": self.total, "parsed": self.parsed,
                "skipped": self.skipped, "malformed": self.malformed}


class SourceReader:
    """Iterate the records of one source in file order.

    ``stats`` is complete once iteration has finished.  In strict mode the
    first malformed line aborts iteration by raising :class:`MalformedLine`.
    """

    max_logged_errors = 20

    def __init__(self, path_or_url, desc: SourceDescriptor, strict=False,
                 bucket_start=None, session=None):
        self.source = path_or_url
        self.desc = desc
        self.strict = strict
        self.bucket_start = bucket_start
        self.session = session
        self.stats = ReadStats()

    def _raw(self) -> bytes:
        src = str(self.source)
        if src.startswith(("http://", "https://")):
            import requests
            session = self.session or requests
            resp = session.get(src, timeout=60)
            if resp.status_code != 200:
                raise HttpError(resp.status_code, src)
            return resp.content
        with open(src, "rb") as fh:
            return fh.read()

    def _lines(self) -> Iterator[str]:
        data = self._raw()
        if self.desc.compression == "gzip":
            try:
                data = gzip.decompress(data)
            except (OSError, EOFError, zlib.error) as exc:
                raise DecompressionError(f"{self.source}: {exc}") from exc
        text = data.decode("utf-8", errors="replace")
        yield from io.StringIO(text, newline=None)

    def __iter__(self) -> Iterator[Union[TraceEvent, SummaryRecord]]:
        stats = self.stats = ReadStats()
        if self.desc.format == "summary":
            bucket = self.bucket_start
            if bucket is None:
                bucket = bucket_from_path(self.source)

            def parse(line, pos):
                return parse_summary_record(line, self.desc, bucket, pos)
        else:
            def parse(line, pos):
                return parse_clf_line(line, self.desc.timezone_policy, pos)

        for pos, line in enumerate(self._lines(), start=1):
            stats.total += 1
            try:
                rec = parse(line, pos)
            except MalformedLine as exc:
                if self.strict:
                    stats.malformed += 1
                    raise
                stats.malformed += 1
                if len(stats.errors) < self.max_logged_errors:
                    stats.errors.append((exc.position, exc.reason))
                continue
            if rec is None:
                stats.skipped += 1
            else:
                stats.parsed += 1
                yield rec
        if stats.malformed:
            logger.warning("%s: %d malformed line(s) dropped", self.source, stats.malformed)


def read_source(path_or_url, desc: SourceDescriptor, strict=False, bucket_start=None,
                session=None) -> SourceReader:
    return SourceReader(path_or_url, desc, strict=strict, bucket_start=bucket_start,
                        session=session)


WIKIMEDIA_BASE = "https://dumps.wikimedia.org/other/pageviews"


def wikimedia_url(hour: datetime, base_url=WIKIMEDIA_BASE) -> str:
    return (f"{base_url}/{hour:%Y}/{hour:%Y-%m}/"
            f"pageviews-{hour:%Y%m%d-%H}0000.gz")


def cache_path(cache_dir, project, hour: datetime) -> str:
    return os.path.join(str(cache_dir), project, f"{hour:%Y}", f"{hour:%m}", f"{hour:%d}",
                        f"{hour:%H}.gz")


def _project_lines(raw_gz: bytes, project: str) -> bytes:
    text = gzip.decompress(raw_gz)
    prefix = project.encode() + b" "
    sub = project.encode() + b"."
    keep = [ln for ln in text.splitlines(keepends=True)
            if ln.startswith(prefix) or ln.startswith(sub)]
    return gzip.compress(b"".join(keep), mtime=0)


def _is_cached(path) -> bool:
    size_file = path + ".size"
    if not (os.path.exists(path) and os.path.exists(size_file)):
        return False
    with open(size_file) as fh:
        try:
            expected = int(fh.read().strip())
        except ValueError:
            return False
    return os.path.getsize(path) == expected


def fetch_wikimedia(project: str, start: date, end: date, cache_dir, session=None,
                    base_url=WIKIMEDIA_BASE, retries=3, backoff=1.0, sleep=time.sleep):
    """Download hourly pageview aggregates for ``project`` into ``cache_dir``.

    Every hour from ``start`` 00:00 through ``end`` 23:00 (UTC) is fetched
    unless already cached.  Only lines of ``project`` (and its ``project.*``
    variants such as mobile sites) are kept.  A ``.size`` sidecar records the
    written size so a truncated file is detected and refetched.

    Raises :class:`PartialRange` listing every hour that could not be
    obtained; nothing is silently dropped.
    """
    if end < start:
        raise ValueError(f"end {end} precedes start {start}")
    if session is None:
        import requests
        session = requests.Session()

    first = datetime(start.year, start.month, start.day, tzinfo=timezone.utc)
    n_hours = ((end - start).days + 1) * 24
    paths, missing = [], []
    for i in range(n_hours):
        hour = first + timedelta(hours=i)
        path = cache_path(cache_dir, project, hour)
        if _is_cached(path):
            paths.append(path)
            continue
        url = wikimedia_url(hour, base_url)
        content = None
        for attempt in range(retries):
            try:
                resp = session.get(url, timeout=120)
            except Exception as exc:  # connection-level failure, retried
                logger.warning("fetch %s failed (%s), attempt %d", url, exc, attempt + 1)
                status = None
            else:
                status = resp.status_code
                if status == 200:
                    content = resp.content
                    break
                if status == 404:
                    break
                if 400 <= status < 500:
                    raise HttpError(status, url)
            if attempt + 1 < retries:
                sleep(backoff * 2 ** attempt)
        if content is None:
            if status is not None and status != 404:
                raise HttpError(status, url)
            missing.append(hour.strftime("%Y-%m-%dT%H"))
            continue
        try:
            payload = _project_lines(content, project)
        except (OSError, EOFError, zlib.error) as exc:
            raise DecompressionError(f"{url}: {exc}") from exc
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = path + ".part"
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
        with open(path + ".size", "w") as fh:
            fh.write(str(len(payload)))
        paths.append(path)
    if missing:
        raise PartialRange(missing)
    return paths
