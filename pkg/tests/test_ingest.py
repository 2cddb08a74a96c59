import gzip
import io
import os
from datetime import date, datetime, timezone

import pytest

from oracles import epoch
from webworkload.exceptions import (DecompressionError, HttpError, MalformedLine,
                                    PartialRange)
from webworkload.ingest import (SourceDescriptor, SummaryRecord, TraceEvent, bucket_from_path,
                                cache_path, fetch_wikimedia, parse_clf_line,
                                parse_clf_timestamp, parse_summary_record, read_source)


def test_timestamp_matches_calendar_oracle():
    assert parse_clf_timestamp("13/Jul/1998:22:00:01 +0000") == epoch(1998, 7, 13, 22, 0, 1)
    assert epoch(1998, 7, 13, 22, 0, 1) == 900367201


@pytest.mark.parametrize("text,offset", [
    ("01/Jul/1995:00:00:01 -0400", -240),
    ("29/Feb/2000:12:30:00 +0530", 330),
    ("31/Dec/1999:23:59:59 +0000", 0),
])
def test_timestamp_offsets(text, offset):
    d, rest = text.split(":", 1)
    dd, mon, yy = d.split("/")
    months = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]
    hh, mm, ss = rest.split()[0].split(":")
    want = epoch(int(yy), months.index(mon) + 1, int(dd), int(hh), int(mm), int(ss), offset)
    assert parse_clf_timestamp(text) == want


def test_assume_utc_ignores_offset():
    assert parse_clf_timestamp("01/Jul/1995:00:00:01 -0400", "assume-utc") == epoch(1995, 7, 1, 0, 0, 1)


def test_parse_line_fields():
    ev = parse_clf_line('199.72.81.55 - - [01/Jul/1995:00:00:01 -0400] '
                        '"GET /history/apollo/ HTTP/1.0" 200 6245')
    assert ev == TraceEvent(epoch(1995, 7, 1, 4, 0, 1), "199.72.81.55", "GET",
                            "/history/apollo/", 200, 6245, "HTTP/1.0")


def test_glued_method_and_dash_fields():
    ev = parse_clf_line('host - - [01/Jul/1995:00:00:01 -0400] "GET/images/x.gif" - -')
    assert ev.method == "GET" and ev.path == "/images/x.gif"
    assert ev.status is None and ev.bytes is None


def test_blank_line_is_none():
    assert parse_clf_line("   \n") is None


@pytest.mark.parametrize("line", [
    'host - - [31/Jun/1995:00:00:01 -0400] "GET / HTTP/1.0" 200 1',
    'host - - [01/Jul/1995:00:00:01 -0400] "GET / HTTP/1.0 200 1',
    'garbage',
    'host - - [01/Jul/1995:00:00:01 -0400] "GET / HTTP/1.0" 999 1',
])
def test_malformed(line):
    with pytest.raises(MalformedLine) as ei:
        parse_clf_line(line, position=7)
    assert ei.value.position == 7


def _write(tmp_path, name, lines, gz=False):
    p = tmp_path / name
    data = "".join(l + "\n" for l in lines).encode()
    p.write_bytes(gzip.compress(data) if gz else data)
    return str(p)


GOOD = 'h - - [01/Jul/1995:00:00:01 -0400] "GET / HTTP/1.0" 200 1'
BAD = 'h - - [01/Jul/1995:00:00:01 -0400] "GET / HTTP/1.0 200 1'


def test_lenient_reader_counts(tmp_path):
    p = _write(tmp_path, "a.log", [GOOD, BAD, "", GOOD])
    r = read_source(p, SourceDescriptor.for_path(p))
    recs = list(r)
    assert len(recs) == 2
    assert r.stats.as_dict() == {"total": 4, "parsed": 2, "skipped": 1, "malformed": 1}
    assert r.stats.errors[0][0] == 2


def test_strict_reader_aborts(tmp_path):
    p = _write(tmp_path, "a.log", [GOOD, BAD, GOOD])
    with pytest.raises(MalformedLine) as ei:
        list(read_source(p, SourceDescriptor.for_path(p), strict=True))
    assert ei.value.position == 2


def test_gzip_reader_and_corrupt(tmp_path):
    p = _write(tmp_path, "a.log.gz", [GOOD, GOOD], gz=True)
    assert len(list(read_source(p, SourceDescriptor.for_path(p)))) == 2
    bad = tmp_path / "b.log.gz"
    bad.write_bytes(b"\x1f\x8bnot really gzip")
    with pytest.raises(DecompressionError):
        list(read_source(str(bad), SourceDescriptor.for_path(str(bad))))


def test_summary_records(tmp_path):
    desc = SourceDescriptor("summary", 3600)
    rec = parse_summary_record("en Main_Page 42 0", desc, 3600)
    assert rec == SummaryRecord(3600, 42, (("project", "en"), ("page", "Main_Page")))
    with pytest.raises(MalformedLine):
        parse_summary_record("en Main_Page x 0", desc, 3600)
    with pytest.raises(ValueError):
        parse_summary_record("en Main_Page 1 0", desc, 10)


def test_bucket_from_path():
    want = epoch(2024, 3, 5, 7)
    assert bucket_from_path("pageviews-20240305-070000.gz") == want
    assert bucket_from_path("/c/en/2024/03/05/07.gz") == want
    with pytest.raises(ValueError):
        bucket_from_path("nope.gz")


def test_descriptor_validation():
    with pytest.raises(ValueError):
        SourceDescriptor("summary")
    with pytest.raises(ValueError):
        SourceDescriptor("clf", 3600)
    with pytest.raises(ValueError):
        SourceDescriptor(timezone_policy="local")


class FakeResponse:
    def __init__(self, status, content=b""):
        self.status_code = status
        self.content = content


class FakeSession:
    """Serves a canned dump per URL; records every call."""

    def __init__(self, status_for=None):
        self.calls = []
        self.status_for = status_for or (lambda url, n: 200)

    def get(self, url, timeout=None):
        self.calls.append(url)
        status = self.status_for(url, self.calls.count(url))
        if status != 200:
            return FakeResponse(status)
        body = b"en Main_Page 5 0\nde Haupt 3 0\nen.m Main_Page 2 0\nenx Foo 1 0\n"
        return FakeResponse(200, gzip.compress(body))


def test_fetch_cold_then_warm(tmp_path):
    s = FakeSession()
    paths = fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s,
                            sleep=lambda _: None)
    assert len(paths) == 24 and len(s.calls) == 24
    hour = datetime(2024, 1, 1, 5, tzinfo=timezone.utc)
    assert paths[5] == cache_path(tmp_path, "en", hour)
    assert paths[5].endswith(os.path.join("en", "2024", "01", "01", "05.gz"))
    # only the project and its dotted variants are kept
    assert gzip.decompress(open(paths[0], "rb").read()) == b"en Main_Page 5 0\nen.m Main_Page 2 0\n"
    s2 = FakeSession()
    again = fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s2)
    assert again == paths and s2.calls == []


def test_fetch_truncated_cache_refetched(tmp_path):
    s = FakeSession()
    paths = fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s)
    with open(paths[3], "ab") as fh:
        fh.write(b"x")
    s2 = FakeSession()
    fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s2)
    assert len(s2.calls) == 1


def test_fetch_missing_hours_raise_partial(tmp_path):
    s = FakeSession(lambda url, n: 404 if "-030000" in url or "-040000" in url else 200)
    with pytest.raises(PartialRange) as ei:
        fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s,
                        sleep=lambda _: None)
    assert list(ei.value.missing) == ["2024-01-01T03", "2024-01-01T04"]


def test_fetch_retries_with_backoff(tmp_path):
    waits = []
    s = FakeSession(lambda url, n: 503 if n < 3 else 200)
    fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s,
                    sleep=waits.append, backoff=0.5)
    assert waits[:2] == [0.5, 1.0]
    assert len(s.calls) == 72


def test_fetch_persistent_errors(tmp_path):
    s = FakeSession(lambda url, n: 503)
    with pytest.raises(HttpError):
        fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s,
                        sleep=lambda _: None)
    s = FakeSession(lambda url, n: 403)
    with pytest.raises(HttpError):
        fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path, session=s)
    with pytest.raises(ValueError):
        fetch_wikimedia("en", date(2024, 1, 2), date(2024, 1, 1), tmp_path, session=s)


def test_cached_dump_reads_as_summary(tmp_path):
    paths = fetch_wikimedia("en", date(2024, 1, 1), date(2024, 1, 1), tmp_path,
                            session=FakeSession())
    desc = SourceDescriptor.for_path(paths[2], "summary", 3600)
    recs = list(read_source(paths[2], desc))
    assert sum(r.count for r in recs) == 7
    assert all(r.bucket_start == epoch(2024, 1, 1, 2) for r in recs)
