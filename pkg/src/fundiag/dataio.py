"""CSV ingestion and canonical serialization for link datasets.

A dataset directory holds four files:

- ``links.csv``:       ``link_id,length_m,lanes``
- ``timeseries.csv``:  ``timestamp,link_id,speed_kmh,flow_vph``
- ``events.csv``:      ``link_id,category,start,end``
- ``signs.csv``:       ``link_id,timestamp,sign_id,limit_mph``

Timestamps are ISO-8601 UTC (trailing ``Z`` or ``+00:00``).  Ingestion is
strict: a malformed row raises :class:`IngestError` carrying the file and
line number, and duplicate (link, timestamp) observations are rejected.
Writing uses a canonical row order and number format, so ingesting a
written dataset and writing it again reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .traffic import (
    EventCategory,
    EventRecord,
    Link,
    LinkSeries,
    Observation,
    SignReading,
)

TIMESERIES_HEADER = ["timestamp", "link_id", "speed_kmh", "flow_vph"]
EVENTS_HEADER = ["link_id", "category", "start", "end"]
SIGNS_HEADER = ["link_id", "timestamp", "sign_id", "limit_mph"]
LINKS_HEADER = ["link_id", "length_m", "lanes"]


class IngestError(ValueError):
    """A schema or row-level validation failure, with file and line."""

    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class IngestResult:
    """Validated series plus the links that could not be used."""

    series: list[LinkSeries]
    unusable_links: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def by_id(self) -> dict[str, LinkSeries]:
        return {s.link.id: s for s in self.series}


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 UTC instant; rejects naive or non-UTC values."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no timezone")
    if ts.utcoffset() != timezone.utc.utcoffset(None):
        raise ValueError(f"timestamp {text!r} is not UTC")
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _read_rows(path, header: list[str]):
    """Yield (line_number, row_dict); validates the header exactly."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            return  # zero-byte file: treated as empty, caller warns
        if got != header:
            raise IngestError(path, 1, f"expected header {header}, got {got}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(
                    path, reader.line_num, f"expected {len(header)} fields, got {len(row)}"
                )
            yield reader.line_num, dict(zip(header, row))


def _field(path, line, row, name, convert):
    try:
        return convert(row[name])
    except (ValueError, KeyError) as exc:
        raise IngestError(path, line, f"{name}: {exc}") from None


def _non_negative(text: str) -> float:
    x = float(text)
    if not (math.isfinite(x) and x >= 0):
        raise ValueError(f"{text!r} is not a non-negative finite number")
    return x


def read_links(path) -> dict[str, Link]:
    links: dict[str, Link] = {}
    for line, row in _read_rows(path, LINKS_HEADER):
        link_id = row["link_id"].strip()
        if link_id in links:
            raise IngestError(path, line, f"duplicate link_id {link_id!r}")
        length = _field(path, line, row, "length_m", float)
        lanes = _field(path, line, row, "lanes", int)
        try:
            links[link_id] = Link(id=link_id, length_m=length, lanes=lanes)
        except ValueError as exc:
            raise IngestError(path, line, str(exc)) from None
    return links


def ingest(timeseries_csv, events_csv, signs_csv, links_csv) -> IngestResult:
    """Read and validate a dataset; one LinkSeries per usable link.

    A link is usable when it has at least one parsable observation.
    Links declared in ``links.csv`` without observations are reported in
    ``unusable_links`` (dead sensors), not errored.
    """
    links = read_links(links_csv)

    def known(path, line, link_id: str) -> str:
        if link_id not in links:
            raise IngestError(path, line, f"unknown link_id {link_id!r}")
        return link_id

    observations: dict[str, dict[datetime, Observation]] = {i: {} for i in links}
    n_rows = 0
    for line, row in _read_rows(timeseries_csv, TIMESERIES_HEADER):
        n_rows += 1
        link_id = known(timeseries_csv, line, row["link_id"].strip())
        ts = _field(timeseries_csv, line, row, "timestamp", parse_timestamp)
        speed = _field(timeseries_csv, line, row, "speed_kmh", _non_negative)
        flow = _field(timeseries_csv, line, row, "flow_vph", _non_negative)
        if ts in observations[link_id]:
            raise IngestError(
                timeseries_csv, line,
                f"duplicate observation for ({link_id}, {format_timestamp(ts)})",
            )
        observations[link_id][ts] = Observation(timestamp=ts, speed_kmh=speed, flow_vph=flow)

    events: dict[str, list[EventRecord]] = {i: [] for i in links}
    for line, row in _read_rows(events_csv, EVENTS_HEADER):
        link_id = known(events_csv, line, row["link_id"].strip())
        category = _field(events_csv, line, row, "category", EventCategory)
        start = _field(events_csv, line, row, "start", parse_timestamp)
        end = _field(events_csv, line, row, "end", parse_timestamp)
        try:
            events[link_id].append(EventRecord(link_id=link_id, category=category,
                                               start=start, end=end))
        except ValueError as exc:
            raise IngestError(events_csv, line, str(exc)) from None

    signs: dict[str, list[SignReading]] = {i: [] for i in links}
    for line, row in _read_rows(signs_csv, SIGNS_HEADER):
        link_id = known(signs_csv, line, row["link_id"].strip())
        ts = _field(signs_csv, line, row, "timestamp", parse_timestamp)
        limit = _field(signs_csv, line, row, "limit_mph", int)
        try:
            signs[link_id].append(SignReading(link_id=link_id, timestamp=ts,
                                              sign_id=row["sign_id"].strip(),
                                              limit_mph=limit))
        except ValueError as exc:
            raise IngestError(signs_csv, line, str(exc)) from None

    warnings = []
    if n_rows == 0:
        warnings.append(f"{timeseries_csv}: no observation rows")

    series = []
    unusable = []
    for link_id in sorted(links):
        obs = observations[link_id]
        if not obs:
            unusable.append(link_id)
            continue
        series.append(LinkSeries(
            link=links[link_id],
            observations=tuple(obs[t] for t in sorted(obs)),
            events=tuple(sorted(events[link_id],
                                key=lambda e: (e.start, e.end, e.category.value))),
            signs=tuple(sorted(signs[link_id],
                               key=lambda s: (s.timestamp, s.sign_id))),
        ))
    if unusable:
        warnings.append(
            f"{len(series)} of {len(links)} links usable; "
            f"no observations for: {', '.join(unusable)}"
        )
    return IngestResult(series=series, unusable_links=unusable, warnings=warnings)


def read_dataset(dataset_dir) -> IngestResult:
    d = Path(dataset_dir)
    return ingest(d / "timeseries.csv", d / "events.csv",
                  d / "signs.csv", d / "links.csv")


def _num(x: float) -> str:
    # repr() is the shortest round-trip form; integers still carry ".0"
    return repr(float(x))


def write_dataset(dataset_dir, series: list[LinkSeries]) -> list[Path]:
    """Write the four canonical CSV files; returns the paths written."""
    d = Path(dataset_dir)
    d.mkdir(parents=True, exist_ok=True)
    series = sorted(series, key=lambda s: s.link.id)

    paths = []

    def open_csv(name, header):
        path = d / name
        paths.append(path)
        fh = open(path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(header)
        return fh, writer

    fh, writer = open_csv("links.csv", LINKS_HEADER)
    with fh:
        for s in series:
            writer.writerow([s.link.id, _num(s.link.length_m), s.link.lanes])

    fh, writer = open_csv("timeseries.csv", TIMESERIES_HEADER)
    with fh:
        for s in series:
            for o in s.observations:
                writer.writerow([format_timestamp(o.timestamp), s.link.id,
                                 _num(o.speed_kmh), _num(o.flow_vph)])

    fh, writer = open_csv("events.csv", EVENTS_HEADER)
    with fh:
        for s in series:
            for e in s.events:
                writer.writerow([s.link.id, e.category.value,
                                 format_timestamp(e.start), format_timestamp(e.end)])

    fh, writer = open_csv("signs.csv", SIGNS_HEADER)
    with fh:
        for s in series:
            for r in s.signs:
                writer.writerow([s.link.id, format_timestamp(r.timestamp),
                                 r.sign_id, r.limit_mph])

    return paths
