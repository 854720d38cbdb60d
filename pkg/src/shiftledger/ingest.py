"""Multimodal input paths: interchange CSV, punch pairing, geofencing.

The interchange format is a UTF-8 CSV with the exact header::

    lat,lon,employer,start_date,start_time,end_date,end_time,state,label,tags,tz_offset

Dates are ``YYYY-MM-DD``, times ``HH:MM:SS``, coordinates decimal degrees,
tags pipe-joined, ``tz_offset`` signed minutes from UTC (local wall time =
UTC + offset).  Malformed rows are reported per line and never abort a
batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from typing import Callable, Iterable, Sequence

from shiftledger.timeline import (
    Interval,
    Layer,
    Source,
    StateRegistry,
    TimelineError,
    TimingEntry,
    UnknownLabel,
    UnknownState,
)

INTERCHANGE_HEADER = "lat,lon,employer,start_date,start_time,end_date,end_time,state,label,tags,tz_offset"
_COLUMNS = INTERCHANGE_HEADER.split(",")
TAG_SEPARATOR = "|"

EARTH_RADIUS_M = 6_371_000.0


class HeaderMismatch(ValueError):
    """First line of an interchange file does not match the exact header."""


class RowError(str, Enum):
    """Per-row rejection reasons."""

    BAD_SHAPE = "BadShape"
    BAD_COORDINATE = "BadCoordinate"
    BAD_EMPLOYER = "BadEmployer"
    BAD_DATE = "BadDate"
    BAD_TIME = "BadTime"
    BAD_OFFSET = "BadOffset"
    BAD_TAG = "BadTag"
    UNKNOWN_STATE = "UnknownState"
    UNKNOWN_LABEL = "UnknownLabel"
    START_NOT_BEFORE_END = "StartNotBeforeEnd"


@dataclass(frozen=True)
class RejectedRow:
    line: int
    reason: RowError
    detail: str = ""


@dataclass(frozen=True)
class IngestReport:
    accepted: int
    rejected: tuple[RejectedRow, ...]
    produced: tuple[TimingEntry, ...]


def _parse_date(raw: str) -> date:
    parts = raw.split("-")
    if len(parts) != 3 or [len(p) for p in parts] != [4, 2, 2]:
        raise ValueError(raw)
    return date(int(parts[0]), int(parts[1]), int(parts[2]))


def _parse_time(raw: str) -> time:
    parts = raw.split(":")
    if len(parts) != 3 or any(len(p) != 2 for p in parts):
        raise ValueError(raw)
    return time(int(parts[0]), int(parts[1]), int(parts[2]))


def _parse_coordinate(raw: str, limit: float) -> float:
    value = float(raw)
    if not math.isfinite(value) or abs(value) > limit:
        raise ValueError(raw)
    return value


def parse_interchange(text: str, registry: StateRegistry | None = None) -> IngestReport:
    """Parse interchange CSV into time-tracking entries.

    The whole file is rejected on a header mismatch; individual bad rows are
    collected with their line number and reason while the rest of the batch
    proceeds.
    """
    registry = registry or StateRegistry.default()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip("\r") != INTERCHANGE_HEADER:
        found = lines[0].strip("\r") if lines else ""
        raise HeaderMismatch(f"expected header {INTERCHANGE_HEADER!r}, found {found!r}")

    produced: list[TimingEntry] = []
    rejected: list[RejectedRow] = []
    for number, raw_line in enumerate(lines[1:], start=2):
        line = raw_line.strip("\r")
        if line == "":
            continue
        try:
            produced.append(_parse_row(line, registry))
        except _RowRejected as err:
            rejected.append(RejectedRow(number, err.reason, err.detail))
    return IngestReport(
        accepted=len(produced), rejected=tuple(rejected), produced=tuple(produced)
    )


class _RowRejected(Exception):
    def __init__(self, reason: RowError, detail: str = "") -> None:
        super().__init__(f"{reason.value}: {detail}")
        self.reason = reason
        self.detail = detail


def _parse_row(line: str, registry: StateRegistry) -> TimingEntry:
    fields = line.split(",")
    if len(fields) != len(_COLUMNS):
        raise _RowRejected(RowError.BAD_SHAPE, f"{len(fields)} fields")
    lat, lon, employer, start_date, start_time, end_date, end_time, state, label, tags, tz = fields

    try:
        _parse_coordinate(lat, 90.0)
        _parse_coordinate(lon, 180.0)
    except ValueError:
        raise _RowRejected(RowError.BAD_COORDINATE, f"{lat},{lon}")
    if employer.strip() == "":
        raise _RowRejected(RowError.BAD_EMPLOYER, "empty employer id")
    try:
        d_start, d_end = _parse_date(start_date), _parse_date(end_date)
    except ValueError as err:
        raise _RowRejected(RowError.BAD_DATE, str(err))
    try:
        t_start, t_end = _parse_time(start_time), _parse_time(end_time)
    except ValueError as err:
        raise _RowRejected(RowError.BAD_TIME, str(err))
    try:
        offset = int(tz) if tz.strip() else 0
        if abs(offset) >= 24 * 60:
            raise ValueError(tz)
    except ValueError:
        raise _RowRejected(RowError.BAD_OFFSET, tz)
    try:
        state_name = registry.resolve_state(state)
    except UnknownState:
        raise _RowRejected(RowError.UNKNOWN_STATE, state)
    try:
        label_name = registry.resolve_label(state_name, label)
    except UnknownLabel:
        raise _RowRejected(RowError.UNKNOWN_LABEL, label)

    tag_set: set[str] = set()
    if tags.strip():
        for tag in tags.split(TAG_SEPARATOR):
            if not tag or any(ch in tag for ch in (",", "\n", "\r")):
                raise _RowRejected(RowError.BAD_TAG, tag)
            tag_set.add(tag)

    zone = timezone(timedelta(minutes=offset))
    start = datetime.combine(d_start, t_start, tzinfo=zone)
    end = datetime.combine(d_end, t_end, tzinfo=zone)
    if start >= end:
        raise _RowRejected(RowError.START_NOT_BEFORE_END, f"{start} >= {end}")
    return TimingEntry(
        interval=Interval(start, end),
        state=state_name,
        layer=Layer.TIME_TRACKING,
        source=Source.MANUAL,
        label=label_name,
        tags=frozenset(tag_set),
    )


SiteLookup = Callable[[TimingEntry], tuple[float, float, str]]


def _default_site(_: TimingEntry) -> tuple[float, float, str]:
    return (0.0, 0.0, "UNKNOWN")


def serialize_interchange(
    entries: Iterable[TimingEntry], site_lookup: SiteLookup | None = None
) -> str:
    """Render entries as interchange CSV; re-parsing yields identical entries.

    Entries do not carry coordinates or an employer, so ``site_lookup``
    supplies those columns.  Rows are sorted by start, tags sorted, times
    emitted as UTC wall time with a zero offset.
    """
    site_lookup = site_lookup or _default_site
    lines = [INTERCHANGE_HEADER]
    for entry in sorted(entries, key=lambda e: (e.interval.start, e.interval.end)):
        lat, lon, employer = site_lookup(entry)
        start, end = entry.interval.start, entry.interval.end
        lines.append(
            ",".join(
                [
                    format(lat, "g"),
                    format(lon, "g"),
                    employer,
                    start.date().isoformat(),
                    start.time().isoformat(),
                    end.date().isoformat(),
                    end.time().isoformat(),
                    entry.state,
                    entry.label or "",
                    TAG_SEPARATOR.join(sorted(entry.tags)),
                    "0",
                ]
            )
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# punch events


class PunchDirection(str, Enum):
    IN = "in"
    OUT = "out"


@dataclass(frozen=True)
class PunchEvent:
    worker_id: str
    at: datetime
    direction: PunchDirection
    terminal: str = ""


class PunchAnomaly(str, Enum):
    OPEN_ENTRY = "open_entry"
    ORPHAN_OUT = "orphan_out"
    AUTO_CLOSED = "auto_closed"
    ZERO_LENGTH = "zero_length"


@dataclass(frozen=True)
class PunchIssue:
    worker_id: str
    at: datetime
    kind: PunchAnomaly


def punches_to_entries(
    events: Sequence[PunchEvent],
) -> tuple[list[TimingEntry], list[PunchIssue]]:
    """Pair in/out punches into at_work entries, reporting anomalies.

    An ``in`` with no following ``out`` is an open entry; an ``out`` with no
    open ``in`` is an orphan; of two consecutive ``in`` punches the first is
    auto-closed at the second one (flagged), which then opens.
    """
    entries: list[TimingEntry] = []
    issues: list[PunchIssue] = []
    by_worker: dict[str, list[PunchEvent]] = {}
    for event in events:
        by_worker.setdefault(event.worker_id, []).append(event)

    for worker_id in sorted(by_worker):
        stream = sorted(by_worker[worker_id], key=lambda e: e.at)
        open_at: datetime | None = None
        for event in stream:
            if event.direction is PunchDirection.IN:
                if open_at is not None:
                    issues.append(PunchIssue(worker_id, open_at, PunchAnomaly.AUTO_CLOSED))
                    _close(entries, issues, worker_id, open_at, event.at)
                open_at = event.at
            else:
                if open_at is None:
                    issues.append(PunchIssue(worker_id, event.at, PunchAnomaly.ORPHAN_OUT))
                else:
                    _close(entries, issues, worker_id, open_at, event.at)
                    open_at = None
        if open_at is not None:
            issues.append(PunchIssue(worker_id, open_at, PunchAnomaly.OPEN_ENTRY))
    return entries, issues


def _close(
    entries: list[TimingEntry],
    issues: list[PunchIssue],
    worker_id: str,
    start: datetime,
    end: datetime,
) -> None:
    if start >= end:
        issues.append(PunchIssue(worker_id, start, PunchAnomaly.ZERO_LENGTH))
        return
    entries.append(
        TimingEntry(
            interval=Interval(start, end),
            state="at_work",
            layer=Layer.TIME_TRACKING,
            source=Source.DIGITAL_LOG,
        )
    )


# ---------------------------------------------------------------------------
# geofencing


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    at: datetime

    def __post_init__(self) -> None:
        if abs(self.lat) > 90.0 or abs(self.lon) > 180.0:
            raise TimelineError(f"coordinates out of range: {self.lat},{self.lon}")


@dataclass(frozen=True)
class GeofenceSite:
    center_lat: float
    center_lon: float
    radius_m: float
    site_employer: str = ""

    def __post_init__(self) -> None:
        if self.radius_m <= 0:
            raise TimelineError("geofence radius must be positive")


def _haversine(lat_a: float, lon_a: float, lat_b: float, lon_b: float) -> float:
    lat1, lon1, lat2, lon2 = map(math.radians, (lat_a, lon_a, lat_b, lon_b))
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters (Earth radius 6 371 000 m)."""
    return _haversine(a.lat, a.lon, b.lat, b.lon)


DEFAULT_DWELL_MIN = timedelta(minutes=10)
DEFAULT_GAP_MAX = timedelta(minutes=10)


def geofence_to_entries(
    points: Sequence[GeoPoint],
    site: GeofenceSite,
    dwell_min: timedelta = DEFAULT_DWELL_MIN,
    gap_max: timedelta = DEFAULT_GAP_MAX,
) -> list[TimingEntry]:
    """Derive presence entries from a time-sorted GPS stream.

    Runs of in-radius points become candidate intervals bounded by the
    first and last inside sample (no extrapolation past evidence); a run
    also ends when sampling goes silent for longer than ``gap_max``.
    Candidates separated by gaps of at most ``gap_max`` are merged back
    (jitter blips); merged candidates shorter than ``dwell_min`` are
    dropped.
    """
    if dwell_min <= timedelta(0) or gap_max <= timedelta(0):
        raise TimelineError("dwell_min and gap_max must be positive")
    candidates: list[tuple[datetime, datetime]] = []
    run_start: datetime | None = None
    run_end: datetime | None = None
    for point in points:
        inside = (
            _haversine(point.lat, point.lon, site.center_lat, site.center_lon)
            <= site.radius_m
        )
        if inside:
            if run_start is not None and run_end is not None and point.at - run_end > gap_max:
                candidates.append((run_start, run_end))
                run_start = None
            if run_start is None:
                run_start = point.at
            run_end = point.at
        elif run_start is not None:
            candidates.append((run_start, run_end))  # type: ignore[arg-type]
            run_start = run_end = None
    if run_start is not None:
        candidates.append((run_start, run_end))  # type: ignore[arg-type]

    merged: list[tuple[datetime, datetime]] = []
    for start, end in candidates:
        if merged and start - merged[-1][1] <= gap_max:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))

    entries = []
    for start, end in merged:
        if end - start >= dwell_min and start < end:
            entries.append(
                TimingEntry(
                    interval=Interval(start, end),
                    state="at_work",
                    layer=Layer.TIME_TRACKING,
                    source=Source.GEOFENCE,
                )
            )
    return entries
