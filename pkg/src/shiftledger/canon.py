"""Canonical serialization and reporting-period helpers.

The machine-readable export format everywhere in this package is
key-sorted, whitespace-free JSON encoded as UTF-8; digests are computed
over exactly those bytes.
"""

from __future__ import annotations

import calendar
import json
from datetime import date, datetime, timedelta, timezone
from typing import Any

from shiftledger.timeline import Interval


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode(
        "utf-8"
    )


class BadPeriod(ValueError):
    pass


def period_from_label(label: str) -> Interval:
    """Resolve a period label: ``YYYY-MM`` (calendar month, the default
    reporting granularity) or ``YYYY-MM-DD..YYYY-MM-DD`` (half-open day range)."""
    label = label.strip()
    if ".." in label:
        start_raw, _, end_raw = label.partition("..")
        try:
            start = date.fromisoformat(start_raw)
            end = date.fromisoformat(end_raw)
        except ValueError:
            raise BadPeriod(f"bad period range {label!r}")
        return Interval(_midnight(start), _midnight(end))
    parts = label.split("-")
    if len(parts) != 2:
        raise BadPeriod(f"bad period label {label!r} (expected YYYY-MM or start..end)")
    try:
        year, month = int(parts[0]), int(parts[1])
        first = date(year, month, 1)
    except ValueError:
        raise BadPeriod(f"bad period label {label!r}")
    days = calendar.monthrange(year, month)[1]
    return Interval(_midnight(first), _midnight(first + timedelta(days=days)))


def period_label(period: Interval) -> str:
    """Inverse of :func:`period_from_label` where possible."""
    start, end = period.start, period.end
    if (
        start.day == 1
        and start.time() == end.time()
        and start.hour == start.minute == start.second == 0
        and end.day == 1
        and (end.year, end.month) in ((start.year, start.month + 1), (start.year + 1, 1))
    ):
        return f"{start.year:04d}-{start.month:02d}"
    return f"{start.date().isoformat()}..{end.date().isoformat()}"


def _midnight(day: date) -> datetime:
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
