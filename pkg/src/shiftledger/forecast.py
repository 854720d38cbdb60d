"""Presence-profile forecasting, anomaly detection, and mood series.

The profile method is a deterministic stand-in for a learned sequence
model: per (weekday, time-of-day bin) it tracks how often the worker was
present over a trailing window of weeks.  ``forecast_resolve`` uses the
profile to remove habitual pauses from merged coverage and to recover gaps
the profile strongly supports; it is the seam where a trained model could
later plug in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from typing import Iterable, Sequence

from shiftledger.timeline import (
    AT_WORK,
    DEFAULT_BRIDGE_THRESHOLD,
    Interval,
    Layer,
    LayeredTimeline,
    Provenance,
    RemovedSpan,
    ResolvedCoverage,
    Segment,
    Span,
    TimelineError,
    intersect_spans,
    layer_union_merging,
    merge_spans,
    subtract_spans,
)

DAY = timedelta(days=1)


class InsufficientHistory(ValueError):
    """Not enough history to build a profile or score anomalies."""


class ProfileMismatch(ValueError):
    """Profile bin layout is incompatible with the resolution request."""


@dataclass(frozen=True)
class PresenceProfile:
    """Presence probability per (weekday, time-of-day bin).

    ``prob[(weekday, bin)]`` is the fraction of the trailing
    ``weeks_window`` occurrences of that weekday in which the bin was at
    least half covered by tracked presence; ``support`` counts the
    occurrences.  Missing keys mean no support (probability zero).
    """

    bin_size: timedelta = timedelta(minutes=30)
    weeks_window: int = 8
    state: str = AT_WORK
    prob: dict[tuple[int, int], float] = field(default_factory=dict)
    support: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seconds = self.bin_size.total_seconds()
        if seconds <= 0 or seconds != int(seconds) or 86400 % int(seconds) != 0:
            raise ProfileMismatch(f"bin size {self.bin_size} does not divide a day evenly")
        for value in self.prob.values():
            if not 0.0 <= value <= 1.0:
                raise ProfileMismatch(f"probability {value} outside [0, 1]")

    @property
    def bins_per_day(self) -> int:
        return int(86400 // self.bin_size.total_seconds())

    def probability(self, weekday: int, bin_index: int) -> float:
        return self.prob.get((weekday, bin_index), 0.0)


def _day_start(day: date) -> datetime:
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)


def build_profile(
    history: Iterable[ResolvedCoverage],
    bin_size: timedelta = timedelta(minutes=30),
    weeks_window: int = 8,
    state: str = AT_WORK,
) -> PresenceProfile:
    """Build a presence profile from historical coverage.

    A bin counts as present on a day when at least half of it is covered by
    the tracked state.  Per weekday, only the most recent ``weeks_window``
    occurrences inside the history span contribute.
    """
    spans: list[Span] = []
    for coverage in history:
        for seg in coverage.segments:
            if seg.state == state:
                spans.append((seg.interval.start, seg.interval.end))
    if not spans:
        raise InsufficientHistory("history is empty")
    spans = merge_spans(spans)
    first_day = spans[0][0].date()
    last_day = max(end for _, end in spans).date()
    if (last_day - first_day).days + 1 < 7:
        raise InsufficientHistory(
            f"history spans {first_day}..{last_day}, less than one week"
        )

    profile = PresenceProfile(bin_size=bin_size, weeks_window=weeks_window, state=state)
    bins = profile.bins_per_day
    half_bin = bin_size / 2

    # Most recent weeks_window occurrences of each weekday within the span.
    days_by_weekday: dict[int, list[date]] = {}
    day = last_day
    while day >= first_day:
        days_by_weekday.setdefault(day.weekday(), []).append(day)
        day -= timedelta(days=1)
    hits: dict[tuple[int, int], int] = {}
    counts: dict[tuple[int, int], int] = {}
    for weekday, days in days_by_weekday.items():
        for occurrence in days[:weeks_window]:
            start = _day_start(occurrence)
            day_spans = intersect_spans(spans, [(start, start + DAY)])
            for index in range(bins):
                bin_span = (start + index * bin_size, start + (index + 1) * bin_size)
                covered = sum(
                    (min(end, bin_span[1]) - max(begin, bin_span[0])).total_seconds()
                    for begin, end in day_spans
                    if begin < bin_span[1] and end > bin_span[0]
                )
                key = (weekday, index)
                counts[key] = counts.get(key, 0) + 1
                if covered >= half_bin.total_seconds():
                    hits[key] = hits.get(key, 0) + 1
    profile.support.update(counts)
    profile.prob.update(
        {key: hits.get(key, 0) / count for key, count in counts.items()}
    )
    return profile


@dataclass(frozen=True)
class ForecastConfig:
    """Thresholds steering pause detection and gap recovery."""

    p_fill: float = 0.6
    p_pause: float = 0.25
    bridge_threshold: timedelta = DEFAULT_BRIDGE_THRESHOLD

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_pause < self.p_fill <= 1.0):
            raise ValueError(
                f"thresholds must satisfy 0 <= p_pause < p_fill <= 1, got "
                f"p_pause={self.p_pause}, p_fill={self.p_fill}"
            )


def _bin_range(span: Span, bin_size: timedelta, full_only: bool) -> list[tuple[datetime, int]]:
    """Bins touching a span as (bin start, index-in-day) pairs.

    With ``full_only`` only bins entirely inside the span are returned,
    otherwise every intersecting bin.
    """
    start, end = span
    day = _day_start(start.date())
    cursor = day + ((start - day) // bin_size) * bin_size
    if full_only and cursor < start:
        cursor += bin_size
    out = []
    while (cursor + bin_size <= end) if full_only else (cursor < end):
        day_anchor = _day_start(cursor.date())
        out.append((cursor, int((cursor - day_anchor) // bin_size)))
        cursor += bin_size
    return out


def forecast_resolve(
    timeline: LayeredTimeline,
    profile: PresenceProfile,
    config: ForecastConfig | None = None,
) -> ResolvedCoverage:
    """Merge-union the layers, then apply profile-driven corrections.

    Pause detection removes maximal runs of whole bins inside merged work
    spans whose presence probability is below ``p_pause``, unless the run
    holds time-tracking evidence.  Gap recovery fills remaining gaps whose
    bins all score at least ``p_fill``.
    """
    config = config or ForecastConfig()
    if 86400 % int(profile.bin_size.total_seconds()) != 0:
        raise ProfileMismatch(f"bin size {profile.bin_size} does not divide a day")
    base = layer_union_merging(timeline, config.bridge_threshold)
    state = profile.state

    work_spans = merge_spans(
        (seg.interval.start, seg.interval.end)
        for seg in base.segments
        if seg.state == state
    )
    other_spans = merge_spans(
        (seg.interval.start, seg.interval.end)
        for seg in base.segments
        if seg.state != state
    )
    evidence = merge_spans(
        (entry.interval.start, entry.interval.end)
        for entry in timeline.layers.get(Layer.TIME_TRACKING, ())
        if entry.state == state
    )

    removed_spans: list[Span] = []
    for span in work_spans:
        run_start: datetime | None = None
        run_end: datetime | None = None
        for bin_start, index in _bin_range(span, profile.bin_size, full_only=True):
            bin_end = bin_start + profile.bin_size
            low = profile.probability(bin_start.weekday(), index) < config.p_pause
            unobserved = not intersect_spans([(bin_start, bin_end)], evidence)
            if low and unobserved:
                if run_start is None:
                    run_start = bin_start
                run_end = bin_end
            elif run_start is not None:
                removed_spans.append((run_start, run_end))
                run_start = run_end = None
        if run_start is not None:
            removed_spans.append((run_start, run_end))

    kept_segments: list[Segment] = []
    for seg in base.segments:
        if seg.state != state:
            kept_segments.append(seg)
            continue
        for start, end in subtract_spans(
            [(seg.interval.start, seg.interval.end)], removed_spans
        ):
            kept_segments.append(Segment(Interval(start, end), state, seg.provenance))

    # Gap recovery beyond bridging: fill high-probability gaps between the
    # remaining work spans (pause holes stay out by the p_pause < p_fill order).
    remaining = merge_spans(
        (seg.interval.start, seg.interval.end)
        for seg in kept_segments
        if seg.state == state
    )
    blocked = merge_spans(list(other_spans) + list(removed_spans) + list(remaining))
    fills: list[Segment] = []
    for (_, prev_end), (next_start, _) in zip(remaining, remaining[1:]):
        gap: Span = (prev_end, next_start)
        bins = _bin_range(gap, profile.bin_size, full_only=False)
        if bins and all(
            profile.probability(b.weekday(), idx) >= config.p_fill for b, idx in bins
        ):
            for start, end in subtract_spans([gap], blocked):
                fills.append(Segment(Interval(start, end), state, Provenance.RECOVERED))
                blocked = merge_spans(blocked + [(start, end)])

    segments = tuple(
        sorted(kept_segments + fills, key=lambda s: (s.interval.start, s.interval.end))
    )
    removed = tuple(
        RemovedSpan(Interval(start, end)) for start, end in merge_spans(removed_spans)
    )
    return ResolvedCoverage(segments=segments, removed=removed, strategy=base.strategy)


# ---------------------------------------------------------------------------
# weekly-hours anomaly detection


class AnomalyKind(str, Enum):
    OVERWORK = "overwork"
    UNDERWORK = "underwork"


@dataclass(frozen=True)
class AnomalyFlag:
    week: str
    metric: str
    value: float
    z_score: float
    kind: AnomalyKind


def detect_anomalies(
    weekly_hours: Sequence[tuple[str, float]], z_threshold: float = 1.5
) -> list[AnomalyFlag]:
    """Flag weeks whose hours deviate from the population by |z| >= threshold.

    Uses the population standard deviation; a zero deviation (all weeks
    equal) yields no flags.
    """
    if len(weekly_hours) < 4:
        raise InsufficientHistory(f"need at least 4 weeks, got {len(weekly_hours)}")
    values = [hours for _, hours in weekly_hours]
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    sigma = math.sqrt(variance)
    if sigma == 0.0:
        return []
    flags = []
    for week, hours in weekly_hours:
        z = (hours - mean) / sigma
        if abs(z) >= z_threshold:
            flags.append(
                AnomalyFlag(
                    week=week,
                    metric="weekly_hours",
                    value=hours,
                    z_score=z,
                    kind=AnomalyKind.OVERWORK if z > 0 else AnomalyKind.UNDERWORK,
                )
            )
    return flags


# ---------------------------------------------------------------------------
# mood tracking


@dataclass(frozen=True)
class MoodEvent:
    at: datetime
    score: int

    def __post_init__(self) -> None:
        if self.score not in range(1, 6):
            raise ValueError(f"mood score must be 1..5, got {self.score}")


def mood_rolling_mean(
    events: Sequence[MoodEvent], window_days: int = 7
) -> list[tuple[date, float]]:
    """Trailing mean mood per day; days with an empty window are omitted."""
    if window_days < 1:
        raise ValueError("window must cover at least one day")
    if not events:
        return []
    ordered = sorted(events, key=lambda e: e.at)
    first = ordered[0].at.date()
    last = ordered[-1].at.date()
    series = []
    day = first
    while day <= last:
        window_start = day - timedelta(days=window_days - 1)
        scores = [e.score for e in ordered if window_start <= e.at.date() <= day]
        if scores:
            series.append((day, sum(scores) / len(scores)))
        day += timedelta(days=1)
    return series
