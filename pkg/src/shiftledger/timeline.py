"""Interval algebra over state-labeled timing layers.

A worker's time is described by up to four layers of entries (default
schedule, provisional schedule, time tracking, validated record), each
carrying mutually exclusive states such as at_work / available / on_leave.
This module provides the disjoint normal form (coalescing) and the four
conflict-resolution strategies that collapse the layers into a single
coverage: union, union with gap bridging, intersection, and superseding
layer.  The presence-forecast strategy is dispatched to
:mod:`shiftledger.forecast`.

All operations are pure functions on immutable values; intervals are
half-open ``[start, end)`` at second precision, stored in UTC.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

if TYPE_CHECKING:
    from shiftledger.forecast import ForecastConfig, PresenceProfile

DEFAULT_BRIDGE_THRESHOLD = timedelta(minutes=30)

# Span = plain (start, end) pair used for the internal set arithmetic.
Span = tuple[datetime, datetime]


class TimelineError(ValueError):
    """Base class for timeline construction and resolution errors."""


class MixedStates(TimelineError):
    """Entries of more than one state passed where a single state is required."""


class EmptyTimeline(TimelineError):
    """Resolution requested on a timeline with no entries inside the period."""


class StateOverlap(TimelineError):
    """Two entries of different states overlap within one layer."""


class UnknownState(TimelineError):
    """A state name that is not part of the configured closed set."""


class UnknownLabel(TimelineError):
    """A label that is not in the configured list for its state."""


def ensure_point(value: datetime) -> datetime:
    """Normalize a time point: timezone-aware, UTC, exact second precision."""
    if value.tzinfo is None:
        raise TimelineError(f"naive datetime not allowed: {value!r}")
    value = value.astimezone(timezone.utc)
    if value.microsecond != 0:
        raise TimelineError(f"sub-second precision not allowed: {value!r}")
    return value


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open span ``[start, end)``; empty intervals are rejected."""

    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", ensure_point(self.start))
        object.__setattr__(self, "end", ensure_point(self.end))
        if self.start >= self.end:
            raise TimelineError(f"empty or inverted interval: {self.start} .. {self.end}")

    @property
    def duration(self) -> timedelta:
        return self.end - self.start

    def overlaps(self, other: Interval) -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, other: Interval) -> bool:
        return self.start <= other.start and other.end <= self.end

    def intersect(self, other: Interval) -> Interval | None:
        start = max(self.start, other.start)
        end = min(self.end, other.end)
        return Interval(start, end) if start < end else None


class Layer(str, Enum):
    """Input layers in ascending precedence order."""

    DEFAULT_SCHEDULE = "default_schedule"
    PROVISIONAL_SCHEDULE = "provisional_schedule"
    TIME_TRACKING = "time_tracking"
    VALIDATED_RECORD = "validated_record"

    @property
    def precedence(self) -> int:
        return _LAYER_RANK[self]


_LAYER_RANK: dict[Layer, int] = {layer: rank for rank, layer in enumerate(Layer)}


class Source(str, Enum):
    """Input modality an entry came from."""

    MANUAL = "manual"
    BADGING = "badging"
    DIGITAL_LOG = "digital_log"
    GEOFENCE = "geofence"
    FORECAST = "forecast"


class Provenance(str, Enum):
    """How a resolved segment was established."""

    OBSERVED = "observed"
    RECOVERED = "recovered"
    FORECAST = "forecast"


PAUSE_DETECTED = "pause_detected"

# Default closed state set with their collectively configured label lists.
DEFAULT_STATES: dict[str, tuple[str, ...]] = {
    "at_work": ("care", "education", "research", "administrative"),
    "available": ("on_call", "second_line"),
    "on_leave": ("annual_leave", "scientific_leave", "sickness_leave"),
}

AT_WORK = "at_work"

_TOKEN_JUNK = re.compile(r"[\s\-]+")


def normalize_token(raw: str) -> str:
    return _TOKEN_JUNK.sub("_", raw.strip().lower())


@dataclass(frozen=True)
class StateRegistry:
    """Closed set of mutually exclusive states, each with its label list.

    State and label names are matched after normalization (lower case,
    spaces and hyphens collapsed to underscores), so the interchange value
    ``"at work"`` resolves to ``at_work``.
    """

    labels: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_STATES)
    )

    @classmethod
    def default(cls) -> StateRegistry:
        return cls()

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(self.labels)

    def resolve_state(self, raw: str) -> str:
        name = normalize_token(raw)
        if name not in self.labels:
            raise UnknownState(f"unknown state {raw!r} (configured: {', '.join(self.labels)})")
        return name

    def resolve_label(self, state: str, raw: str | None) -> str | None:
        if raw is None or raw.strip() == "":
            return None
        name = normalize_token(raw)
        if name not in self.labels.get(state, ()):
            raise UnknownLabel(f"unknown label {raw!r} for state {state!r}")
        return name

    def validate_entry(self, entry: TimingEntry) -> None:
        state = self.resolve_state(entry.state)
        if state != entry.state:
            raise UnknownState(f"state {entry.state!r} is not in canonical form")
        self.resolve_label(state, entry.label)


_TAG_FORBIDDEN = (",", "|", "\n", "\r")


@dataclass(frozen=True)
class TimingEntry:
    """One state-bearing interval on a named layer."""

    interval: Interval
    state: str
    layer: Layer
    source: Source = Source.MANUAL
    label: str | None = None
    tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.state:
            raise TimelineError("entry state must be non-empty")
        object.__setattr__(self, "tags", frozenset(self.tags))
        for tag in self.tags:
            if not tag or any(ch in tag for ch in _TAG_FORBIDDEN):
                raise TimelineError(f"invalid tag {tag!r}")
        if self.label is not None and not self.label:
            raise TimelineError("label must be non-empty when present")


@dataclass(frozen=True)
class LayeredTimeline:
    """Per-worker layers of entries plus the resolution window.

    Entries must intersect the period; within one layer, entries of
    different states must not overlap (states are mutually exclusive at any
    point in time).  Entries straddling the period boundary are clipped
    during resolution.
    """

    worker_id: str
    period: Interval
    layers: Mapping[Layer, tuple[TimingEntry, ...]]

    def __post_init__(self) -> None:
        normalized: dict[Layer, tuple[TimingEntry, ...]] = {}
        for layer, entries in self.layers.items():
            ordered = tuple(sorted(entries, key=lambda e: (e.interval.start, e.interval.end)))
            for entry in ordered:
                if entry.layer is not layer:
                    raise TimelineError(
                        f"entry tagged {entry.layer.value} stored under {layer.value}"
                    )
                if not entry.interval.overlaps(self.period):
                    raise TimelineError(
                        f"entry {entry.interval.start}..{entry.interval.end} outside period"
                    )
            _check_mutual_exclusivity(layer, ordered)
            normalized[layer] = ordered
        object.__setattr__(self, "layers", normalized)

    @classmethod
    def build(
        cls, worker_id: str, period: Interval, entries: Iterable[TimingEntry]
    ) -> LayeredTimeline:
        """Group loose entries by their layer, keeping only those in the period."""
        layers: dict[Layer, list[TimingEntry]] = {}
        for entry in entries:
            if entry.interval.overlaps(period):
                layers.setdefault(entry.layer, []).append(entry)
        return cls(worker_id, period, {k: tuple(v) for k, v in layers.items()})


def _check_mutual_exclusivity(layer: Layer, ordered: Sequence[TimingEntry]) -> None:
    # Within one layer, overlapping entries must agree on state.
    active_end: datetime | None = None
    active_state: str | None = None
    for entry in ordered:
        if active_end is not None and entry.interval.start < active_end:
            if entry.state != active_state:
                raise StateOverlap(
                    f"states {active_state!r} and {entry.state!r} overlap in layer {layer.value}"
                )
            active_end = max(active_end, entry.interval.end)
        else:
            active_end = entry.interval.end
            active_state = entry.state


class StrategyKind(str, Enum):
    UNION = "union"
    UNION_MERGING = "union_merging"
    INTERSECTION = "intersection"
    SUPERSEDE = "supersede"
    ML_FORECAST = "ml_forecast"


@dataclass(frozen=True)
class ResolutionStrategy:
    """One of the four automated resolution options, with its parameters."""

    kind: StrategyKind
    bridge_threshold: timedelta | None = None
    profile: "PresenceProfile | None" = None
    forecast_config: "ForecastConfig | None" = None

    def __post_init__(self) -> None:
        if self.kind is StrategyKind.UNION_MERGING:
            if self.bridge_threshold is None or self.bridge_threshold <= timedelta(0):
                raise TimelineError("bridge_threshold must be positive")
        if self.kind is StrategyKind.ML_FORECAST and self.profile is None:
            raise TimelineError("ml_forecast requires a presence profile")

    @classmethod
    def union(cls) -> ResolutionStrategy:
        return cls(StrategyKind.UNION)

    @classmethod
    def union_merging(
        cls, bridge_threshold: timedelta = DEFAULT_BRIDGE_THRESHOLD
    ) -> ResolutionStrategy:
        return cls(StrategyKind.UNION_MERGING, bridge_threshold=bridge_threshold)

    @classmethod
    def intersection(cls) -> ResolutionStrategy:
        return cls(StrategyKind.INTERSECTION)

    @classmethod
    def supersede(cls) -> ResolutionStrategy:
        return cls(StrategyKind.SUPERSEDE)

    @classmethod
    def ml_forecast(
        cls, profile: "PresenceProfile", config: "ForecastConfig | None" = None
    ) -> ResolutionStrategy:
        return cls(StrategyKind.ML_FORECAST, profile=profile, forecast_config=config)


@dataclass(frozen=True)
class Segment:
    interval: Interval
    state: str
    provenance: Provenance = Provenance.OBSERVED


@dataclass(frozen=True)
class RemovedSpan:
    interval: Interval
    reason: str = PAUSE_DETECTED


@dataclass(frozen=True)
class ResolvedCoverage:
    """Disjoint, sorted segments produced by one resolution strategy."""

    segments: tuple[Segment, ...]
    removed: tuple[RemovedSpan, ...]
    strategy: ResolutionStrategy

    def __post_init__(self) -> None:
        segs = tuple(sorted(self.segments, key=lambda s: (s.interval.start, s.interval.end)))
        object.__setattr__(self, "segments", segs)
        rem = tuple(sorted(self.removed, key=lambda r: (r.interval.start, r.interval.end)))
        object.__setattr__(self, "removed", rem)
        previous_end: datetime | None = None
        for seg in segs:
            if previous_end is not None and seg.interval.start < previous_end:
                raise TimelineError("coverage segments must be pairwise disjoint")
            previous_end = seg.interval.end
        for gone in rem:
            for seg in segs:
                if gone.interval.overlaps(seg.interval):
                    raise TimelineError("removed spans must not intersect segments")

    def spans(self, state: str | None = None) -> list[Interval]:
        return [s.interval for s in self.segments if state is None or s.state == state]

    def states(self) -> tuple[str, ...]:
        return tuple(sorted({s.state for s in self.segments}))


def coverage_duration(coverage: ResolvedCoverage, state: str) -> timedelta:
    """Total covered time for one state; zero when the state is absent."""
    total = timedelta(0)
    for seg in coverage.segments:
        if seg.state == state:
            total += seg.interval.duration
    return total


# ---------------------------------------------------------------------------
# span arithmetic (disjoint, sorted (start, end) lists)


def merge_spans(spans: Iterable[Span]) -> list[Span]:
    """Fuse overlapping or exactly-abutting spans into disjoint sorted form."""
    ordered = sorted(spans)
    out: list[Span] = []
    for start, end in ordered:
        if out and start <= out[-1][1]:
            if end > out[-1][1]:
                out[-1] = (out[-1][0], end)
        else:
            out.append((start, end))
    return out


def subtract_spans(spans: Sequence[Span], holes: Sequence[Span]) -> list[Span]:
    holes = merge_spans(holes)
    out: list[Span] = []
    for start, end in merge_spans(spans):
        cursor = start
        for h_start, h_end in holes:
            if h_end <= cursor:
                continue
            if h_start >= end:
                break
            if h_start > cursor:
                out.append((cursor, h_start))
            cursor = max(cursor, h_end)
            if cursor >= end:
                break
        if cursor < end:
            out.append((cursor, end))
    return out


def intersect_spans(a: Sequence[Span], b: Sequence[Span]) -> list[Span]:
    out: list[Span] = []
    i = j = 0
    a = merge_spans(a)
    b = merge_spans(b)
    while i < len(a) and j < len(b):
        start = max(a[i][0], b[j][0])
        end = min(a[i][1], b[j][1])
        if start < end:
            out.append((start, end))
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return out


# ---------------------------------------------------------------------------
# coalescing


def coalesce(entries: Sequence[TimingEntry]) -> list[TimingEntry]:
    """Fuse overlapping or abutting same-state entries into disjoint form.

    Attribute conflicts on fused entries follow layer precedence: the label
    comes from the highest-precedence labeled constituent (earliest start on
    ties), tags are unioned, and the fused entry sits on the
    highest-precedence constituent layer.
    """
    if not entries:
        return []
    states = {e.state for e in entries}
    if len(states) > 1:
        raise MixedStates(f"cannot coalesce states {sorted(states)}")
    ordered = sorted(entries, key=lambda e: (e.interval.start, e.interval.end))
    groups: list[list[TimingEntry]] = []
    group_end: datetime | None = None
    for entry in ordered:
        if groups and group_end is not None and entry.interval.start <= group_end:
            groups[-1].append(entry)
            group_end = max(group_end, entry.interval.end)
        else:
            groups.append([entry])
            group_end = entry.interval.end
    return [_fuse_group(group) for group in groups]


def _fuse_group(group: list[TimingEntry]) -> TimingEntry:
    if len(group) == 1:
        return group[0]
    start = min(e.interval.start for e in group)
    end = max(e.interval.end for e in group)
    by_rank = sorted(group, key=lambda e: (-e.layer.precedence, e.interval.start))
    labeled = [e for e in by_rank if e.label is not None]
    winner = labeled[0] if labeled else by_rank[0]
    tags = frozenset().union(*(e.tags for e in group))
    return TimingEntry(
        interval=Interval(start, end),
        state=group[0].state,
        layer=by_rank[0].layer,
        source=winner.source,
        label=winner.label,
        tags=tags,
    )


# ---------------------------------------------------------------------------
# resolution strategies


def _clipped_layers(timeline: LayeredTimeline) -> dict[Layer, list[TimingEntry]]:
    out: dict[Layer, list[TimingEntry]] = {}
    for layer, entries in timeline.layers.items():
        clipped = []
        for entry in entries:
            section = entry.interval.intersect(timeline.period)
            if section is not None:
                clipped.append(
                    entry if section == entry.interval else replace(entry, interval=section)
                )
        if clipped:
            out[layer] = clipped
    return out


def _masked_state_spans(
    clipped: Mapping[Layer, Sequence[TimingEntry]],
) -> dict[Layer, dict[str, list[Span]]]:
    """Per-layer, per-state spans with cross-layer state conflicts resolved.

    Where a higher-precedence layer asserts a different state, the lower
    layer's time is masked out before any set operation.
    """
    raw: dict[Layer, dict[str, list[Span]]] = {}
    for layer, entries in clipped.items():
        per_state: dict[str, list[Span]] = {}
        for entry in entries:
            per_state.setdefault(entry.state, []).append(
                (entry.interval.start, entry.interval.end)
            )
        raw[layer] = {state: merge_spans(spans) for state, spans in per_state.items()}

    masked: dict[Layer, dict[str, list[Span]]] = {}
    for layer, per_state in raw.items():
        masked[layer] = {}
        for state, spans in per_state.items():
            holes: list[Span] = []
            for other_layer, other_states in raw.items():
                if other_layer.precedence <= layer.precedence:
                    continue
                for other_state, other_spans in other_states.items():
                    if other_state != state:
                        holes.extend(other_spans)
            masked[layer][state] = subtract_spans(spans, holes)
    return masked


def _spans_to_segments(
    per_state: Mapping[str, Sequence[Span]], provenance: Provenance = Provenance.OBSERVED
) -> tuple[Segment, ...]:
    segments = [
        Segment(Interval(start, end), state, provenance)
        for state in sorted(per_state)
        for start, end in merge_spans(per_state[state])
    ]
    segments.sort(key=lambda s: s.interval.start)
    return tuple(segments)


def layer_union(timeline: LayeredTimeline) -> ResolvedCoverage:
    """Per state, the coalesced union of all layers' time."""
    clipped = _clipped_layers(timeline)
    if not clipped:
        raise EmptyTimeline(f"no entries in period for worker {timeline.worker_id!r}")
    masked = _masked_state_spans(clipped)
    per_state: dict[str, list[Span]] = {}
    for layer_spans in masked.values():
        for state, spans in layer_spans.items():
            per_state.setdefault(state, []).extend(spans)
    return ResolvedCoverage(
        segments=_spans_to_segments(per_state),
        removed=(),
        strategy=ResolutionStrategy.union(),
    )


def layer_union_merging(
    timeline: LayeredTimeline,
    bridge_threshold: timedelta = DEFAULT_BRIDGE_THRESHOLD,
) -> ResolvedCoverage:
    """Union, then bridge sub-threshold gaps between same-state segments.

    Bridged time is marked with provenance ``recovered``.  A recovered span
    never overlaps observed time of another state (nor earlier recoveries;
    states are processed in sorted order).
    """
    if bridge_threshold <= timedelta(0):
        raise TimelineError("bridge_threshold must be positive")
    base = layer_union(timeline)
    by_state: dict[str, list[Span]] = {}
    for seg in base.segments:
        by_state.setdefault(seg.state, []).append((seg.interval.start, seg.interval.end))
    taken: list[Span] = merge_spans(
        span for spans in by_state.values() for span in spans
    )
    recovered: list[Segment] = []
    for state in sorted(by_state):
        spans = merge_spans(by_state[state])
        for (_, prev_end), (next_start, _) in zip(spans, spans[1:]):
            gap = next_start - prev_end
            if timedelta(0) < gap <= bridge_threshold:
                for start, end in subtract_spans([(prev_end, next_start)], taken):
                    recovered.append(Segment(Interval(start, end), state, Provenance.RECOVERED))
                    taken = merge_spans(taken + [(start, end)])
    strategy = ResolutionStrategy.union_merging(bridge_threshold)
    segments = tuple(
        sorted(base.segments + tuple(recovered), key=lambda s: s.interval.start)
    )
    return ResolvedCoverage(segments=segments, removed=(), strategy=strategy)


def layer_intersection(timeline: LayeredTimeline) -> ResolvedCoverage:
    """Per state, time covered by every non-empty layer.

    Empty layers carry no information and are ignored; a single populated
    layer is returned as-is (degenerate case).
    """
    clipped = _clipped_layers(timeline)
    if not clipped:
        raise EmptyTimeline(f"no entries in period for worker {timeline.worker_id!r}")
    masked = _masked_state_spans(clipped)
    states = sorted({state for per_state in masked.values() for state in per_state})
    per_state: dict[str, list[Span]] = {}
    for state in states:
        acc: list[Span] | None = None
        for layer_spans in masked.values():
            spans = layer_spans.get(state, [])
            acc = list(spans) if acc is None else intersect_spans(acc, spans)
            if not acc:
                break
        per_state[state] = acc or []
    return ResolvedCoverage(
        segments=_spans_to_segments(per_state),
        removed=(),
        strategy=ResolutionStrategy.intersection(),
    )


def layer_supersede(timeline: LayeredTimeline) -> ResolvedCoverage:
    """The highest-precedence populated layer replaces all others."""
    clipped = _clipped_layers(timeline)
    if not clipped:
        raise EmptyTimeline(f"no entries in period for worker {timeline.worker_id!r}")
    top = max(clipped, key=lambda layer: layer.precedence)
    per_state: dict[str, list[Span]] = {}
    for entry in clipped[top]:
        per_state.setdefault(entry.state, []).append(
            (entry.interval.start, entry.interval.end)
        )
    return ResolvedCoverage(
        segments=_spans_to_segments(per_state),
        removed=(),
        strategy=ResolutionStrategy.supersede(),
    )


def resolve(timeline: LayeredTimeline, strategy: ResolutionStrategy) -> ResolvedCoverage:
    """Dispatch to the strategy's resolution operation."""
    if strategy.kind is StrategyKind.UNION:
        return layer_union(timeline)
    if strategy.kind is StrategyKind.UNION_MERGING:
        assert strategy.bridge_threshold is not None
        return layer_union_merging(timeline, strategy.bridge_threshold)
    if strategy.kind is StrategyKind.INTERSECTION:
        return layer_intersection(timeline)
    if strategy.kind is StrategyKind.SUPERSEDE:
        return layer_supersede(timeline)
    # Import here: forecast builds on this module.
    from shiftledger import forecast

    assert strategy.profile is not None
    config = strategy.forecast_config or forecast.ForecastConfig()
    coverage = forecast.forecast_resolve(timeline, strategy.profile, config)
    return replace(coverage, strategy=strategy)
