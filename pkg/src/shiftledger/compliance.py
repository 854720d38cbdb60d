"""Working-time rule engine, overtime, unsociable hours, wage estimation.

The rule defaults (11h daily rest, 13h shift cap, 48h average week over 4
reference weeks, 20-minute break per 6h of continuous work) follow the EU
working-time directive family; every value is configurable and nothing is
hard-coded to a jurisdiction.

Rule semantics:

* daily rest — for every work-run start, the following rolling 24h window
  must contain one continuous non-work stretch of at least
  ``min_daily_rest``; time outside the evaluated period counts as rest,
  and windows without work are vacuously compliant.
* max shift — work runs (gaps shorter than ``continuity_gap`` fused) must
  not exceed ``max_shift`` wall time.
* weekly average — over every window of ``reference_weeks`` consecutive
  7-day blocks (counted from the period start, full blocks only), mean
  weekly hours must not exceed ``max_weekly_avg``.
* missing break — a work stretch containing no pause of at least
  ``break_length`` must stay shorter than ``break_after`` (warning).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time, timedelta
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Sequence

from shiftledger.timeline import (
    AT_WORK,
    Interval,
    ResolvedCoverage,
    Span,
    merge_spans,
)

WEEK = timedelta(days=7)
DAY = timedelta(days=1)


class InconsistentInputs(ValueError):
    """Wage inputs violate their mutual constraints."""


@dataclass(frozen=True)
class RuleSet:
    min_daily_rest: timedelta = timedelta(hours=11)
    max_shift: timedelta = timedelta(hours=13)
    max_weekly_avg: float = 48.0
    reference_weeks: int = 4
    break_after: timedelta = timedelta(hours=6)
    break_length: timedelta = timedelta(minutes=20)
    continuity_gap: timedelta = timedelta(minutes=15)

    def __post_init__(self) -> None:
        durations = ("min_daily_rest", "max_shift", "break_after", "break_length", "continuity_gap")
        for name in durations:
            if getattr(self, name) <= timedelta(0):
                raise ValueError(f"{name} must be positive")
        if self.max_weekly_avg <= 0 or self.reference_weeks < 1:
            raise ValueError("max_weekly_avg must be positive and reference_weeks >= 1")


class Severity(str, Enum):
    VIOLATION = "violation"
    WARNING = "warning"


class Rule(str, Enum):
    DAILY_REST = "daily_rest"
    MAX_SHIFT = "max_shift"
    WEEKLY_AVERAGE = "weekly_average"
    MISSING_BREAK = "missing_break"


@dataclass(frozen=True)
class ComplianceFinding:
    rule: Rule
    window: Interval
    observed: timedelta
    required: timedelta
    severity: Severity


def work_spans(coverage: ResolvedCoverage, state: str = AT_WORK) -> list[Span]:
    """Coalesced work spans of the coverage (abutting segments fused)."""
    return merge_spans(
        (seg.interval.start, seg.interval.end)
        for seg in coverage.segments
        if seg.state == state
    )


def fuse_runs(spans: Sequence[Span], max_gap: timedelta) -> list[Span]:
    """Fuse spans separated by gaps strictly shorter than ``max_gap``."""
    runs: list[Span] = []
    for start, end in merge_spans(spans):
        if runs and start - runs[-1][1] < max_gap:
            runs[-1] = (runs[-1][0], end)
        else:
            runs.append((start, end))
    return runs


def _longest_rest(spans: Sequence[Span], window: Span) -> timedelta:
    """Longest continuous non-work stretch inside the window."""
    w_start, w_end = window
    longest = timedelta(0)
    cursor = w_start
    for start, end in spans:
        if end <= w_start or start >= w_end:
            continue
        if start > cursor:
            longest = max(longest, min(start, w_end) - cursor)
        cursor = max(cursor, end)
    if cursor < w_end:
        longest = max(longest, w_end - cursor)
    return longest


def evaluate_rules(
    work: ResolvedCoverage, rules: RuleSet, period: Interval
) -> list[ComplianceFinding]:
    """Emit one finding per breached rule instance, ordered by rule then time."""
    spans = [
        (max(start, period.start), min(end, period.end))
        for start, end in work_spans(work)
        if start < period.end and end > period.start
    ]
    findings: list[ComplianceFinding] = []

    for anchor, _ in spans:
        window: Span = (anchor, anchor + DAY)
        rest = _longest_rest(spans, window)
        if rest < rules.min_daily_rest:
            findings.append(
                ComplianceFinding(
                    rule=Rule.DAILY_REST,
                    window=Interval(*window),
                    observed=rest,
                    required=rules.min_daily_rest,
                    severity=Severity.VIOLATION,
                )
            )

    for start, end in fuse_runs(spans, rules.continuity_gap):
        if end - start > rules.max_shift:
            findings.append(
                ComplianceFinding(
                    rule=Rule.MAX_SHIFT,
                    window=Interval(start, end),
                    observed=end - start,
                    required=rules.max_shift,
                    severity=Severity.VIOLATION,
                )
            )

    blocks: list[Span] = []
    block_start = period.start
    while block_start + WEEK <= period.end:
        blocks.append((block_start, block_start + WEEK))
        block_start += WEEK
    cap = timedelta(hours=rules.max_weekly_avg)
    for i in range(len(blocks) - rules.reference_weeks + 1):
        window_blocks = blocks[i : i + rules.reference_weeks]
        total = timedelta(0)
        for b_start, b_end in window_blocks:
            for s_start, s_end in spans:
                lo, hi = max(s_start, b_start), min(s_end, b_end)
                if lo < hi:
                    total += hi - lo
        mean = total / rules.reference_weeks
        if mean > cap:
            findings.append(
                ComplianceFinding(
                    rule=Rule.WEEKLY_AVERAGE,
                    window=Interval(window_blocks[0][0], window_blocks[-1][1]),
                    observed=mean,
                    required=cap,
                    severity=Severity.VIOLATION,
                )
            )

    for start, end in fuse_runs(spans, rules.break_length):
        if end - start >= rules.break_after:
            findings.append(
                ComplianceFinding(
                    rule=Rule.MISSING_BREAK,
                    window=Interval(start, end),
                    observed=end - start,
                    required=rules.break_after,
                    severity=Severity.WARNING,
                )
            )

    findings.sort(key=lambda f: (f.rule.value, f.window.start))
    return findings


def overtime_hours(worked: float, contracted: float) -> float:
    """Hours beyond contract, clamped at zero."""
    if worked < 0:
        raise InconsistentInputs("worked hours must be non-negative")
    return max(0.0, worked - contracted)


# ---------------------------------------------------------------------------
# unsociable hours


@dataclass(frozen=True)
class WeeklyWindow:
    """Recurring wall-clock window; wraps into the next day when end <= start.

    ``weekday`` is 0 = Monday.  ``WeeklyWindow(5, 00:00, 00:00)`` covers all
    of Saturday.
    """

    weekday: int
    start: time
    end: time

    def __post_init__(self) -> None:
        if self.weekday not in range(7):
            raise ValueError(f"weekday must be 0..6, got {self.weekday}")


def default_unsociable_windows() -> tuple[WeeklyWindow, ...]:
    nightly = tuple(WeeklyWindow(d, time(20, 0), time(7, 0)) for d in range(7))
    weekend = (WeeklyWindow(5, time(0, 0), time(0, 0)), WeeklyWindow(6, time(0, 0), time(0, 0)))
    return nightly + weekend


def _week_seconds(value: time, weekday: int) -> int:
    return weekday * 86400 + value.hour * 3600 + value.minute * 60 + value.second


WEEK_SECONDS = 7 * 86400


def weekly_second_spans(windows: Sequence[WeeklyWindow]) -> list[tuple[int, int]]:
    """Canonical disjoint second-of-week spans for a set of weekly windows."""
    raw: list[tuple[int, int]] = []
    for w in windows:
        start = _week_seconds(w.start, w.weekday)
        end = _week_seconds(w.end, w.weekday)
        if end <= start:
            end += 86400
        if end <= WEEK_SECONDS:
            raw.append((start, end))
        else:
            raw.append((start, WEEK_SECONDS))
            raw.append((0, end - WEEK_SECONDS))
    raw.sort()
    merged: list[tuple[int, int]] = []
    for start, end in raw:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def unsociable_hours(
    work: ResolvedCoverage, windows: Sequence[WeeklyWindow] | None = None
) -> timedelta:
    """Total work time inside the (unioned) weekly unsociable windows."""
    if windows is None:
        windows = default_unsociable_windows()
    pattern = weekly_second_spans(windows)
    total = timedelta(0)
    for start, end in work_spans(work):
        week_anchor = start - timedelta(
            days=start.weekday(),
            hours=start.hour,
            minutes=start.minute,
            seconds=start.second,
        )
        while week_anchor < end:
            for s, e in pattern:
                lo = max(start, week_anchor + timedelta(seconds=s))
                hi = min(end, week_anchor + timedelta(seconds=e))
                if lo < hi:
                    total += hi - lo
            week_anchor += WEEK
    return total


# ---------------------------------------------------------------------------
# wage


@dataclass(frozen=True)
class WageConfig:
    gross_hourly_rate: Decimal
    contracted_weekly_hours: float = 38.0
    overtime_multiplier: Decimal = Decimal("1.5")
    unsociable_supplement: Decimal = Decimal("0.2")
    unsociable_windows: tuple[WeeklyWindow, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "gross_hourly_rate", Decimal(str(self.gross_hourly_rate)))
        object.__setattr__(self, "overtime_multiplier", Decimal(str(self.overtime_multiplier)))
        object.__setattr__(self, "unsociable_supplement", Decimal(str(self.unsociable_supplement)))
        if not self.unsociable_windows:
            object.__setattr__(self, "unsociable_windows", default_unsociable_windows())
        if self.gross_hourly_rate <= 0:
            raise ValueError("gross_hourly_rate must be positive")
        if self.overtime_multiplier < 1:
            raise ValueError("overtime_multiplier must be at least 1")
        if self.unsociable_supplement < 0:
            raise ValueError("unsociable_supplement must be non-negative")


@dataclass(frozen=True)
class WageBreakdown:
    """Amounts in integer minor currency units (e.g. cents)."""

    base: int
    overtime_extra: int
    unsociable_extra: int
    total: int

    def amounts(self) -> dict[str, Decimal]:
        cent = Decimal("0.01")
        return {
            "base": self.base * cent,
            "overtime_extra": self.overtime_extra * cent,
            "unsociable_extra": self.unsociable_extra * cent,
            "total": self.total * cent,
        }


def _as_hours(value: float | int | Decimal | Fraction | timedelta) -> Fraction:
    if isinstance(value, timedelta):
        return Fraction(int(value.total_seconds()), 3600)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, Decimal):
        return Fraction(value)
    return Fraction(Decimal(str(value)))


def _round_half_up_minor(amount: Fraction) -> int:
    # amount is in major units; convert to minor units with half-up rounding
    q = amount * 100
    whole, remainder = divmod(q.numerator, q.denominator)
    return int(whole) + (1 if 2 * remainder >= q.denominator else 0)


def compute_wage(
    worked: float | Decimal | Fraction | timedelta,
    overtime: float | Decimal | Fraction | timedelta,
    unsociable: float | Decimal | Fraction | timedelta,
    cfg: WageConfig,
) -> WageBreakdown:
    """Exact wage arithmetic in integer minor units, rounded half-up per component.

    base = worked x rate; overtime pays rate x (multiplier - 1) on top;
    unsociable time attracts rate x supplement on top.
    """
    worked_h, overtime_h, unsociable_h = map(_as_hours, (worked, overtime, unsociable))
    if overtime_h > worked_h:
        raise InconsistentInputs("overtime exceeds worked hours")
    if unsociable_h > worked_h:
        raise InconsistentInputs("unsociable hours exceed worked hours")
    if min(worked_h, overtime_h, unsociable_h) < 0:
        raise InconsistentInputs("hours must be non-negative")
    rate = Fraction(cfg.gross_hourly_rate)
    base = _round_half_up_minor(worked_h * rate)
    overtime_extra = _round_half_up_minor(
        overtime_h * rate * (Fraction(cfg.overtime_multiplier) - 1)
    )
    unsociable_extra = _round_half_up_minor(
        unsociable_h * rate * Fraction(cfg.unsociable_supplement)
    )
    return WageBreakdown(
        base=base,
        overtime_extra=overtime_extra,
        unsociable_extra=unsociable_extra,
        total=base + overtime_extra + unsociable_extra,
    )
